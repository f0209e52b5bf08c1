#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>

#include "json.hpp"
#include "vrw/io.hpp"

namespace fs = std::filesystem;
using namespace vrw;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; returns exit code and stdout.
Run vrw_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + VRW_CLI_PATH + "\" " + args + " 2>/dev/null";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("vrw-cli-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string q(const std::string& s) { return "\"" + s + "\""; }

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double metric(const std::string& out, const std::string& key) {
  std::istringstream in(out);
  std::string k;
  double v = 0.0;
  while (in >> k >> v) {
    if (k == key) return v;
  }
  FAIL("metric not printed: " << key);
  return 0.0;
}

const std::string kConfig = std::string(VRW_SOURCE_DIR) + "/configs/default.json";

}  // namespace

TEST_CASE("synth, propagate and eval run end to end from the shipped config") {
  TempDir dir;
  REQUIRE(vrw_cli("synth --seed 0 --count 1 --out-dir " + q(dir.path.string())).code == 0);
  const std::string scene = dir / "scene-0000";

  const auto prop = vrw_cli("propagate --image " + q(scene + ".image.vrw") + " --labels " + q(scene + ".labels.json") +
                            " --config " + q(kConfig) + " --out " + q(dir / "field.vrw"));
  REQUIRE(prop.code == 0);
  const auto summary = nlohmann::json::parse(prop.out);
  CHECK(summary["channels"] == 3);

  const Raster field = read_raster(dir / "field.vrw");
  REQUIRE(field.channels == 3);
  CHECK(summary["reachable"] == int(field.pixels()));
  double worst = 0.0;
  for (std::size_t p = 0; p < field.pixels(); ++p) {
    worst = std::max(worst, std::abs(double(field.at(p, 0)) + double(field.at(p, 1)) - 1.0));
  }
  CHECK(worst < 1e-6);

  const auto ev = vrw_cli("eval --pred " + q(dir / "field.vrw") + " --gt " + q(scene + ".mask.vrw") + " --out " +
                          q(dir / "report.json"));
  REQUIRE(ev.code == 0);
  const double dice = metric(ev.out, "dice");
  CHECK(dice > 0.5);
  CHECK(metric(ev.out, "ece") < 0.5);
  const auto report = nlohmann::json::parse(read_text_file(dir / "report.json"));
  CHECK(report["summary"]["dice"]["mean"].get<double>() == doctest::Approx(dice).epsilon(1e-5));
}

TEST_CASE("eval of a mask against itself prints dice 1") {
  TempDir dir;
  REQUIRE(vrw_cli("synth --seed 3 --count 1 --out-dir " + q(dir.path.string())).code == 0);
  const std::string mask = dir / "scene-0003.mask.vrw";
  const auto ev = vrw_cli("eval --pred " + q(mask) + " --gt " + q(mask));
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("dice 1.000000\n") != std::string::npos);
}

TEST_CASE("propagate output is bit-identical across invocations") {
  TempDir dir;
  REQUIRE(vrw_cli("synth --seed 12 --count 1 --out-dir " + q(dir.path.string())).code == 0);
  const std::string scene = dir / "scene-0012";
  for (const char* name : {"a.vrw", "b.vrw"}) {
    REQUIRE(vrw_cli("propagate --image " + q(scene + ".image.vrw") + " --labels " + q(scene + ".labels.json") +
                    " --out " + q(dir / name))
                .code == 0);
  }
  CHECK(bytes(dir / "a.vrw") == bytes(dir / "b.vrw"));
}

TEST_CASE("raster and label files written by synth read back to identical bytes") {
  TempDir dir;
  REQUIRE(vrw_cli("synth --seed 21 --count 1 --out-dir " + q(dir.path.string())).code == 0);
  const std::string scene = dir / "scene-0021";

  const Raster image = read_raster(scene + ".image.vrw");
  write_raster(dir / "copy.vrw", image);
  CHECK(bytes(dir / "copy.vrw") == bytes(scene + ".image.vrw"));

  const auto labels = read_labels(scene + ".labels.json", int(image.width), int(image.height));
  write_labels(dir / "copy.labels.json", labels, int(image.width));
  CHECK(bytes(dir / "copy.labels.json") == bytes(scene + ".labels.json"));
}

TEST_CASE("external cue maps are accepted and must come in pairs") {
  TempDir dir;
  REQUIRE(vrw_cli("synth --seed 1 --count 1 --out-dir " + q(dir.path.string())).code == 0);
  const std::string scene = dir / "scene-0001";
  const Raster image = read_raster(scene + ".image.vrw");
  Raster boundary{image.width, image.height, 1, std::vector<float>(image.pixels(), 0.0f)};
  Raster vessel{image.width, image.height, 1, std::vector<float>(image.pixels(), 1.0f)};
  write_raster(dir / "b.vrw", boundary);
  write_raster(dir / "v.vrw", vessel);
  const std::string base =
      "propagate --image " + q(scene + ".image.vrw") + " --labels " + q(scene + ".labels.json") + " --out " + q(dir / "f.vrw");
  CHECK(vrw_cli(base + " --cues-boundary " + q(dir / "b.vrw") + " --cues-vessel " + q(dir / "v.vrw")).code == 0);
  CHECK(vrw_cli(base + " --cues-boundary " + q(dir / "b.vrw")).code == 2);
  vessel.data[0] = 2.0f;
  write_raster(dir / "v.vrw", vessel);
  CHECK(vrw_cli(base + " --cues-boundary " + q(dir / "b.vrw") + " --cues-vessel " + q(dir / "v.vrw")).code == 2);
}

TEST_CASE("train writes a checkpoint and log that eval and propagate consume") {
  TempDir dir;
  REQUIRE(vrw_cli("synth --seed 0 --count 2 --out-dir " + q(dir / "data")).code == 0);
  REQUIRE(vrw_cli("train --data-dir " + q(dir / "data") + " --config " + q(kConfig) + " --steps 3 --checkpoint-out " +
                  q(dir / "model.json"))
              .code == 0);
  const auto ck = read_checkpoint(dir / "model.json");
  CHECK(ck.steps == 3);
  std::ifstream log(dir / "model.json.log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    CHECK(nlohmann::json::parse(line)["step"] == lines);
    ++lines;
  }
  CHECK(lines == 3);

  const auto ev = vrw_cli("eval --data-dir " + q(dir / "data") + " --checkpoint " + q(dir / "model.json"));
  REQUIRE(ev.code == 0);
  CHECK(metric(ev.out, "images") == 2);
  CHECK(vrw_cli("propagate --image " + q(dir / "data/scene-0000.image.vrw") + " --labels " +
                q(dir / "data/scene-0000.labels.json") + " --checkpoint " + q(dir / "model.json") + " --out " +
                q(dir / "f.vrw"))
            .code == 0);

  REQUIRE(vrw_cli("train --data-dir " + q(dir / "data") + " --steps 2 --ablation freezeCues --checkpoint-out " +
                  q(dir / "frozen.json"))
              .code == 0);
  CHECK(read_checkpoint(dir / "frozen.json").ablation.freeze_cues);
  CHECK(vrw_cli("train --data-dir " + q(dir / "data") + " --steps 2 --ablation bogus --checkpoint-out " +
                q(dir / "x.json"))
            .code == 2);
}

TEST_CASE("exit codes: 2 for invalid input, 3 for solver failure") {
  TempDir dir;
  REQUIRE(vrw_cli("synth --seed 5 --count 1 --out-dir " + q(dir.path.string())).code == 0);
  const std::string scene = dir / "scene-0005";
  const std::string base = "propagate --image " + q(scene + ".image.vrw") + " --labels " + q(scene + ".labels.json") +
                           " --out " + q(dir / "f.vrw");

  CHECK(vrw_cli("propagate --image " + q(dir / "missing.vrw") + " --labels " + q(scene + ".labels.json") + " --out " +
                q(dir / "f.vrw"))
            .code == 2);
  CHECK(vrw_cli("propagate --image " + q(scene + ".image.vrw")).code == 2);
  CHECK(vrw_cli("no-such-command").code == 2);

  auto cfg = nlohmann::json::parse(read_text_file(kConfig));
  cfg["loss"]["unknownKey"] = 1;
  write_text_file(dir / "unknown.json", cfg.dump());
  CHECK(vrw_cli(base + " --config " + q(dir / "unknown.json")).code == 2);

  cfg = nlohmann::json::parse(read_text_file(kConfig));
  cfg["transition"]["mu"] = 1.5;
  write_text_file(dir / "range.json", cfg.dump());
  CHECK(vrw_cli(base + " --config " + q(dir / "range.json")).code == 2);

  write_text_file(dir / "bad.labels.json", "{\"numLabels\": 2, \"entries\": [{\"x\": 999, \"y\": 0, \"label\": 0}]}");
  CHECK(vrw_cli("propagate --image " + q(scene + ".image.vrw") + " --labels " + q(dir / "bad.labels.json") + " --out " +
                q(dir / "f.vrw"))
            .code == 2);

  cfg = nlohmann::json::parse(read_text_file(kConfig));
  cfg["solver"]["method"] = "cg";
  cfg["solver"]["maxIters"] = 1;
  write_text_file(dir / "starved.json", cfg.dump());
  CHECK(vrw_cli(base + " --config " + q(dir / "starved.json")).code == 3);
}

TEST_CASE("shipped benchmark regenerates bit-identically") {
  TempDir dir;
  REQUIRE(vrw_cli("synth --seed 0 --count 30 --out-dir " + q(dir.path.string())).code == 0);
  const fs::path shipped = fs::path(VRW_SOURCE_DIR) / "data/benchmark";
  int compared = 0;
  for (const auto& e : fs::directory_iterator(shipped)) {
    const fs::path fresh = dir.path / e.path().filename();
    INFO(e.path().filename().string());
    REQUIRE(fs::exists(fresh));
    CHECK(bytes(e.path()) == bytes(fresh));
    ++compared;
  }
  CHECK(compared == 120);
  CHECK(std::distance(fs::directory_iterator(dir.path), fs::directory_iterator{}) == 120);
}
