#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "vrw/io.hpp"
#include "vrw/service.hpp"

using namespace vrw;
using json = nlohmann::json;

namespace {

Image test_image(int w = 24, int h = 20) {
  Image img(w, h, 0.8);
  for (int x = 0; x < w; ++x) img(x, h / 2) = 0.3;
  return img;
}

std::string raster_body(const Image& img) {
  std::ostringstream out;
  write_raster(out, raster_from_image(img));
  return out.str();
}

Raster decode(const std::string& bytes) {
  std::istringstream in(bytes);
  return read_raster(in);
}

std::string create(AnnotationService& svc, const Image& img = test_image()) {
  const auto r = svc.create_session(raster_body(img));
  REQUIRE(r.status == 201);
  return json::parse(r.body)["sessionId"].get<std::string>();
}

json body(const ApiResponse& r) { return json::parse(r.body); }

std::string seed(int x, int y, int label, const char* kind = "seed") {
  return json{{"x", x}, {"y", y}, {"label", label}, {"kind", kind}}.dump();
}

std::string add(const std::string& entries) { return R"({"add": [)" + entries + "]}"; }

}  // namespace

TEST_CASE("create, label, propagate: the probability raster sums to one per pixel") {
  AnnotationService svc({});
  const auto created = svc.create_session(raster_body(test_image()));
  CHECK(created.status == 201);
  const auto info = body(created);
  CHECK(info["width"] == 24);
  CHECK(info["height"] == 20);
  const std::string id = info["sessionId"];

  auto r = svc.update_labels(id, add(seed(2, 10, 1) + "," + seed(12, 2, 0)));
  REQUIRE(r.status == 200);
  CHECK(body(r)["revision"] == 1);

  r = svc.propagate(id);
  REQUIRE(r.status == 200);
  const auto prop = body(r);
  CHECK(prop["revision"] == 1);
  const auto probs = svc.raster(id, prop["probsRef"]);
  REQUIRE(probs.status == 200);
  CHECK(probs.content_type == "application/octet-stream");
  const auto raster = decode(probs.body);
  CHECK(raster.channels == 2);
  for (std::size_t p = 0; p < raster.pixels(); ++p) {
    CHECK(std::abs(double(raster.at(p, 0)) + raster.at(p, 1) - 1.0) < 1e-6);
  }
  const auto entropy = svc.raster(id, prop["entropyRef"]);
  REQUIRE(entropy.status == 200);
  CHECK(decode(entropy.body).channels == 1);
}

TEST_CASE("adding then removing a label restores the earlier result bit-exactly") {
  AnnotationService svc({});
  const auto id = create(svc);
  svc.update_labels(id, add(seed(2, 10, 1) + "," + seed(12, 2, 0) + "," + seed(20, 18, 0)));
  auto p1 = body(svc.propagate(id));
  const std::string before = svc.raster(id, p1["probsRef"]).body;

  CHECK(svc.update_labels(id, add(seed(15, 10, 1))).status == 200);
  auto p2 = body(svc.propagate(id));
  CHECK(svc.raster(id, p2["probsRef"]).body != before);

  const auto r = svc.update_labels(id, R"({"remove": [{"x": 15, "y": 10}]})");
  CHECK(body(r)["revision"] == 3);
  auto p3 = body(svc.propagate(id));
  CHECK(p3["revision"] == 3);
  CHECK(svc.raster(id, p3["probsRef"]).body == before);
  // the old ref is no longer served
  CHECK(svc.raster(id, p1["probsRef"]).status == 404);
}

TEST_CASE("suggestions are unlabeled pixels in non-increasing entropy order") {
  AnnotationService svc({});
  const auto id = create(svc);
  CHECK(svc.suggest(id).status == 409);
  svc.update_labels(id, add(seed(2, 10, 1) + "," + seed(12, 2, 0)));
  svc.propagate(id);
  const auto r = svc.suggest(id, "25");
  REQUIRE(r.status == 200);
  const auto px = body(r)["pixels"];
  REQUIRE(px.size() == 25);
  for (std::size_t i = 1; i < px.size(); ++i) {
    CHECK(px[i]["entropy"].get<double>() <= px[i - 1]["entropy"].get<double>());
  }
  for (const auto& p : px) CHECK_FALSE(((p["x"] == 2 && p["y"] == 10) || (p["x"] == 12 && p["y"] == 2)));
  CHECK(svc.suggest(id, "0").status == 400);
  CHECK(svc.suggest(id, "abc").status == 400);
}

TEST_CASE("error statuses: unknown session, malformed bodies, no labels") {
  AnnotationService svc({});
  CHECK(svc.propagate("nope").status == 404);
  CHECK(svc.update_labels("nope", "{}").status == 404);
  CHECK(svc.raster("nope", "probs-0").status == 404);
  CHECK(svc.suggest("nope").status == 404);
  CHECK(svc.remove_session("nope").status == 404);

  CHECK(svc.create_session("garbage").status == 400);
  CHECK(svc.create_session(raster_body(test_image()), "1").status == 400);
  CHECK(svc.create_session(raster_body(test_image()), "x").status == 400);

  const auto id = create(svc);
  const auto conflict = svc.propagate(id);
  CHECK(conflict.status == 409);
  CHECK(body(conflict)["error"].get<std::string>().find("no absorbing states") != std::string::npos);

  auto field_of = [&](const std::string& b) {
    const auto r = svc.update_labels(id, b);
    CHECK(r.status == 400);
    return body(r).value("field", std::string());
  };
  CHECK(field_of("{not json") == "body");
  CHECK(field_of(R"({"added": []})") == "added");
  CHECK(field_of(R"({"add": {}})") == "add");
  CHECK(field_of(add(R"({"x": 99, "y": 0, "label": 1})")) == "add[0].x");
  CHECK(field_of(add(R"({"x": 0, "y": -1, "label": 1})")) == "add[0].y");
  CHECK(field_of(add(R"({"x": 0, "y": 0, "label": 5})")) == "add[0].label");
  CHECK(field_of(add(R"({"x": 0, "y": 0})")) == "add[0].label");
  CHECK(field_of(add(R"({"x": 0, "y": 0, "label": 1, "kind": "dot"})")) == "add[0].kind");
  CHECK(field_of(add(R"({"x": "0", "y": 0, "label": 1})")) == "add[0].x");
  CHECK(field_of(R"({"remove": [{"x": 0}]})") == "remove[0].y");
  // conflicting labels on one pixel leave the session untouched
  CHECK(svc.update_labels(id, add(seed(1, 1, 0) + "," + seed(1, 1, 1))).status == 400);
  CHECK(body(svc.update_labels(id, R"({})"))["revision"] == 0);
  CHECK(svc.raster(id, "probs-0").status == 404);

  CHECK(svc.remove_session(id).status == 200);
  CHECK(svc.propagate(id).status == 404);
}

TEST_CASE("PGM uploads and custom label counts are accepted") {
  AnnotationService svc({});
  std::string pgm = "P5\n4 3\n255\n";
  for (int i = 0; i < 12; ++i) pgm.push_back(char(i * 20));
  const auto r = svc.create_session(pgm, "3");
  REQUIRE(r.status == 201);
  CHECK(body(r)["numLabels"] == 3);
  const std::string id = body(r)["sessionId"];
  CHECK(svc.update_labels(id, add(seed(0, 0, 2))).status == 200);
}

TEST_CASE("idle sessions are evicted after the timeout") {
  auto now = std::chrono::steady_clock::time_point{};
  ServiceConfig cfg;
  cfg.idle_timeout = std::chrono::minutes(30);
  AnnotationService svc(cfg, [&] { return now; });
  const auto a = create(svc);
  now += std::chrono::minutes(20);
  const auto b = create(svc);
  now += std::chrono::minutes(20);
  CHECK(svc.evict_idle() == 1);
  CHECK(svc.propagate(a).status == 404);
  CHECK(svc.update_labels(b, add(seed(0, 0, 1))).status == 200);
  now += std::chrono::minutes(29);
  CHECK(svc.session_count() == 1);
  now += std::chrono::minutes(2);
  CHECK(svc.evict_idle() == 1);
  CHECK(svc.session_count() == 0);
}

TEST_CASE("sessions stay isolated under interleaved concurrent requests") {
  AnnotationService svc({});
  constexpr int kSessions = 4;
  std::vector<std::string> ids;
  for (int i = 0; i < kSessions; ++i) ids.push_back(create(svc));
  std::atomic<int> failures{0};
  std::vector<std::thread> workers;
  for (int i = 0; i < kSessions; ++i) {
    workers.emplace_back([&, i] {
      // session i gets i + 1 vessel seeds on row 10 and one background seed
      for (int k = 0; k <= i; ++k) {
        if (svc.update_labels(ids[i], add(seed(2 + 3 * k, 10, 1))).status != 200) ++failures;
        if (svc.propagate(ids[i]).status != 200) ++failures;
      }
      if (svc.update_labels(ids[i], add(seed(12, 1, 0))).status != 200) ++failures;
      if (svc.propagate(ids[i]).status != 200) ++failures;
    });
  }
  for (auto& t : workers) t.join();
  CHECK(failures == 0);
  for (int i = 0; i < kSessions; ++i) {
    const auto p = body(svc.propagate(ids[i]));
    CHECK(p["revision"] == i + 2);
    // the same labels in a fresh session give the same raster
    const auto fresh = create(svc);
    std::string entries;
    for (int k = 0; k <= i; ++k) entries += seed(2 + 3 * k, 10, 1) + ",";
    entries += seed(12, 1, 0);
    svc.update_labels(fresh, add(entries));
    const auto q = body(svc.propagate(fresh));
    CHECK(svc.raster(ids[i], p["probsRef"]).body == svc.raster(fresh, q["probsRef"]).body);
  }
}

TEST_CASE("HTTP surface: routes, CORS and static files") {
  const auto dir = std::filesystem::temp_directory_path() / "vrw_test_static";
  std::filesystem::create_directories(dir);
  write_text_file(dir / "index.html", "<html>ui</html>");

  AnnotationService svc({});
  httplib::Server server;
  svc.mount(server, dir.string());
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto res = cli.Post("/sessions", raster_body(test_image()), "application/octet-stream");
  REQUIRE(res);
  CHECK(res->status == 201);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  const std::string id = json::parse(res->body)["sessionId"];

  res = cli.Post("/sessions/" + id + "/propagate", "", "application/json");
  CHECK(res->status == 409);
  res = cli.Post("/sessions/" + id + "/labels", add(seed(2, 10, 1) + "," + seed(12, 2, 0)), "application/json");
  CHECK(res->status == 200);
  res = cli.Post("/sessions/" + id + "/propagate", "", "application/json");
  REQUIRE(res->status == 200);
  const auto prop = json::parse(res->body);
  res = cli.Get("/sessions/" + id + "/raster/" + prop["probsRef"].get<std::string>());
  REQUIRE(res->status == 200);
  const auto r = decode(res->body);
  CHECK(r.width == 24);
  res = cli.Get("/sessions/" + id + "/suggest?k=3");
  CHECK(json::parse(res->body)["pixels"].size() == 3);
  res = cli.Options("/sessions");
  CHECK(res->status == 204);
  CHECK(res->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
  res = cli.Get("/index.html");
  CHECK(res->status == 200);
  CHECK(res->body == "<html>ui</html>");
  res = cli.Delete("/sessions/" + id);
  CHECK(res->status == 200);
  res = cli.Get("/sessions/" + id + "/suggest");
  CHECK(res->status == 404);

  server.stop();
  th.join();
}

TEST_CASE("a checkpoint model replaces the classical cue head") {
  ServiceConfig cfg;
  auto state = initial_state(kFeatureChannels, 2, {}, 1);
  state.transition.lambda = 0.5;
  state.transition.mu = 0.0;
  cfg.model = state;
  AnnotationService with_model(cfg);
  AnnotationService classical({});
  const auto a = create(with_model);
  const auto b = create(classical);
  const auto labels = add(seed(2, 10, 1) + "," + seed(12, 2, 0));
  with_model.update_labels(a, labels);
  classical.update_labels(b, labels);
  const auto pa = body(with_model.propagate(a));
  const auto pb = body(classical.propagate(b));
  CHECK(with_model.raster(a, pa["probsRef"]).body != classical.raster(b, pb["probsRef"]).body);
}
