// Command-line front end: synth, propagate, train, eval, serve.
// Exit codes: 0 success, 2 invalid input, 3 solver failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "vrw/errors.hpp"
#include "vrw/io.hpp"
#include "vrw/metrics.hpp"
#include "vrw/service.hpp"
#include "vrw/synth.hpp"
#include "vrw/train.hpp"

namespace fs = std::filesystem;
using namespace vrw;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitSolver = 3;

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : read_run_config(path); }

std::optional<Checkpoint> load_checkpoint(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_checkpoint(path);
}

std::optional<ModelState> load_model(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_checkpoint(path).state;
}

struct SynthArgs {
  std::uint64_t seed = 0;
  int count = 1;
  int tier = -1;
  std::string out_dir;
};

int cmd_synth(const SynthArgs& a) {
  for (int i = 0; i < a.count; ++i) {
    const std::uint64_t seed = a.seed + std::uint64_t(i);
    const int tier = a.tier >= 0 ? a.tier : int(std::min<std::uint64_t>(seed / 10, kNumTiers - 1));
    const auto scene = generate_scene(benchmark_record(seed, tier));
    write_scene_files(a.out_dir, scene);
    std::cerr << "wrote " << (fs::path(a.out_dir) / scene_name(seed)).string() << " (tier " << tier << ")\n";
  }
  return 0;
}

struct PropagateArgs {
  std::string image, labels, config, out, checkpoint, cues_boundary, cues_vessel;
};

int cmd_propagate(const PropagateArgs& a) {
  const RunConfig cfg = load_config(a.config);
  const auto model = load_model(a.checkpoint);
  const Image image = read_image(a.image);
  const SparseLabels labels = read_labels(a.labels, image.width, image.height);
  const PixelGrid grid(image.width, image.height, cfg.connectivity);

  CueMaps cues;
  if (!a.cues_boundary.empty() || !a.cues_vessel.empty()) {
    if (a.cues_boundary.empty() || a.cues_vessel.empty()) {
      throw ValidationError("--cues-boundary and --cues-vessel must be given together");
    }
    cues.boundary = read_image(a.cues_boundary);
    cues.vesselness = read_image(a.cues_vessel);
    for (const Image* m : {&cues.boundary, &cues.vesselness}) {
      if (m->width != image.width || m->height != image.height) throw ValidationError("cue map size differs from image");
    }
    for (double b : cues.boundary.data) {
      if (!(b >= 0.0) || !std::isfinite(b)) throw ValidationError("boundary cue values must be finite and >= 0");
    }
    for (double v : cues.vesselness.data) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("vesselness cue values must lie in [0, 1]");
    }
  } else {
    Image orientation;
    const auto features = compute_features(image, cfg.vesselness, &orientation);
    cues = cue_head_forward(features, model ? model->cues : CueParams::classical(features.channels), orientation);
  }
  const TransitionParams transition = model ? model->transition : cfg.transition;
  const auto field = propagate(grid, cues, transition, labels, cfg.solver);
  write_raster(a.out, field_raster(field));
  int reachable = 0;
  for (char r : field.reachable) reachable += r ? 1 : 0;
  std::cout << nlohmann::json{{"out", a.out},
                              {"width", field.width},
                              {"height", field.height},
                              {"channels", field.num_labels + 1},
                              {"reachable", reachable}}
                   .dump()
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string data_dir, config, checkpoint_out, ablation, log;
  int steps = 0;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (a.steps > 0) cfg.train.steps = a.steps;
  if (!a.ablation.empty()) cfg.train.ablation = parse_ablation(a.ablation);
  validate(cfg);
  const auto scenes = read_scene_dir(a.data_dir);
  if (scenes.empty()) throw ValidationError("no scenes found in " + a.data_dir);
  std::vector<TrainingInstance> data;
  for (const auto& s : scenes) data.push_back(prepare_instance(s.name, s.image, s.labels, cfg.vesselness, cfg.connectivity));
  const int labels = scenes.front().labels.num_labels;
  const auto init = initial_state(kFeatureChannels, labels, cfg.predictor, cfg.train.seed, cfg.transition);
  std::cerr << "training on " << data.size() << " scenes for " << cfg.train.steps << " steps, ablation "
            << ablation_to_string(cfg.train.ablation) << "\n";
  const int every = std::max(1, cfg.train.steps / 10);
  const auto result = fit(data, init, cfg.train, cfg.loss, cfg.solver, [&](const StepRecord& r, const ModelState&) {
    if (r.step % every == 0 || r.step + 1 == cfg.train.steps) {
      std::cerr << "step " << r.step << " loss " << r.loss.total << "\n";
    }
  });
  write_checkpoint(a.checkpoint_out, {result.state, cfg.train.steps, cfg.train.ablation});
  const std::string log_path = a.log.empty() ? a.checkpoint_out + ".log.jsonl" : a.log;
  std::ofstream log(log_path);
  if (!log) throw ValidationError("cannot write " + log_path);
  write_train_log(log, result.log);
  return 0;
}

struct EvalArgs {
  std::string pred, gt, probs, out, data_dir, checkpoint, config;
  double threshold = 0.5;
  int vessel_label = 1;
  int bins = 15;
};

// Vessel probability from a raster: the vessel channel of a multi-channel raster,
// or the single channel itself.
std::vector<double> vessel_channel(const Raster& r, int vessel_label) {
  if (r.channels > 1 && std::uint32_t(vessel_label) >= r.channels) {
    throw ValidationError("raster has no channel for vessel label " + std::to_string(vessel_label));
  }
  const std::uint32_t c = r.channels == 1 ? 0 : std::uint32_t(vessel_label);
  std::vector<double> out(r.pixels());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = r.at(p, c);
  return out;
}

ImageMetrics eval_files(const fs::path& pred, const fs::path& gt, const fs::path& probs, const EvalArgs& a) {
  const Raster pr = read_raster(pred);
  int w = 0, h = 0;
  const Mask gt_mask = read_mask(gt, &w, &h);
  if (pr.width != std::uint32_t(w) || pr.height != std::uint32_t(h)) {
    throw ValidationError("prediction and ground truth differ in size: " + pred.string());
  }
  const Mask pred_mask = threshold_mask(vessel_channel(pr, a.vessel_label), a.threshold);
  std::vector<double> p;
  if (!probs.empty()) {
    const Raster r = read_raster(probs);
    if (r.width != std::uint32_t(w) || r.height != std::uint32_t(h)) throw ValidationError("--probs size mismatch");
    p = vessel_channel(r, a.vessel_label);
  } else if (pr.channels > 1) {
    p = vessel_channel(pr, a.vessel_label);
  }
  auto m = evaluate_image(pred_mask, gt_mask, w, h, p, a.bins);
  m.name = pred.filename().string();
  return m;
}

int cmd_eval(const EvalArgs& a) {
  std::vector<ImageMetrics> rows;
  if (!a.data_dir.empty()) {
    // model mode: propagate every scene's sparse labels and score against its mask
    const RunConfig cfg = load_config(a.config);
    const auto ck = load_checkpoint(a.checkpoint);
    const ModelState state = ck ? ck->state : initial_state(kFeatureChannels, 2, {}, 0, cfg.transition);
    const Ablation ablation = ck ? ck->ablation : cfg.train.ablation;
    for (const auto& s : read_scene_dir(a.data_dir)) {
      if (s.mask.empty()) throw ValidationError(s.name + ": no ground-truth mask");
      const auto inst = prepare_instance(s.name, s.image, s.labels, cfg.vesselness, cfg.connectivity);
      const auto field = model_propagate(inst, state, ablation, cfg.solver);
      const auto pv = field.channel(a.vessel_label);
      auto m = evaluate_image(threshold_mask(pv, a.threshold), s.mask, s.image.width, s.image.height, pv, a.bins);
      m.name = s.name;
      rows.push_back(m);
    }
  } else if (fs::is_directory(a.pred)) {
    if (!fs::is_directory(a.gt)) throw ValidationError("--gt must be a directory when --pred is one");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.pred)) {
      if (e.path().extension() == ".vrw") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    rows.resize(files.size());
    // files are independent; score them in parallel
    std::vector<std::exception_ptr> errors(files.size());
    std::vector<std::thread> pool;
    const unsigned threads = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), unsigned(files.size())));
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < files.size(); i += threads) {
          try {
            const fs::path probs = a.probs.empty() ? fs::path() : fs::path(a.probs) / files[i].filename();
            rows[i] = eval_files(files[i], fs::path(a.gt) / files[i].filename(), probs, a);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    if (a.pred.empty() || a.gt.empty()) throw ValidationError("eval needs --pred and --gt, or --data-dir");
    rows.push_back(eval_files(a.pred, a.gt, a.probs, a));
  }
  const auto report = summarize(rows);
  std::printf("images %zu\n", report.images.size());
  std::printf("dice %.6f\niou %.6f\nprecision %.6f\nrecall %.6f\ncenterline_f1 %.6f\nace %.6f\n", report.dice.mean,
              report.iou.mean, report.precision.mean, report.recall.mean, report.centerline_f1.mean, report.ace.mean);
  if (std::any_of(rows.begin(), rows.end(), [](const ImageMetrics& m) { return m.has_ece; })) {
    std::printf("ece %.6f\n", report.ece.mean);
  }
  if (!a.out.empty()) write_text_file(a.out, eval_report_to_json(report) + "\n");
  return 0;
}

struct ServeArgs {
  std::string host = "127.0.0.1", checkpoint, static_dir, config;
  int port = 8080;
  int idle_minutes = 30;
};

int cmd_serve(const ServeArgs& a) {
  const RunConfig cfg = load_config(a.config);
  ServiceConfig sc;
  sc.transition = cfg.transition;
  sc.solver = cfg.solver;
  sc.vesselness = cfg.vesselness;
  sc.connectivity = cfg.connectivity;
  sc.model = load_model(a.checkpoint);
  if (a.idle_minutes < 1) throw ValidationError("--idle-minutes must be >= 1");
  sc.idle_timeout = std::chrono::minutes(a.idle_minutes);
  AnnotationService service(sc);
  return run_service(service, a.host, a.port, a.static_dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vessel label propagation toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic vessel scenes");
  s->add_option("--seed", synth.seed, "First scene seed");
  s->add_option("--count", synth.count, "Number of scenes")->check(CLI::PositiveNumber);
  s->add_option("--tier", synth.tier, "Difficulty tier 0-2 (default: seed / 10, capped at 2)")->check(CLI::Range(-1, 2));
  s->add_option("--out-dir", synth.out_dir, "Output directory")->required();

  PropagateArgs prop;
  auto* p = app.add_subcommand("propagate", "Propagate sparse labels over an image");
  p->add_option("--image", prop.image, "VRW1 raster or P5 PGM")->required();
  p->add_option("--labels", prop.labels, "Label JSON file")->required();
  p->add_option("--config", prop.config, "Run config JSON");
  p->add_option("--checkpoint", prop.checkpoint, "Trained model");
  p->add_option("--cues-boundary", prop.cues_boundary, "External boundary map (raster)");
  p->add_option("--cues-vessel", prop.cues_vessel, "External vesselness map (raster)");
  p->add_option("--out", prop.out, "Output raster: label probabilities then entropy")->required();

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Joint training on a scene directory");
  t->add_option("--data-dir", train.data_dir, "Directory written by synth")->required();
  t->add_option("--config", train.config, "Run config JSON");
  t->add_option("--steps", train.steps, "Override train.steps")->check(CLI::PositiveNumber);
  t->add_option("--checkpoint-out", train.checkpoint_out, "Checkpoint path")->required();
  t->add_option("--ablation", train.ablation, "Comma list: freezeCues, gammaZero, alphaZero, constantVesselness");
  t->add_option("--log", train.log, "Train log (JSON lines), default <checkpoint>.log.jsonl");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Segmentation and calibration metrics");
  e->add_option("--pred", eval.pred, "Prediction raster or directory");
  e->add_option("--gt", eval.gt, "Ground-truth mask raster or directory");
  e->add_option("--probs", eval.probs, "Probability raster (or directory) for ECE");
  e->add_option("--threshold", eval.threshold, "Vessel threshold")->check(CLI::Range(0.0, 1.0));
  e->add_option("--vessel-label", eval.vessel_label, "Vessel channel of multi-channel rasters");
  e->add_option("--bins", eval.bins, "ECE bins")->check(CLI::PositiveNumber);
  e->add_option("--data-dir", eval.data_dir, "Scene directory: evaluate a model by propagation");
  e->add_option("--checkpoint", eval.checkpoint, "Model for --data-dir (default: classical cues)");
  e->add_option("--config", eval.config, "Run config JSON for --data-dir");
  e->add_option("--out", eval.out, "Write the report as JSON");

  ServeArgs serve;
  auto* v = app.add_subcommand("serve", "Run the annotation session service");
  v->add_option("--host", serve.host, "Bind address");
  v->add_option("--port", serve.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  v->add_option("--checkpoint", serve.checkpoint, "Trained model for the cue head");
  v->add_option("--static-dir", serve.static_dir, "Directory served at /");
  v->add_option("--config", serve.config, "Run config JSON");
  v->add_option("--idle-minutes", serve.idle_minutes, "Session idle timeout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*p) return cmd_propagate(prop);
    if (*t) return cmd_train(train);
    if (*e) return cmd_eval(eval);
    if (*v) return cmd_serve(serve);
  } catch (const SolverError& err) {
    std::cerr << "solver error: " << err.what() << " (residual " << err.residual() << ")\n";
    return kExitSolver;
  } catch (const ValidationError& err) {
    std::cerr << "invalid input: " << err.what() << "\n";
    return kExitInvalid;
  } catch (const ArgumentError& err) {
    std::cerr << "invalid input: " << err.what() << "\n";
    return kExitInvalid;
  } catch (const AnnotationError& err) {
    std::cerr << "invalid input: " << err.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
