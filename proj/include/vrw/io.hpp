#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "vrw/cues.hpp"
#include "vrw/errors.hpp"
#include "vrw/grid.hpp"
#include "vrw/image.hpp"
#include "vrw/metrics.hpp"
#include "vrw/objective.hpp"
#include "vrw/propagate.hpp"
#include "vrw/solver.hpp"
#include "vrw/synth.hpp"
#include "vrw/train.hpp"

namespace vrw {

// Malformed or unreadable file. Derives from ValidationError so callers can treat
// bad input uniformly.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// "VRW1", then width, height, channels as u32 little-endian, then f32 little-endian
// samples, row-major and channel-interleaved.
struct Raster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::vector<float> data;

  std::size_t pixels() const { return std::size_t(width) * height; }
  float at(std::size_t pixel, std::uint32_t channel) const { return data[pixel * channels + channel]; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

void write_raster(std::ostream& out, const Raster& raster);
Raster read_raster(std::istream& in);
void write_raster(const std::filesystem::path& path, const Raster& raster);
Raster read_raster(const std::filesystem::path& path);

Raster raster_from_image(const Image& image);
// Single-channel rasters only.
Image image_from_raster(const Raster& raster);
// Probabilities (L channels) followed by one entropy channel.
Raster field_raster(const PropagatedField& field);
Raster probability_raster(const PropagatedField& field);
Raster entropy_raster(const PropagatedField& field);
Raster mask_raster(const Mask& mask, int width, int height);

// Binary PGM (P5), 8-bit or 16-bit big-endian samples, divided by maxval.
Image read_pgm(std::istream& in);
Image read_pgm(const std::filesystem::path& path);
// Writes an 8-bit P5 file, values clamped to [0, 1] and rounded.
void write_pgm(const std::filesystem::path& path, const Image& image);

// Reads a VRW1 raster (one channel) or a P5 PGM, picked by magic bytes.
Image read_image(const std::filesystem::path& path);
// Binary mask from a raster or PGM: nonzero pixels are foreground.
Mask read_mask(const std::filesystem::path& path, int* width = nullptr, int* height = nullptr);

// {"numLabels": L, "entries": [{"x", "y", "label", "kind": "seed" | "scribble" | "centerline"}]}
std::string labels_to_json(const SparseLabels& labels, int width);
SparseLabels labels_from_json(const std::string& text, int width, int height);
void write_labels(const std::filesystem::path& path, const SparseLabels& labels, int width);
SparseLabels read_labels(const std::filesystem::path& path, int width, int height);

// Every tunable of a run. Sections: transition, loss, solver, train, predictor,
// vesselness, connectivity.
struct RunConfig {
  TransitionParams transition;
  LossConfig loss;
  SolverConfig solver;
  TrainConfig train;
  PredictorConfig predictor;
  VesselnessConfig vesselness;
  Connectivity connectivity = Connectivity::Four;
};

// Unknown keys and wrongly typed values are rejected; every section is validated.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);
RunConfig read_run_config(const std::filesystem::path& path);
void validate(const RunConfig& config);

std::string scene_record_to_json(const SceneRecord& record);
SceneRecord scene_record_from_json(const std::string& text);

// Model parameters as JSON; doubles round-trip exactly.
struct Checkpoint {
  ModelState state;
  int steps = 0;
  Ablation ablation;  // how the model was trained; evaluation reuses it
};
std::string checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const std::string& text);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// One JSON object per line.
std::string step_record_to_json(const StepRecord& record);
void write_train_log(std::ostream& out, const TrainLog& log);

std::string eval_report_to_json(const EvalReport& report);

// A scene on disk: <name>.json (record), <name>.image.vrw, <name>.mask.vrw,
// <name>.labels.json.
struct SceneFiles {
  std::string name;
  SceneRecord record;
  Image image;
  Mask mask;  // empty when no mask file exists
  SparseLabels labels;
};
std::string scene_name(std::uint64_t seed);  // "scene-0007"
void write_scene_files(const std::filesystem::path& dir, const SyntheticScene& scene);
SceneFiles read_scene_files(const std::filesystem::path& dir, const std::string& name);
// Every scene-*.json in `dir`, sorted by name.
std::vector<SceneFiles> read_scene_dir(const std::filesystem::path& dir);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

Ablation parse_ablation(const std::string& list);  // "freezeCues,gammaZero"
std::string ablation_to_string(const Ablation& ablation);

}  // namespace vrw
