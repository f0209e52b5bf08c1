#pragma once

#include <cstdint>
#include <vector>

#include "vrw/grid.hpp"
#include "vrw/image.hpp"

namespace vrw {

struct TreeConfig {
  int field_size = 64;  // square field, >= 32
  int branches = 5;
  double width_min = 2.0;  // px
  double width_max = 4.0;
  double curvature = 0.3;  // control-point offset relative to branch length
};

struct RenderConfig {
  double contrast = 0.5;               // in [0, 1]
  double noise_sigma = 0.03;
  double blur_sigma = 0.8;
  double illumination_gradient = 0.0;  // peak-to-peak amplitude of a linear ramp
};

struct AnnotationConfig {
  int num_seeds = 6;
  int scribble_len = 80;     // total vessel scribble length, px
  int num_scribbles = 3;     // vessel scribbles the length is split across
  int bg_scribbles = 9;      // start points stratified over a 3x3 grid
  int bg_scribble_len = 12;  // px per background scribble
  int bg_margin = 3;         // minimum distance from the mask, px
  int vessel_label = 1;
  int background_label = 0;
  int num_labels = 2;
};

void validate(const TreeConfig& c);
void validate(const RenderConfig& c);
void validate(const AnnotationConfig& c);

struct VesselTree {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mask;     // 1 inside vessels
  std::vector<int> centerline;        // sorted pixel indices
  // Per-branch centerline pixels in path order (branch 0 is the trunk).
  std::vector<std::vector<int>> branch_paths;
  std::vector<double> branch_widths;
};

// Quadratic Bezier branches: a trunk across the field, then each branch grows from a
// pixel of an earlier branch. Centerlines are 8-connected digital curves; the mask is
// the union of disks of diameter `width` around them.
VesselTree generate_vessel_tree(std::uint64_t seed, const TreeConfig& config);

// Background 0.5 plus illumination ramp, vessels scaled by (1 - contrast),
// Gaussian blur, additive Gaussian noise, clipped to [0, 1].
Image render_image(const std::vector<std::uint8_t>& mask, int width, int height, const RenderConfig& config,
                   std::uint64_t seed);

// Centerline seeds, vessel scribbles along branch paths, background scribbles outside
// the mask dilated by bg_margin. Throws AnnotationError when a request cannot be met.
SparseLabels sample_sparse_annotations(const VesselTree& tree, const AnnotationConfig& config,
                                       std::uint64_t seed);

// 8-connected line between two pixels.
std::vector<std::pair<int, int>> bresenham(int x0, int y0, int x1, int y1);

struct SceneRecord {
  std::uint64_t seed = 0;
  int tier = 0;
  TreeConfig tree;
  RenderConfig render;
  AnnotationConfig annotation;
};

struct SyntheticScene {
  SceneRecord record;
  Image image;
  VesselTree tree;
  SparseLabels labels;
};

// Benchmark difficulty tiers 0 (easy) to 2 (hard).
inline constexpr int kNumTiers = 3;
SceneRecord benchmark_record(std::uint64_t seed, int tier);

// Everything is derived from record.seed; regeneration is bit-identical.
SyntheticScene generate_scene(const SceneRecord& record);

// The fixed evaluation suite: seeds 0..29, tier = seed / 10.
inline constexpr int kBenchmarkScenes = 30;
std::vector<SceneRecord> benchmark_suite();

}  // namespace vrw
