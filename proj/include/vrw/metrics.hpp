#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vrw {

using Mask = std::vector<std::uint8_t>;

struct OverlapScores {
  double dice = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Set overlap of two binary masks. Both empty: all four are 1. A ratio with an
// empty denominator otherwise is 0.
OverlapScores dice_iou_pr(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

// Two-subiteration Zhang-Suen thinning; pixels outside the raster count as background.
Mask zhang_suen_thinning(std::span<const std::uint8_t> mask, int width, int height);

// F1 of skeleton pixels matched within Euclidean distance `tolerance`.
// Both skeletons empty: 1. Exactly one empty: 0.
double centerline_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int width, int height,
                     double tolerance = 2.0);

// Number of 8-connected foreground components.
int count_components(std::span<const std::uint8_t> mask, int width, int height);

// Average connectivity error: max(0, C_pred - C_gt) / max(1, C_pred), C = 8-connected
// component count. Zero when the prediction is no more fragmented than the reference.
double connectivity_error(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int width,
                          int height);

// Binary ECE. Each pixel predicts vessel when p >= 0.5 with confidence max(p, 1 - p);
// confidences fall into `bins` equal-width bins over [0, 1]; ECE = sum_b n_b / N |acc_b - conf_b|.
double expected_calibration_error(std::span<const double> p_vessel, std::span<const std::uint8_t> gt, int bins = 15);

Mask threshold_mask(std::span<const double> p_vessel, double threshold = 0.5);

struct ImageMetrics {
  std::string name;
  double dice = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double centerline_f1 = 0.0;
  double ace = 0.0;
  double ece = 0.0;
  bool has_ece = false;
};

// All metrics for one image. `p_vessel` may be empty, in which case ECE is skipped.
ImageMetrics evaluate_image(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, int width,
                            int height, std::span<const double> p_vessel = {}, int ece_bins = 15);

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 for a single image
};

struct EvalReport {
  std::vector<ImageMetrics> images;
  MetricSummary dice, iou, precision, recall, centerline_f1, ace, ece;
};

EvalReport summarize(std::vector<ImageMetrics> images);

}  // namespace vrw
