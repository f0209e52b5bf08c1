#pragma once

#include <optional>
#include <span>
#include <vector>

#include "vrw/image.hpp"

namespace vrw {

enum class VesselPolarity { Dark, Bright, Both };

// Multiscale Hessian ridge filter settings. c is Frangi's structureness scale,
// chosen per image as max(c_floor, c_fraction * max Hessian norm).
struct VesselnessConfig {
  std::vector<double> scales{1.0, 2.0};
  double beta = 0.5;
  double c_fraction = 0.5;
  double c_floor = 1e-6;
  VesselPolarity polarity = VesselPolarity::Dark;
};

void validate(const VesselnessConfig& config);

struct VesselnessResult {
  Image vesselness;   // in [0, 1]
  Image orientation;  // along-vessel direction in [0, pi), image coordinates
};

VesselnessResult classical_vesselness(const Image& image, const VesselnessConfig& config = {});

// Per-pixel feature channels, pixel-major layout: values[p * channels + c].
struct FeatureStack {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> values;

  int size() const { return width * height; }
  std::span<const double> at(int pixel) const {
    return {values.data() + std::size_t(pixel) * channels, std::size_t(channels)};
  }
};

inline constexpr int kFeatureChannels = 6;

// Channels: intensity, blur sigma=1, blur sigma=2, gradient magnitude (sigma=1),
// Hessian eigenvalue ratio |l1|/|l2| (sigma=1), classical tubularity.
// Also returns the classical orientation field via `orientation_out` when non-null.
FeatureStack compute_features(const Image& image, const VesselnessConfig& config = {},
                              Image* orientation_out = nullptr);

struct CueMaps {
  Image boundary;                    // B(x) >= 0
  Image vesselness;                  // V(x) in [0, 1]
  std::optional<Image> orientation;  // radians in [0, pi)
};

// Affine heads over the feature stack: B = softplus(f.wb + bb), V = sigmoid(f.wv + bv).
struct CueParams {
  std::vector<double> boundary_weights;
  double boundary_bias = 0.0;
  std::vector<double> vessel_weights;
  double vessel_bias = 0.0;

  static CueParams zeros(int channels);
  // Hand-set starting point: boundary from gradient magnitude, vesselness from tubularity.
  static CueParams classical(int channels = kFeatureChannels);

  int channels() const { return static_cast<int>(boundary_weights.size()); }
  std::size_t flat_size() const { return 2 * boundary_weights.size() + 2; }
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
};

CueMaps cue_head_forward(const FeatureStack& features, const CueParams& params,
                         std::optional<Image> orientation = std::nullopt);

// Gradient of a loss w.r.t. CueParams given per-pixel dL/dB and dL/dV.
CueParams cue_head_backward(const FeatureStack& features, const CueParams& params,
                            std::span<const double> grad_boundary,
                            std::span<const double> grad_vesselness);

double softplus(double s);
double sigmoid(double s);

}  // namespace vrw
