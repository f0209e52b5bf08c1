#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vrw/cues.hpp"

namespace vrw {

// Shallow per-pixel classifier over the feature stack.
//   hidden == 0: a = W f + b
//   hidden  > 0: a = W tanh(W1 f + b1) + b
// With smoothing on, each label's logit map is blended with its 3x3 box mean:
//   logit = a + s_l * (box3(a) - a).
struct PredictorParams {
  int channels = 0;
  int num_labels = 2;
  int hidden = 0;
  bool smoothing = false;
  std::vector<double> w1;      // hidden x channels
  std::vector<double> b1;      // hidden
  std::vector<double> w;       // num_labels x (hidden or channels)
  std::vector<double> b;       // num_labels
  std::vector<double> smooth;  // num_labels when smoothing, else empty

  static PredictorParams zeros(int channels, int num_labels, int hidden = 0, bool smoothing = false);
  // Hidden layer drawn from N(0, scale^2 / channels); output layer and biases start at zero.
  static PredictorParams random(int channels, int num_labels, int hidden, bool smoothing, std::uint64_t seed,
                                double scale = 1.0);

  int input_width() const { return hidden > 0 ? hidden : channels; }
  std::size_t flat_size() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
  // Same architecture (channels, labels, hidden, smoothing).
  bool same_shape(const PredictorParams& other) const;
};

void validate(const PredictorParams& params);

// Pre-softmax logits, pixel-major N * L.
std::vector<double> predict_logits(const FeatureStack& features, const PredictorParams& params);

// Softmax of predict_logits.
std::vector<double> predict(const FeatureStack& features, const PredictorParams& params);

// dL/dparams given dL/dlogits (pixel-major N * L). Same shape as params.
PredictorParams predict_backward(const FeatureStack& features, const PredictorParams& params,
                                 std::span<const double> grad_logits);

}  // namespace vrw
