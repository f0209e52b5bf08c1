#include "vrw/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "vrw/errors.hpp"
#include "vrw/objective.hpp"

namespace vrw {

PredictorParams PredictorParams::zeros(int channels, int num_labels, int hidden, bool smoothing) {
  if (channels < 1 || num_labels < 1 || hidden < 0) throw ArgumentError("PredictorParams: bad shape");
  PredictorParams p;
  p.channels = channels;
  p.num_labels = num_labels;
  p.hidden = hidden;
  p.smoothing = smoothing;
  p.w1.assign(std::size_t(hidden) * channels, 0.0);
  p.b1.assign(hidden, 0.0);
  p.w.assign(std::size_t(num_labels) * p.input_width(), 0.0);
  p.b.assign(num_labels, 0.0);
  if (smoothing) p.smooth.assign(num_labels, 0.0);
  return p;
}

PredictorParams PredictorParams::random(int channels, int num_labels, int hidden, bool smoothing,
                                        std::uint64_t seed, double scale) {
  PredictorParams p = zeros(channels, num_labels, hidden, smoothing);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale / std::sqrt(double(channels)));
  for (auto& v : p.w1) v = n(rng);
  return p;
}

std::size_t PredictorParams::flat_size() const {
  return w1.size() + b1.size() + w.size() + b.size() + smooth.size();
}

std::vector<double> PredictorParams::flatten() const {
  std::vector<double> out;
  out.reserve(flat_size());
  for (const auto* v : {&w1, &b1, &w, &b, &smooth}) out.insert(out.end(), v->begin(), v->end());
  return out;
}

void PredictorParams::unflatten(std::span<const double> flat) {
  if (flat.size() != flat_size()) throw ArgumentError("PredictorParams::unflatten: size mismatch");
  auto it = flat.begin();
  for (auto* v : {&w1, &b1, &w, &b, &smooth}) {
    std::copy_n(it, v->size(), v->begin());
    it += v->size();
  }
}

bool PredictorParams::same_shape(const PredictorParams& o) const {
  return channels == o.channels && num_labels == o.num_labels && hidden == o.hidden && smoothing == o.smoothing;
}

void validate(const PredictorParams& p) {
  if (p.channels < 1 || p.num_labels < 1 || p.hidden < 0) throw ValidationError("predictor: bad shape");
  const auto expect = PredictorParams::zeros(p.channels, p.num_labels, p.hidden, p.smoothing);
  if (p.w1.size() != expect.w1.size() || p.b1.size() != expect.b1.size() || p.w.size() != expect.w.size() ||
      p.b.size() != expect.b.size() || p.smooth.size() != expect.smooth.size()) {
    throw ValidationError("predictor: parameter arrays do not match the declared shape");
  }
  for (double v : p.flatten()) {
    if (!std::isfinite(v)) throw ValidationError("predictor: non-finite parameter");
  }
}

namespace {

void check_features(const FeatureStack& f, const PredictorParams& p) {
  if (f.channels != p.channels) {
    throw ArgumentError("predictor: feature channels (" + std::to_string(f.channels) +
                        ") do not match parameter channels (" + std::to_string(p.channels) + ")");
  }
  if (f.values.size() != std::size_t(f.size()) * f.channels) throw ArgumentError("predictor: malformed features");
}

// Hidden activations, pixel-major N * hidden.
std::vector<double> hidden_layer(const FeatureStack& f, const PredictorParams& p) {
  const int n = f.size(), H = p.hidden, C = p.channels;
  std::vector<double> h(std::size_t(n) * H);
  for (int x = 0; x < n; ++x) {
    const auto fx = f.at(x);
    for (int j = 0; j < H; ++j) {
      double s = p.b1[j];
      for (int c = 0; c < C; ++c) s += p.w1[std::size_t(j) * C + c] * fx[c];
      h[std::size_t(x) * H + j] = std::tanh(s);
    }
  }
  return h;
}

std::vector<double> affine_logits(std::span<const double> in, int n, int width, const PredictorParams& p) {
  const int L = p.num_labels;
  std::vector<double> a(std::size_t(n) * L);
  for (int x = 0; x < n; ++x) {
    const double* ix = in.data() + std::size_t(x) * width;
    for (int l = 0; l < L; ++l) {
      double s = p.b[l];
      for (int c = 0; c < width; ++c) s += p.w[std::size_t(l) * width + c] * ix[c];
      a[std::size_t(x) * L + l] = s;
    }
  }
  return a;
}

// 3x3 box mean per label with replicate padding.
std::vector<double> box3(std::span<const double> a, int w, int h, int L) {
  std::vector<double> out(a.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double* o = out.data() + std::size_t(y * w + x) * L;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, w - 1);
          const double* s = a.data() + std::size_t(yy * w + xx) * L;
          for (int l = 0; l < L; ++l) o[l] += s[l] / 9.0;
        }
      }
    }
  }
  return out;
}

std::vector<double> box3_transpose(std::span<const double> g, int w, int h, int L) {
  std::vector<double> out(g.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double* gi = g.data() + std::size_t(y * w + x) * L;
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, w - 1);
          double* o = out.data() + std::size_t(yy * w + xx) * L;
          for (int l = 0; l < L; ++l) o[l] += gi[l] / 9.0;
        }
      }
    }
  }
  return out;
}

}  // namespace

std::vector<double> predict_logits(const FeatureStack& features, const PredictorParams& params) {
  check_features(features, params);
  const int n = features.size();
  std::vector<double> a;
  if (params.hidden > 0) {
    a = affine_logits(hidden_layer(features, params), n, params.hidden, params);
  } else {
    a = affine_logits(features.values, n, params.channels, params);
  }
  if (params.smoothing) {
    const int L = params.num_labels;
    const auto m = box3(a, features.width, features.height, L);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += params.smooth[i % L] * (m[i] - a[i]);
  }
  return a;
}

std::vector<double> predict(const FeatureStack& features, const PredictorParams& params) {
  return softmax_rows(predict_logits(features, params), params.num_labels);
}

PredictorParams predict_backward(const FeatureStack& features, const PredictorParams& params,
                                 std::span<const double> grad_logits) {
  check_features(features, params);
  const int n = features.size(), L = params.num_labels;
  if (grad_logits.size() != std::size_t(n) * L) throw ArgumentError("predict_backward: gradient shape mismatch");
  PredictorParams g = PredictorParams::zeros(params.channels, L, params.hidden, params.smoothing);

  std::vector<double> h;
  if (params.hidden > 0) h = hidden_layer(features, params);
  const int width = params.input_width();
  std::span<const double> in = params.hidden > 0 ? std::span<const double>(h) : std::span<const double>(features.values);

  std::vector<double> ga(grad_logits.begin(), grad_logits.end());  // dL/da
  if (params.smoothing) {
    const auto a = affine_logits(in, n, width, params);
    const auto m = box3(a, features.width, features.height, L);
    std::vector<double> scaled(ga.size());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double s = params.smooth[i % L];
      g.smooth[i % L] += grad_logits[i] * (m[i] - a[i]);
      scaled[i] = s * grad_logits[i];
      ga[i] = (1.0 - s) * grad_logits[i];
    }
    const auto back = box3_transpose(scaled, features.width, features.height, L);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += back[i];
  }

  std::vector<double> gin(params.hidden > 0 ? std::size_t(width) : 0);
  for (int x = 0; x < n; ++x) {
    const double* ix = in.data() + std::size_t(x) * width;
    const double* gx = ga.data() + std::size_t(x) * L;
    std::fill(gin.begin(), gin.end(), 0.0);
    for (int l = 0; l < L; ++l) {
      if (gx[l] == 0.0) continue;
      g.b[l] += gx[l];
      double* gw = g.w.data() + std::size_t(l) * width;
      const double* w = params.w.data() + std::size_t(l) * width;
      for (int c = 0; c < width; ++c) gw[c] += gx[l] * ix[c];
      if (params.hidden > 0) {
        for (int c = 0; c < width; ++c) gin[c] += gx[l] * w[c];
      }
    }
    if (params.hidden > 0) {
      const auto fx = features.at(x);
      for (int j = 0; j < params.hidden; ++j) {
        const double d = gin[j] * (1.0 - ix[j] * ix[j]);  // tanh'
        if (d == 0.0) continue;
        g.b1[j] += d;
        double* gw1 = g.w1.data() + std::size_t(j) * params.channels;
        for (int c = 0; c < params.channels; ++c) gw1[c] += d * fx[c];
      }
    }
  }
  return g;
}

}  // namespace vrw
