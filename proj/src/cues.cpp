#include "vrw/cues.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vrw/errors.hpp"

namespace vrw {

namespace {

struct Eigen2 {
  double small;  // eigenvalue with the smaller magnitude
  double large;
  double along;  // eigenvector angle of `small`, in [0, pi)
};

Eigen2 hessian_eigen(double a, double b, double d) {
  const double tmp = std::sqrt((a - d) * (a - d) + 4.0 * b * b);
  const double mu1 = 0.5 * (a + d + tmp);
  const double mu2 = 0.5 * (a + d - tmp);
  double theta1 = 0.5 * std::atan2(2.0 * b, a - d);  // eigenvector of mu1
  Eigen2 e{};
  if (std::abs(mu1) <= std::abs(mu2)) {
    e.small = mu1;
    e.large = mu2;
    e.along = theta1;
  } else {
    e.small = mu2;
    e.large = mu1;
    e.along = theta1 + 0.5 * std::numbers::pi;
  }
  e.along = std::fmod(e.along, std::numbers::pi);
  if (e.along < 0) e.along += std::numbers::pi;
  if (e.along >= std::numbers::pi) e.along -= std::numbers::pi;
  return e;
}

bool polarity_ok(double large, VesselPolarity p) {
  switch (p) {
    case VesselPolarity::Dark: return large > 0.0;
    case VesselPolarity::Bright: return large < 0.0;
    case VesselPolarity::Both: return large != 0.0;
  }
  return false;
}

}  // namespace

double softplus(double s) { return s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

double sigmoid(double s) {
  if (s >= 0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

void validate(const VesselnessConfig& c) {
  if (c.scales.empty()) throw ValidationError("vesselness scales must not be empty");
  for (double s : c.scales) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("vesselness scales must be positive");
  }
  if (!(c.beta > 0.0)) throw ValidationError("vesselness beta must be > 0");
  if (!(c.c_fraction > 0.0)) throw ValidationError("vesselness c_fraction must be > 0");
  if (!(c.c_floor > 0.0)) throw ValidationError("vesselness c_floor must be > 0");
}

VesselnessResult classical_vesselness(const Image& image, const VesselnessConfig& config) {
  if (config.scales.empty()) throw ArgumentError("classical_vesselness: empty scale list");
  for (double s : config.scales) {
    if (!(s > 0.0)) throw ArgumentError("classical_vesselness: scales must be positive");
  }
  const int n = image.size();
  VesselnessResult out{Image(image.width, image.height, 0.0), Image(image.width, image.height, 0.0)};
  std::vector<double> best_norm(n, -1.0);

  for (double sigma : config.scales) {
    const auto d = gaussian_derivatives(image, sigma);
    const double s2 = sigma * sigma;
    std::vector<Eigen2> eig(n);
    std::vector<double> norm(n);
    double max_norm = 0.0;
    for (int p = 0; p < n; ++p) {
      eig[p] = hessian_eigen(s2 * d.dxx.data[p], s2 * d.dxy.data[p], s2 * d.dyy.data[p]);
      norm[p] = std::hypot(eig[p].small, eig[p].large);
      max_norm = std::max(max_norm, norm[p]);
    }
    const double c = std::max(config.c_floor, config.c_fraction * max_norm);
    for (int p = 0; p < n; ++p) {
      double v = 0.0;
      if (polarity_ok(eig[p].large, config.polarity)) {
        const double rb = eig[p].small / eig[p].large;
        v = std::exp(-rb * rb / (2.0 * config.beta * config.beta)) *
            (1.0 - std::exp(-norm[p] * norm[p] / (2.0 * c * c)));
      }
      // argmax scale by response, falling back to Hessian norm where nothing responds
      const bool better = v > out.vesselness.data[p] ||
                          (v == out.vesselness.data[p] && v == 0.0 && norm[p] > best_norm[p]);
      if (better) {
        out.vesselness.data[p] = std::clamp(v, 0.0, 1.0);
        out.orientation.data[p] = eig[p].along;
        best_norm[p] = norm[p];
      }
    }
  }
  return out;
}

FeatureStack compute_features(const Image& image, const VesselnessConfig& config,
                              Image* orientation_out) {
  FeatureStack f;
  f.width = image.width;
  f.height = image.height;
  f.channels = kFeatureChannels;
  const int n = image.size();
  f.values.assign(std::size_t(n) * kFeatureChannels, 0.0);

  const Image blur1 = gaussian_blur(image, 1.0);
  const Image blur2 = gaussian_blur(image, 2.0);
  const auto d = gaussian_derivatives(image, 1.0);
  const auto ves = classical_vesselness(image, config);
  for (int p = 0; p < n; ++p) {
    double* row = f.values.data() + std::size_t(p) * kFeatureChannels;
    row[0] = image.data[p];
    row[1] = blur1.data[p];
    row[2] = blur2.data[p];
    row[3] = std::hypot(d.dx.data[p], d.dy.data[p]);
    const auto e = hessian_eigen(d.dxx.data[p], d.dxy.data[p], d.dyy.data[p]);
    row[4] = e.large != 0.0 ? std::abs(e.small / e.large) : 0.0;
    row[5] = ves.vesselness.data[p];
  }
  if (orientation_out != nullptr) *orientation_out = ves.orientation;
  return f;
}

CueParams CueParams::zeros(int channels) {
  CueParams p;
  p.boundary_weights.assign(channels, 0.0);
  p.vessel_weights.assign(channels, 0.0);
  return p;
}

CueParams CueParams::classical(int channels) {
  CueParams p = zeros(channels);
  if (channels == kFeatureChannels) {
    p.boundary_weights[3] = 200.0;  // gradient magnitudes are O(0.1) on [0, 1] images
    p.boundary_bias = -4.0;
    p.vessel_weights[5] = 6.0;
    p.vessel_bias = -2.0;
  }
  return p;
}

std::vector<double> CueParams::flatten() const {
  std::vector<double> out;
  out.reserve(flat_size());
  out.insert(out.end(), boundary_weights.begin(), boundary_weights.end());
  out.push_back(boundary_bias);
  out.insert(out.end(), vessel_weights.begin(), vessel_weights.end());
  out.push_back(vessel_bias);
  return out;
}

void CueParams::unflatten(std::span<const double> flat) {
  if (flat.size() != flat_size()) throw ArgumentError("CueParams::unflatten: size mismatch");
  const std::size_t c = boundary_weights.size();
  std::copy_n(flat.begin(), c, boundary_weights.begin());
  boundary_bias = flat[c];
  std::copy_n(flat.begin() + c + 1, c, vessel_weights.begin());
  vessel_bias = flat[2 * c + 1];
}

namespace {

void check_shapes(const FeatureStack& features, const CueParams& params) {
  if (params.boundary_weights.size() != std::size_t(features.channels) ||
      params.vessel_weights.size() != std::size_t(features.channels)) {
    throw ArgumentError("cue head: feature channels (" + std::to_string(features.channels) +
                        ") do not match parameter channels");
  }
}

double dot(std::span<const double> a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

CueMaps cue_head_forward(const FeatureStack& features, const CueParams& params,
                         std::optional<Image> orientation) {
  check_shapes(features, params);
  if (orientation && (orientation->width != features.width || orientation->height != features.height)) {
    throw ArgumentError("cue head: orientation map shape mismatch");
  }
  CueMaps maps{Image(features.width, features.height), Image(features.width, features.height),
               std::move(orientation)};
  for (int p = 0; p < features.size(); ++p) {
    const auto f = features.at(p);
    maps.boundary.data[p] = softplus(dot(f, params.boundary_weights) + params.boundary_bias);
    maps.vesselness.data[p] = sigmoid(dot(f, params.vessel_weights) + params.vessel_bias);
  }
  return maps;
}

CueParams cue_head_backward(const FeatureStack& features, const CueParams& params,
                            std::span<const double> grad_boundary,
                            std::span<const double> grad_vesselness) {
  check_shapes(features, params);
  if (grad_boundary.size() != std::size_t(features.size()) ||
      grad_vesselness.size() != std::size_t(features.size())) {
    throw ArgumentError("cue head backward: upstream gradient shape mismatch");
  }
  CueParams g = CueParams::zeros(features.channels);
  for (int p = 0; p < features.size(); ++p) {
    const auto f = features.at(p);
    if (grad_boundary[p] != 0.0) {
      const double db = grad_boundary[p] * sigmoid(dot(f, params.boundary_weights) + params.boundary_bias);
      for (int c = 0; c < features.channels; ++c) g.boundary_weights[c] += db * f[c];
      g.boundary_bias += db;
    }
    if (grad_vesselness[p] != 0.0) {
      const double v = sigmoid(dot(f, params.vessel_weights) + params.vessel_bias);
      const double dv = grad_vesselness[p] * v * (1.0 - v);
      for (int c = 0; c < features.channels; ++c) g.vessel_weights[c] += dv * f[c];
      g.vessel_bias += dv;
    }
  }
  return g;
}

}  // namespace vrw
