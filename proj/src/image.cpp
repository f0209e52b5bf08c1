#include "vrw/image.hpp"

#include <algorithm>
#include <cmath>

namespace vrw {

double Image::at_clamped(int x, int y) const {
  x = std::clamp(x, 0, width - 1);
  y = std::clamp(y, 0, height - 1);
  return data[std::size_t(y) * width + x];
}

namespace {

enum class Order { Zero, First, Second };

std::vector<double> make_kernel(double sigma, Order order) {
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) norm += std::exp(-0.5 * i * i / (sigma * sigma));
  const double s2 = sigma * sigma;
  for (int i = -radius; i <= radius; ++i) {
    const double g = std::exp(-0.5 * i * i / s2) / norm;
    switch (order) {
      case Order::Zero: k[i + radius] = g; break;
      case Order::First: k[i + radius] = -i / s2 * g; break;
      case Order::Second: k[i + radius] = (i * i - s2) / (s2 * s2) * g; break;
    }
  }
  if (order == Order::Second) {
    // zero DC response so constant images give exactly zero curvature
    double mean = 0.0;
    for (double v : k) mean += v;
    mean /= static_cast<double>(k.size());
    for (double& v : k) v -= mean;
  }
  return k;
}

Image convolve_x(const Image& in, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  Image out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      // correlation with the flipped kernel == convolution
      for (int i = -r; i <= r; ++i) acc += k[r - i] * in.at_clamped(x + i, y);
      out(x, y) = acc;
    }
  }
  return out;
}

Image convolve_y(const Image& in, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  Image out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[r - i] * in.at_clamped(x, y + i);
      out(x, y) = acc;
    }
  }
  return out;
}

}  // namespace

Image gaussian_blur(const Image& in, double sigma) {
  if (sigma <= 0.0) return in;
  const auto k = make_kernel(sigma, Order::Zero);
  return convolve_y(convolve_x(in, k), k);
}

GaussianDerivatives gaussian_derivatives(const Image& in, double sigma) {
  const auto g0 = make_kernel(sigma, Order::Zero);
  const auto g1 = make_kernel(sigma, Order::First);
  const auto g2 = make_kernel(sigma, Order::Second);
  const Image sx0 = convolve_x(in, g0);
  const Image sx1 = convolve_x(in, g1);
  const Image sx2 = convolve_x(in, g2);
  GaussianDerivatives d;
  d.dx = convolve_y(sx1, g0);
  d.dy = convolve_y(sx0, g1);
  d.dxx = convolve_y(sx2, g0);
  d.dyy = convolve_y(sx0, g2);
  d.dxy = convolve_y(sx1, g1);
  return d;
}

}  // namespace vrw
