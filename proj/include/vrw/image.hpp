#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vrw {

// Single-channel row-major raster of doubles.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0) : width(w), height(h), data(std::size_t(w) * h, fill) {}

  int size() const { return width * height; }
  double& operator()(int x, int y) { return data[std::size_t(y) * width + x]; }
  double operator()(int x, int y) const { return data[std::size_t(y) * width + x]; }
  // Clamped (replicate-border) access.
  double at_clamped(int x, int y) const;

  friend bool operator==(const Image&, const Image&) = default;
};

// Separable Gaussian blur, kernel truncated at ceil(4 sigma), replicate border.
// sigma <= 0 returns the input unchanged.
Image gaussian_blur(const Image& in, double sigma);

// Gaussian derivative filters at scale sigma: d/dx, d/dy, d2/dx2, d2/dy2, d2/dxdy.
struct GaussianDerivatives {
  Image dx, dy, dxx, dyy, dxy;
};
GaussianDerivatives gaussian_derivatives(const Image& in, double sigma);

}  // namespace vrw
