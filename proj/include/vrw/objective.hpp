#pragma once

#include <memory>
#include <span>
#include <vector>

#include "vrw/grid.hpp"
#include "vrw/propagate.hpp"

namespace vrw {

struct LossConfig {
  double alpha = 3.0;   // uncertainty sharpness
  double beta = 0.01;   // entropy weight
  double gamma = 0.1;   // topology weight
  double eta_skel = 0.6;
  double eta_geo = 0.4;
  int vessel_label = 1;
  double soft_min_temperature = 0.05;  // kappa, shared by skeleton and geodesic soft-min
  double near_radius = 3.0;            // r of the Gaussian proximity bump
  int skeleton_iterations = 5;
  double geodesic_epsilon = 1e-3;
  int geodesic_sweeps = 0;             // 0: 2 * (width + height)
  bool stop_gradient_weights = false;  // treat w(x) as a constant
  bool entropy_per_pixel = false;      // divide the entropy sum by the pixel count
};

void validate(const LossConfig& config);

struct LossBreakdown {
  double weighted_kl = 0.0;
  double entropy_term = 0.0;
  double r_skel = 0.0;
  double r_geo = 0.0;
  double total = 0.0;
};

inline constexpr double kProbFloor = 1e-12;

// w(x) = exp(-alpha * H(P(x))).
std::vector<double> uncertainty_weights(const PropagatedField& p, double alpha);

// Per-pixel softmax of pixel-major logits.
std::vector<double> softmax_rows(std::span<const double> logits, int num_labels);

struct KlResult {
  double value = 0.0;
  std::vector<double> grad_p;       // dL/dP, pixel-major N * L
  std::vector<double> grad_logits;  // dL/d(logits of Q)
  std::vector<double> grad_w;       // dL/dw per pixel
};

// sum_x w(x) sum_l P ln(P / Q), 0 ln 0 = 0, Q clamped at kProbFloor inside the log.
// P and Q are pixel-major N * L.
KlResult weighted_kl(std::span<const double> p, std::span<const double> q, std::span<const double> w,
                     int num_labels);

// sum_x H(P(x)) and its gradient.
double entropy_term(std::span<const double> p, int num_labels, std::vector<double>* grad_p = nullptr);

// Temperature-smoothed morphology with replicate padding:
// soft_max(a) = kappa * ln(sum exp(a / kappa)), soft_min(a) = -soft_max(-a).
// Erosion is the soft min of the vertical and horizontal 3-pixel soft mins (a plus-shaped
// element); dilation is the soft max over 3x3. The skeleton follows the usual
// erode / open / residual iteration and is clamped to [0, 1].
struct SoftSkeletonTape;

class SoftSkeleton {
 public:
  SoftSkeleton(int width, int height, int iterations, double temperature);
  ~SoftSkeleton();
  SoftSkeleton(SoftSkeleton&&) noexcept;
  SoftSkeleton& operator=(SoftSkeleton&&) noexcept;

  // Forward pass; keeps intermediates for backward().
  const std::vector<double>& forward(std::span<const double> prob);
  // dL/dprob given dL/dskeleton for the most recent forward().
  std::vector<double> backward(std::span<const double> grad_skeleton) const;

 private:
  int width_, height_, iterations_;
  double temperature_;
  std::unique_ptr<SoftSkeletonTape> tape_;
};

std::vector<double> soft_skeletonize(std::span<const double> prob, int width, int height, int iterations,
                                     double temperature);

struct GeodesicOptions {
  double temperature = 0.05;
  double epsilon = 1e-3;
  int max_sweeps = 0;  // 0: 2 * (width + height)
  Connectivity connectivity = Connectivity::Four;
};

struct GeodesicResult {
  std::vector<double> distance;
  int sweeps = 0;
  bool converged = false;
};

// Soft Bellman fixed point D(x) = softmin_{x'} [D(x') + c(x, x')], D(seed) = 0,
// c = step length * (eps + 1 - (P(x) + P(x'))/2). The soft-min at x uses the
// temperature kappa * (eps + 1 - P(x)) / 2, so smoothing stays below kappa times
// the cheapest outgoing edge.
GeodesicResult soft_geodesic(std::span<const double> p_vessel, int width, int height, int seed,
                             const GeodesicOptions& options = {});

// dL/dP_vessel given dL/dD at the fixed point (implicit differentiation).
std::vector<double> soft_geodesic_backward(std::span<const double> p_vessel, int width, int height, int seed,
                                           const GeodesicResult& forward, std::span<const double> grad_distance,
                                           const GeodesicOptions& options = {});

// Exact shortest paths with the same edge costs (oracle).
std::vector<double> hard_geodesic(std::span<const double> p_vessel, int width, int height, int seed,
                                  double epsilon = 1e-3, Connectivity connectivity = Connectivity::Four);

// Skeleton agreement: sum_s sum_{d(x,s) <= 3r} (S(P_v)(x) - n(x,s))^2, n = exp(-d^2 / 2r^2).
double r_skel(std::span<const double> p_vessel, int width, int height, const std::vector<int>& seeds,
              const LossConfig& config, std::vector<double>* grad_p_vessel = nullptr);

// sum_s sum_x P_v(x) D_s(x).
double r_geo(std::span<const double> p_vessel, int width, int height, const std::vector<int>& seeds,
             const LossConfig& config, std::vector<double>* grad_p_vessel = nullptr);

struct ObjectiveResult {
  LossBreakdown loss;
  std::vector<double> grad_p;       // dL/dP, pixel-major N * L
  std::vector<double> grad_logits;  // dL/d(predictor logits)
};

// Full objective. `q_logits` are the predictor's pre-softmax outputs (pixel-major).
ObjectiveResult total_objective(const PropagatedField& p, std::span<const double> q_logits,
                                const SparseLabels& labels, const LossConfig& config);

}  // namespace vrw
