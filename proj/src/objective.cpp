#include "vrw/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>

#include "vrw/errors.hpp"
#include "vrw/solver.hpp"

namespace vrw {

void validate(const LossConfig& c) {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(std::string("loss ") + name + " must be finite and >= 0");
  };
  nonneg(c.alpha, "alpha");  // 0 switches the uncertainty weighting off
  nonneg(c.beta, "beta");
  nonneg(c.gamma, "gamma");
  nonneg(c.eta_skel, "eta_skel");
  nonneg(c.eta_geo, "eta_geo");
  if (c.vessel_label < 0) throw ValidationError("vessel label must be >= 0");
  if (!(c.soft_min_temperature > 0.0)) throw ValidationError("soft-min temperature must be > 0");
  if (!(c.near_radius > 0.0)) throw ValidationError("near radius must be > 0");
  if (c.skeleton_iterations < 1) throw ValidationError("skeleton iterations must be >= 1");
  if (!(c.geodesic_epsilon > 0.0)) throw ValidationError("geodesic epsilon must be > 0");
  if (c.geodesic_sweeps < 0) throw ValidationError("geodesic sweeps must be >= 0");
}

std::vector<double> uncertainty_weights(const PropagatedField& p, double alpha) {
  if (!(alpha >= 0.0)) throw ArgumentError("uncertainty_weights: alpha must be >= 0");
  // exp(-alpha H) evaluated in base 2, which is exact for dyadic distributions
  std::vector<double> w(p.size());
  for (int x = 0; x < p.size(); ++x) {
    double plog2p = 0.0;
    for (int l = 0; l < p.num_labels; ++l) {
      const double v = p.p(x, l);
      if (v > 0.0) plog2p += v * std::log2(v);
    }
    w[x] = std::exp2(alpha * plog2p);
  }
  return w;
}

std::vector<double> softmax_rows(std::span<const double> logits, int num_labels) {
  std::vector<double> out(logits.size());
  for (std::size_t o = 0; o < logits.size(); o += num_labels) {
    double m = logits[o];
    for (int l = 1; l < num_labels; ++l) m = std::max(m, logits[o + l]);
    double s = 0.0;
    for (int l = 0; l < num_labels; ++l) s += out[o + l] = std::exp(logits[o + l] - m);
    for (int l = 0; l < num_labels; ++l) out[o + l] /= s;
  }
  return out;
}

namespace {

double safe_log(double v) { return std::log(std::max(v, kProbFloor)); }

}  // namespace

KlResult weighted_kl(std::span<const double> p, std::span<const double> q, std::span<const double> w,
                     int num_labels) {
  if (p.size() != q.size() || p.size() != w.size() * num_labels) throw ArgumentError("weighted_kl: shape mismatch");
  KlResult r;
  r.grad_p.assign(p.size(), 0.0);
  r.grad_logits.assign(p.size(), 0.0);
  r.grad_w.assign(w.size(), 0.0);
  for (std::size_t x = 0; x < w.size(); ++x) {
    const std::size_t o = x * num_labels;
    double kl = 0.0, mass = 0.0;
    for (int l = 0; l < num_labels; ++l) {
      const double pl = p[o + l];
      mass += pl;
      if (pl > 0.0) kl += pl * (std::log(pl) - safe_log(q[o + l]));
      r.grad_p[o + l] = w[x] * (safe_log(pl) - safe_log(q[o + l]) + 1.0);
    }
    for (int l = 0; l < num_labels; ++l) r.grad_logits[o + l] = w[x] * (q[o + l] * mass - p[o + l]);
    r.grad_w[x] = kl;
    r.value += w[x] * kl;
  }
  return r;
}

double entropy_term(std::span<const double> p, int num_labels, std::vector<double>* grad_p) {
  double total = 0.0;
  if (grad_p) grad_p->assign(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total -= p[i] * std::log(p[i]);
    if (grad_p) (*grad_p)[i] = -(safe_log(p[i]) + 1.0);
  }
  (void)num_labels;
  return total;
}

// ---------------------------------------------------------------------------
// Soft morphology

namespace {

// Log-sum-exp pools with replicate padding. sign = +1 for soft max, -1 for soft min.
inline int clampi(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

enum class Window { Square, Vertical, Horizontal };

int window_indices(Window win, int x, int y, int w, int h, int* idx) {
  int k = 0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if ((win == Window::Vertical && dx != 0) || (win == Window::Horizontal && dy != 0)) continue;
      idx[k++] = clampi(y + dy, h - 1) * w + clampi(x + dx, w - 1);
    }
  }
  return k;
}

std::vector<double> soft_pool(std::span<const double> a, int w, int h, double kappa, double sign, Window win) {
  std::vector<double> out(a.size());
  int idx[9];
  double v[9];
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int n = window_indices(win, x, y, w, h, idx);
      double m = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < n; ++k) m = std::max(m, v[k] = sign * a[idx[k]]);
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += std::exp((v[k] - m) / kappa);
      out[y * w + x] = sign * (m + kappa * std::log(s));
    }
  }
  return out;
}

// Adds d(pool)/d(a)^T g into grad_a. Pool weights are the window softmax of sign * a / kappa.
void soft_pool_backward(std::span<const double> a, int w, int h, double kappa, double sign, Window win,
                        std::span<const double> g, std::vector<double>& grad_a) {
  int idx[9];
  double v[9];
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gi = g[y * w + x];
      if (gi == 0.0) continue;
      const int n = window_indices(win, x, y, w, h, idx);
      double m = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < n; ++k) m = std::max(m, v[k] = sign * a[idx[k]]);
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += v[k] = std::exp((v[k] - m) / kappa);
      for (int k = 0; k < n; ++k) grad_a[idx[k]] += gi * v[k] / s;
    }
  }
}

// Erosion: soft min over the vertical and horizontal 3-pixel pools, combined by a
// two-term soft min. Its undershoot on straight edges matches the overshoot of
// the 3x3 dilation, so the opening residual vanishes along flat boundaries.
std::vector<double> soft_erode(std::span<const double> a, int w, int h, double kappa) {
  const auto v = soft_pool(a, w, h, kappa, -1.0, Window::Vertical);
  const auto hz = soft_pool(a, w, h, kappa, -1.0, Window::Horizontal);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double m = std::min(v[i], hz[i]);
    out[i] = m - kappa * std::log(std::exp(-(v[i] - m) / kappa) + std::exp(-(hz[i] - m) / kappa));
  }
  return out;
}

void soft_erode_backward(std::span<const double> a, int w, int h, double kappa, std::span<const double> g,
                         std::vector<double>& grad_a) {
  const auto v = soft_pool(a, w, h, kappa, -1.0, Window::Vertical);
  const auto hz = soft_pool(a, w, h, kappa, -1.0, Window::Horizontal);
  std::vector<double> gv(a.size()), gh(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double m = std::min(v[i], hz[i]);
    const double ev = std::exp(-(v[i] - m) / kappa), eh = std::exp(-(hz[i] - m) / kappa);
    gv[i] = g[i] * ev / (ev + eh);
    gh[i] = g[i] * eh / (ev + eh);
  }
  soft_pool_backward(a, w, h, kappa, -1.0, Window::Vertical, gv, grad_a);
  soft_pool_backward(a, w, h, kappa, -1.0, Window::Horizontal, gh, grad_a);
}

}  // namespace

struct SoftSkeletonTape {
  // img[j], j = 0..k+1, img[j+1] = erode(img[j]); open[j] = dilate(img[j+1]);
  // diff[j] = img[j] - open[j]; delta[j] = relu(diff[j]);
  // skel[0] = delta[0]; pre[j] = delta[j] - skel[j-1] * delta[j]; skel[j] = skel[j-1] + relu(pre[j]).
  std::vector<std::vector<double>> img, open, diff, delta, skel, pre;
  std::vector<double> output;
};

SoftSkeleton::SoftSkeleton(int width, int height, int iterations, double temperature)
    : width_(width), height_(height), iterations_(iterations), temperature_(temperature),
      tape_(std::make_unique<SoftSkeletonTape>()) {
  if (width < 1 || height < 1) throw ArgumentError("soft skeleton: empty map");
  if (iterations < 1) throw ArgumentError("soft skeleton: iterations must be >= 1");
  if (!(temperature > 0.0)) throw ArgumentError("soft skeleton: temperature must be > 0");
}

SoftSkeleton::~SoftSkeleton() = default;
SoftSkeleton::SoftSkeleton(SoftSkeleton&&) noexcept = default;
SoftSkeleton& SoftSkeleton::operator=(SoftSkeleton&&) noexcept = default;

const std::vector<double>& SoftSkeleton::forward(std::span<const double> prob) {
  const int n = width_ * height_;
  if (prob.size() != std::size_t(n)) throw ArgumentError("soft skeleton: size mismatch");
  auto& t = *tape_;
  const int k = iterations_;
  t.img.assign(k + 2, {});
  t.open.assign(k + 1, {});
  t.diff.assign(k + 1, {});
  t.delta.assign(k + 1, {});
  t.skel.assign(k + 1, {});
  t.pre.assign(k + 1, {});
  t.img[0].assign(prob.begin(), prob.end());
  for (int j = 0; j <= k; ++j) {
    t.img[j + 1] = soft_erode(t.img[j], width_, height_, temperature_);
    t.open[j] = soft_pool(t.img[j + 1], width_, height_, temperature_, +1.0, Window::Square);
    t.diff[j].resize(n);
    t.delta[j].resize(n);
    for (int i = 0; i < n; ++i) {
      t.diff[j][i] = t.img[j][i] - t.open[j][i];
      t.delta[j][i] = std::max(0.0, t.diff[j][i]);
    }
    if (j == 0) {
      t.skel[0] = t.delta[0];
      continue;
    }
    t.pre[j].resize(n);
    t.skel[j].resize(n);
    for (int i = 0; i < n; ++i) {
      t.pre[j][i] = t.delta[j][i] - t.skel[j - 1][i] * t.delta[j][i];
      t.skel[j][i] = t.skel[j - 1][i] + std::max(0.0, t.pre[j][i]);
    }
  }
  t.output = t.skel[k];
  for (double& v : t.output) v = std::clamp(v, 0.0, 1.0);
  return t.output;
}

std::vector<double> SoftSkeleton::backward(std::span<const double> grad_skeleton) const {
  const int n = width_ * height_;
  const auto& t = *tape_;
  if (t.img.empty()) throw ArgumentError("soft skeleton: backward before forward");
  if (grad_skeleton.size() != std::size_t(n)) throw ArgumentError("soft skeleton: gradient size mismatch");
  const int k = iterations_;
  std::vector<double> gs(grad_skeleton.begin(), grad_skeleton.end());
  for (int i = 0; i < n; ++i) {
    if (t.skel[k][i] < 0.0 || t.skel[k][i] > 1.0) gs[i] = 0.0;  // clamped
  }
  std::vector<std::vector<double>> gdelta(k + 1, std::vector<double>(n, 0.0));
  for (int j = k; j >= 1; --j) {
    for (int i = 0; i < n; ++i) {
      if (t.pre[j][i] > 0.0) {
        gdelta[j][i] = gs[i] * (1.0 - t.skel[j - 1][i]);
        gs[i] -= gs[i] * t.delta[j][i];
      }
    }
  }
  gdelta[0] = gs;

  std::vector<double> gimg_next(n, 0.0);  // gradient flowing into img[j+1]
  std::vector<double> gimg(n), gerode(n), gopen(n);
  for (int j = k; j >= 0; --j) {
    std::fill(gimg.begin(), gimg.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const double gd = t.diff[j][i] > 0.0 ? gdelta[j][i] : 0.0;
      gimg[i] = gd;
      gopen[i] = -gd;
    }
    // img[j+1] feeds open[j] and, for j < k, the next stage
    gerode = gimg_next;
    soft_pool_backward(t.img[j + 1], width_, height_, temperature_, +1.0, Window::Square, gopen, gerode);
    soft_erode_backward(t.img[j], width_, height_, temperature_, gerode, gimg);
    gimg_next = gimg;
  }
  return gimg_next;
}

std::vector<double> soft_skeletonize(std::span<const double> prob, int width, int height, int iterations,
                                     double temperature) {
  SoftSkeleton s(width, height, iterations, temperature);
  return s.forward(prob);
}

// ---------------------------------------------------------------------------
// Geodesics

namespace {

struct GeodesicGrid {
  PixelGrid grid;
  std::span<const double> p;
  double eps;

  double length(int x, int y) const {
    return (grid.x_of(x) != grid.x_of(y) && grid.y_of(x) != grid.y_of(y)) ? std::numbers::sqrt2 : 1.0;
  }
  double cost(int x, int y) const { return length(x, y) * (eps + 1.0 - 0.5 * (p[x] + p[y])); }
};

void check_geodesic_inputs(std::span<const double> p, int width, int height, int seed) {
  if (width < 1 || height < 1 || p.size() != std::size_t(width) * height) {
    throw ArgumentError("geodesic: probability map does not match the grid");
  }
  if (seed < 0 || seed >= width * height) throw ArgumentError("geodesic: seed outside the grid");
}

// Softmax weights and soft-min value at x over its neighbors.
struct LocalSoftMin {
  int deg = 0;
  int nb[8];
  double a[8];
  double w[8];
  double value = 0.0;
  double tau = 0.0;
};

void local_soft_min(const GeodesicGrid& g, std::span<const double> d, int x, double kappa, LocalSoftMin& out) {
  out.deg = g.grid.neighbors_into(x, out.nb);
  out.tau = kappa * 0.5 * (g.eps + 1.0 - g.p[x]);
  double m = std::numeric_limits<double>::infinity();
  for (int k = 0; k < out.deg; ++k) {
    out.a[k] = d[out.nb[k]] + g.cost(x, out.nb[k]);
    m = std::min(m, out.a[k]);
  }
  double s = 0.0;
  for (int k = 0; k < out.deg; ++k) {
    out.w[k] = std::isfinite(out.a[k]) ? std::exp(-(out.a[k] - m) / out.tau) : 0.0;
    s += out.w[k];
  }
  for (int k = 0; k < out.deg; ++k) out.w[k] /= s;
  out.value = m - out.tau * std::log(s);
}

int default_sweeps(int width, int height, int requested) { return requested > 0 ? requested : 2 * (width + height); }

}  // namespace

std::vector<double> hard_geodesic(std::span<const double> p_vessel, int width, int height, int seed,
                                  double epsilon, Connectivity connectivity) {
  check_geodesic_inputs(p_vessel, width, height, seed);
  const GeodesicGrid g{PixelGrid(width, height, connectivity), p_vessel, epsilon};
  std::vector<double> d(p_vessel.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  d[seed] = 0.0;
  pq.push({0.0, seed});
  int nb[8];
  while (!pq.empty()) {
    const auto [dist, x] = pq.top();
    pq.pop();
    if (dist > d[x]) continue;
    const int deg = g.grid.neighbors_into(x, nb);
    for (int k = 0; k < deg; ++k) {
      const double nd = dist + g.cost(x, nb[k]);
      if (nd < d[nb[k]]) {
        d[nb[k]] = nd;
        pq.push({nd, nb[k]});
      }
    }
  }
  return d;
}

GeodesicResult soft_geodesic(std::span<const double> p_vessel, int width, int height, int seed,
                             const GeodesicOptions& options) {
  check_geodesic_inputs(p_vessel, width, height, seed);
  if (!(options.temperature > 0.0)) throw ArgumentError("geodesic: temperature must be > 0");
  const GeodesicGrid g{PixelGrid(width, height, options.connectivity), p_vessel, options.epsilon};
  GeodesicResult r;
  // Hard distances are an upper bound on the soft fixed point; sweeps only lower them.
  r.distance = hard_geodesic(p_vessel, width, height, seed, options.epsilon, options.connectivity);
  const int max_sweeps = default_sweeps(width, height, options.max_sweeps);
  LocalSoftMin lm;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const bool flip_y = sweep % 2 == 1;
    const bool flip_x = (sweep / 2) % 2 == 1;
    double change = 0.0, largest = 0.0;
    for (int yi = 0; yi < height; ++yi) {
      const int y = flip_y ? height - 1 - yi : yi;
      for (int xi = 0; xi < width; ++xi) {
        const int x = y * width + (flip_x ? width - 1 - xi : xi);
        if (x == seed) continue;
        local_soft_min(g, r.distance, x, options.temperature, lm);
        change = std::max(change, std::abs(lm.value - r.distance[x]));
        r.distance[x] = lm.value;
        largest = std::max(largest, lm.value);
      }
    }
    r.sweeps = sweep + 1;
    if (change <= 1e-15 * std::max(1.0, largest)) {
      r.converged = true;
      break;
    }
  }
  return r;
}

std::vector<double> soft_geodesic_backward(std::span<const double> p_vessel, int width, int height, int seed,
                                           const GeodesicResult& forward, std::span<const double> grad_distance,
                                           const GeodesicOptions& options) {
  check_geodesic_inputs(p_vessel, width, height, seed);
  const int n = width * height;
  if (grad_distance.size() != std::size_t(n) || forward.distance.size() != std::size_t(n)) {
    throw ArgumentError("geodesic backward: size mismatch");
  }
  const GeodesicGrid g{PixelGrid(width, height, options.connectivity), p_vessel, options.epsilon};
  const double kappa = options.temperature;

  // Fixed point D = F(D, P): solve (I - W)^T v = dL/dD with W the soft-min weights.
  std::vector<LocalSoftMin> local(n);
  std::vector<SparseMatrix::Triplet> trip;
  trip.reserve(std::size_t(n) * (g.grid.max_degree() + 1));
  for (int x = 0; x < n; ++x) {
    trip.push_back({x, x, 1.0});
    if (x == seed) continue;
    local_soft_min(g, forward.distance, x, kappa, local[x]);
    for (int k = 0; k < local[x].deg; ++k) trip.push_back({local[x].nb[k], x, -local[x].w[k]});
  }
  // v_y = g_y + sum_x W(x, y) v_x. Soft-min weight flows almost entirely towards smaller
  // D, so Gauss-Seidel in decreasing-D order converges in a few sweeps; the sparse
  // solver is the fallback.
  std::vector<int> in_ptr(n + 1, 0), in_src;
  std::vector<double> in_w;
  for (int x = 0; x < n; ++x) {
    if (x == seed) continue;
    for (int k = 0; k < local[x].deg; ++k) ++in_ptr[local[x].nb[k] + 1];
  }
  for (int y = 0; y < n; ++y) in_ptr[y + 1] += in_ptr[y];
  in_src.resize(in_ptr[n]);
  in_w.resize(in_ptr[n]);
  {
    std::vector<int> fill(in_ptr.begin(), in_ptr.end() - 1);
    for (int x = 0; x < n; ++x) {
      if (x == seed) continue;
      for (int k = 0; k < local[x].deg; ++k) {
        const int slot = fill[local[x].nb[k]]++;
        in_src[slot] = x;
        in_w[slot] = local[x].w[k];
      }
    }
  }
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return forward.distance[a] > forward.distance[b]; });
  std::vector<double> v(grad_distance.begin(), grad_distance.end());
  bool converged = false;
  for (int sweep = 0; sweep < 100 && !converged; ++sweep) {
    double change = 0.0, scale = 0.0;
    for (int y : order) {
      double acc = grad_distance[y];
      for (int s = in_ptr[y]; s < in_ptr[y + 1]; ++s) acc += in_w[s] * v[in_src[s]];
      change = std::max(change, std::abs(acc - v[y]));
      scale = std::max(scale, std::abs(acc));
      v[y] = acc;
    }
    converged = change <= 1e-15 * scale;
  }
  if (!converged) {
    SolverConfig cfg;
    cfg.tol = 1e-12;
    LinearSolver solver(SparseMatrix::from_triplets(n, n, std::move(trip)), cfg);
    v = solver.solve(grad_distance);
  }

  std::vector<double> grad(n, 0.0);
  for (int x = 0; x < n; ++x) {
    if (x == seed || v[x] == 0.0) continue;
    const auto& lm = local[x];
    double mean_a = 0.0;
    for (int k = 0; k < lm.deg; ++k) {
      const int y = lm.nb[k];
      mean_a += lm.w[k] * lm.a[k];
      // dc/dP(x) = dc/dP(y) = -length / 2
      const double gc = -0.5 * g.length(x, y) * v[x] * lm.w[k];
      grad[x] += gc;
      grad[y] += gc;
    }
    // d softmin / d tau = (value - sum w a) / tau, d tau / dP(x) = -kappa / 2
    grad[x] += v[x] * (forward.distance[x] - mean_a) / lm.tau * (-0.5 * kappa);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Topology terms

double r_skel(std::span<const double> p_vessel, int width, int height, const std::vector<int>& seeds,
              const LossConfig& config, std::vector<double>* grad_p_vessel) {
  const int n = width * height;
  if (p_vessel.size() != std::size_t(n)) throw ArgumentError("r_skel: size mismatch");
  if (grad_p_vessel) grad_p_vessel->assign(n, 0.0);
  if (seeds.empty()) return 0.0;
  SoftSkeleton skel(width, height, config.skeleton_iterations, config.soft_min_temperature);
  const auto& s = skel.forward(p_vessel);
  const double r = config.near_radius;
  const int reach = static_cast<int>(std::floor(3.0 * r));
  std::vector<double> gs(n, 0.0);
  double total = 0.0;
  for (int seed : seeds) {
    if (seed < 0 || seed >= n) throw ArgumentError("r_skel: seed outside the grid");
    const int sx = seed % width, sy = seed / width;
    for (int y = std::max(0, sy - reach); y <= std::min(height - 1, sy + reach); ++y) {
      for (int x = std::max(0, sx - reach); x <= std::min(width - 1, sx + reach); ++x) {
        const double d2 = double(x - sx) * (x - sx) + double(y - sy) * (y - sy);
        if (d2 > 9.0 * r * r) continue;
        const double near = std::exp(-d2 / (2.0 * r * r));
        const double e = s[y * width + x] - near;
        total += e * e;
        gs[y * width + x] += 2.0 * e;
      }
    }
  }
  if (grad_p_vessel) *grad_p_vessel = skel.backward(gs);
  return total;
}

double r_geo(std::span<const double> p_vessel, int width, int height, const std::vector<int>& seeds,
             const LossConfig& config, std::vector<double>* grad_p_vessel) {
  const int n = width * height;
  if (p_vessel.size() != std::size_t(n)) throw ArgumentError("r_geo: size mismatch");
  if (grad_p_vessel) grad_p_vessel->assign(n, 0.0);
  GeodesicOptions opt;
  opt.temperature = config.soft_min_temperature;
  opt.epsilon = config.geodesic_epsilon;
  opt.max_sweeps = config.geodesic_sweeps;
  double total = 0.0;
  for (int seed : seeds) {
    const auto geo = soft_geodesic(p_vessel, width, height, seed, opt);
    for (int x = 0; x < n; ++x) total += p_vessel[x] * geo.distance[x];
    if (grad_p_vessel) {
      const auto gd = soft_geodesic_backward(p_vessel, width, height, seed, geo, p_vessel, opt);
      for (int x = 0; x < n; ++x) (*grad_p_vessel)[x] += geo.distance[x] + gd[x];
    }
  }
  return total;
}

ObjectiveResult total_objective(const PropagatedField& p, std::span<const double> q_logits,
                                const SparseLabels& labels, const LossConfig& config) {
  validate(config);
  const int n = p.size();
  const int L = p.num_labels;
  if (q_logits.size() != p.probs.size()) throw ArgumentError("total_objective: logits shape mismatch");
  if (config.vessel_label >= L) throw ValidationError("vessel label exceeds the label count");

  ObjectiveResult out;
  const auto q = softmax_rows(q_logits, L);
  const auto w = uncertainty_weights(p, config.alpha);
  auto kl = weighted_kl(p.probs, q, w, L);
  out.loss.weighted_kl = kl.value;
  out.grad_p = std::move(kl.grad_p);
  out.grad_logits = std::move(kl.grad_logits);
  if (!config.stop_gradient_weights) {
    // dw/dP_l = alpha * w * (ln P_l + 1)
    for (int x = 0; x < n; ++x) {
      const double gw = kl.grad_w[x] * config.alpha * w[x];
      for (int l = 0; l < L; ++l) {
        out.grad_p[std::size_t(x) * L + l] += gw * (safe_log(p.probs[std::size_t(x) * L + l]) + 1.0);
      }
    }
  }

  std::vector<double> gh;
  const double norm = config.entropy_per_pixel ? 1.0 / n : 1.0;
  out.loss.entropy_term = entropy_term(p.probs, L, &gh) * norm;
  for (std::size_t i = 0; i < gh.size(); ++i) out.grad_p[i] += config.beta * norm * gh[i];

  const auto seeds = labels.centerline_pixels();
  if (config.gamma > 0.0 && !seeds.empty()) {
    const auto pv = p.channel(config.vessel_label);
    std::vector<double> gskel, ggeo;
    if (config.eta_skel > 0.0) out.loss.r_skel = r_skel(pv, p.width, p.height, seeds, config, &gskel);
    if (config.eta_geo > 0.0) out.loss.r_geo = r_geo(pv, p.width, p.height, seeds, config, &ggeo);
    for (int x = 0; x < n; ++x) {
      double g = 0.0;
      if (!gskel.empty()) g += config.eta_skel * gskel[x];
      if (!ggeo.empty()) g += config.eta_geo * ggeo[x];
      out.grad_p[std::size_t(x) * L + config.vessel_label] += config.gamma * g;
    }
  }
  out.loss.total = out.loss.weighted_kl + config.beta * out.loss.entropy_term +
                   config.gamma * (config.eta_skel * out.loss.r_skel + config.eta_geo * out.loss.r_geo);
  return out;
}

}  // namespace vrw
