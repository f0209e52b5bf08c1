#include "vrw/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "vrw/errors.hpp"

namespace vrw {

GradientBundle& GradientBundle::operator+=(const GradientBundle& other) {
  auto add = [](std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty()) {
      a = b;
      return;
    }
    if (b.empty()) return;
    if (a.size() != b.size()) throw ArgumentError("GradientBundle: size mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };
  add(boundary, other.boundary);
  add(vesselness, other.vesselness);
  add(predictor, other.predictor);
  lambda += other.lambda;
  mu += other.mu;
  if (cue_params.channels() == 0) {
    cue_params = other.cue_params;
  } else if (other.cue_params.channels() != 0) {
    auto a = cue_params.flatten();
    const auto b = other.cue_params.flatten();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    cue_params.unflatten(a);
  }
  return *this;
}

std::vector<double> grad_P_to_Z(const PropagatedField& field, std::span<const double> grad_p) {
  const int n = field.size();
  const int L = field.num_labels;
  if (grad_p.size() != std::size_t(n) * L) throw ArgumentError("grad_P_to_Z: gradient size mismatch");
  std::vector<double> out(grad_p.size(), 0.0);
  for (int x = 0; x < n; ++x) {
    if (!field.reachable[x]) continue;
    const std::size_t o = std::size_t(x) * L;
    double sum = 0.0, dot = 0.0;
    for (int l = 0; l < L; ++l) {
      sum += field.z[o + l];
      dot += grad_p[o + l] * field.probs[o + l];
    }
    for (int l = 0; l < L; ++l) out[o + l] = (grad_p[o + l] - dot) / sum;
  }
  return out;
}

std::vector<double> adjoint_solve(const HittingSolution& forward, std::span<const double> rhs,
                                  SolveStats* stats) {
  if (!forward.solver) throw ArgumentError("adjoint_solve: forward solution carries no solver");
  if (rhs.size() != std::size_t(forward.solver->size())) throw ArgumentError("adjoint_solve: rhs size mismatch");
  return forward.solver->solve_transpose(rhs, stats);
}

AdjointWorkspace solve_adjoints(const PropagationSystem& system, const HittingSolution& forward,
                                std::span<const double> grad_z) {
  const int L = system.num_labels;
  const int m = static_cast<int>(system.pixel_of.size());
  AdjointWorkspace ws;
  ws.u.resize(L);
  ws.stats.resize(L);
  std::vector<double> rhs(m);
  for (int l = 0; l < L; ++l) {
    for (int r = 0; r < m; ++r) rhs[r] = grad_z[std::size_t(system.pixel_of[r]) * L + l];
    ws.u[l] = adjoint_solve(forward, rhs, &ws.stats[l]);
  }
  return ws;
}

GradientBundle grad_transitions(const TransitionMatrix& t, const PropagationSystem& system,
                                const HittingSolution& forward, const AdjointWorkspace& adjoint,
                                const CueMaps& cues, const TransitionParams& params) {
  const int n = t.grid.size();
  const int L = system.num_labels;
  const auto& zfull = forward.field.z;  // one-hot at labels, 0 where never absorbed
  GradientBundle g;
  g.boundary.assign(n, 0.0);
  g.vesselness.assign(n, 0.0);

  std::vector<double> gslot;
  for (int r = 0; r < static_cast<int>(system.pixel_of.size()); ++r) {
    const int x = system.pixel_of[r];
    if (t.degenerate[x]) continue;
    const int first = t.row_ptr[x], last = t.row_ptr[x + 1];
    // dL/dt(x, y) = sum_l u_l(x) Z(y, l)
    gslot.assign(last - first, 0.0);
    double mean = 0.0;
    for (int s = first; s < last; ++s) {
      const std::size_t zy = std::size_t(t.target[s]) * L;
      double acc = 0.0;
      for (int l = 0; l < L; ++l) acc += adjoint.u[l][r] * zfull[zy + l];
      gslot[s - first] = acc;
      mean += acc * t.prob[s];
    }
    const double inv_z = 1.0 / t.normalizer[x];
    for (int s = first; s < last; ++s) {
      const double du = (gslot[s - first] - mean) * inv_z;  // dL/du(x, y)
      if (du == 0.0) continue;
      const int cue_px = params.cue_side == CueSide::Source ? x : t.target[s];
      const double u = t.weight[s];
      const double v = cues.vesselness.data[cue_px];
      // u without the vesselness factor, computed directly so that a zero factor stays exact
      const double u_bare = std::exp(-cues.boundary.data[cue_px] - params.lambda * t.misalign[s]);
      g.boundary[cue_px] -= du * u;
      g.vesselness[cue_px] += du * u_bare * params.mu;
      g.lambda -= du * u * t.misalign[s];
      g.mu -= du * u_bare * (1.0 - v);
    }
  }
  return g;
}

GradientBundle backpropagate(const TransitionMatrix& transitions, const PropagationSystem& system,
                             const HittingSolution& forward, const CueMaps& cues,
                             const TransitionParams& params, std::span<const double> grad_p) {
  const auto gz = grad_P_to_Z(forward.field, grad_p);
  const auto ws = solve_adjoints(system, forward, gz);
  return grad_transitions(transitions, system, forward, ws, cues, params);
}

void backprop_cue_head(GradientBundle& bundle, const FeatureStack& features, const CueParams& params) {
  bundle.cue_params = cue_head_backward(features, params, bundle.boundary, bundle.vesselness);
}

FiniteDifferenceReport finite_difference_check(const std::function<double(std::span<const double>)>& loss,
                                               std::span<const double> params,
                                               std::span<const double> analytic,
                                               const FiniteDifferenceOptions& options) {
  if (params.size() != analytic.size()) throw ArgumentError("finite_difference_check: size mismatch");
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coordinates != 0 && options.max_coordinates < coords.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }
  double largest = 0.0;
  for (double a : analytic) largest = std::max(largest, std::abs(a));
  const double floor = std::max(options.scale_floor, options.relative_floor * largest);
  std::vector<double> theta(params.begin(), params.end());
  FiniteDifferenceReport rep;
  bool first = true;
  for (std::size_t i : coords) {
    const double orig = theta[i];
    theta[i] = orig + options.h;
    const double fp = loss(theta);
    theta[i] = orig - options.h;
    const double fm = loss(theta);
    theta[i] = orig;
    const double num = (fp - fm) / (2.0 * options.h);
    const double denom = std::max({std::abs(num), std::abs(analytic[i]), floor});
    const double rel = std::abs(num - analytic[i]) / denom;
    if (first || rel > rep.max_relative_error) {
      rep.max_relative_error = rel;
      rep.worst_coordinate = i;
      rep.analytic_at_worst = analytic[i];
      rep.numeric_at_worst = num;
      first = false;
    }
    ++rep.coordinates_checked;
  }
  return rep;
}

}  // namespace vrw
