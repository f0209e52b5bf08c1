#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vrw/cues.hpp"
#include "vrw/propagate.hpp"

namespace vrw {

// Per-label adjoint solutions u_l of A^T u_l = dL/dz_l, indexed by system row.
struct AdjointWorkspace {
  std::vector<std::vector<double>> u;
  std::vector<SolveStats> stats;
};

struct GradientBundle {
  std::vector<double> boundary;    // dL/dB per pixel
  std::vector<double> vesselness;  // dL/dV per pixel
  double lambda = 0.0;
  double mu = 0.0;
  CueParams cue_params;            // filled by backprop_cue_head
  std::vector<double> predictor;   // filled by the trainer

  GradientBundle& operator+=(const GradientBundle& other);
};

// Quotient rule through P = Z / sum(Z). Input and output are pixel-major N * L.
// Zero at labeled and unreachable pixels.
std::vector<double> grad_P_to_Z(const PropagatedField& field, std::span<const double> grad_p);

// Solves A^T u = rhs with the forward solver (reusing its LU factorization when
// the direct path was taken).
std::vector<double> adjoint_solve(const HittingSolution& forward, std::span<const double> rhs,
                                  SolveStats* stats = nullptr);

// One adjoint solve per label from per-pixel dL/dZ.
AdjointWorkspace solve_adjoints(const PropagationSystem& system, const HittingSolution& forward,
                                std::span<const double> grad_z);

// Accumulates dL/dB, dL/dV, dL/dlambda, dL/dmu edge by edge from forward and
// adjoint solutions.
GradientBundle grad_transitions(const TransitionMatrix& transitions, const PropagationSystem& system,
                                const HittingSolution& forward, const AdjointWorkspace& adjoint,
                                const CueMaps& cues, const TransitionParams& params);

// grad_P_to_Z, solve_adjoints and grad_transitions in sequence.
GradientBundle backpropagate(const TransitionMatrix& transitions, const PropagationSystem& system,
                             const HittingSolution& forward, const CueMaps& cues,
                             const TransitionParams& params, std::span<const double> grad_p);

// Pushes dL/dB and dL/dV of `bundle` through the cue head into bundle.cue_params.
void backprop_cue_head(GradientBundle& bundle, const FeatureStack& features, const CueParams& params);

struct FiniteDifferenceReport {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates_checked = 0;
};

struct FiniteDifferenceOptions {
  double h = 1e-5;
  // |a - n| / max(|a|, |n|, floor) with floor = max(scale_floor, relative_floor * max|analytic|),
  // so coordinates whose true gradient is zero are judged against round-off in the differences.
  double scale_floor = 1e-8;
  double relative_floor = 1e-5;
  // When nonzero and smaller than the parameter count, a seeded random subset is checked.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
};

// Central differences of `loss` around `params`, compared coordinate-wise to `analytic`.
FiniteDifferenceReport finite_difference_check(const std::function<double(std::span<const double>)>& loss,
                                               std::span<const double> params,
                                               std::span<const double> analytic,
                                               const FiniteDifferenceOptions& options = {});

}  // namespace vrw
