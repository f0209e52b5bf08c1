#include "vrw/propagate.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

#include "vrw/errors.hpp"

namespace vrw {

void validate(const TransitionParams& params) {
  if (!(params.lambda >= 0.0) || !std::isfinite(params.lambda)) {
    throw ValidationError("transition lambda must be finite and >= 0");
  }
  if (!(params.mu >= 0.0 && params.mu <= 1.0)) {
    throw ValidationError("transition mu must lie in [0, 1]");
  }
}

double orientation_misalignment(const PixelGrid& grid, const Image* orientation, int from, int to) {
  const auto off = grid.step(from, to);
  if (!off) {
    throw ArgumentError("orientation_misalignment: pixels " + std::to_string(from) + " and " +
                        std::to_string(to) + " are not neighbors");
  }
  if (orientation == nullptr) return 0.0;
  const double step_angle = std::atan2(static_cast<double>(off->dy), static_cast<double>(off->dx));
  const double m = 1.0 - std::abs(std::cos(step_angle - orientation->data[from]));
  return std::max(0.0, m);
}

double TransitionMatrix::row_sum(int pixel) const {
  double s = 0.0;
  for (int k = row_ptr[pixel]; k < row_ptr[pixel + 1]; ++k) s += prob[k];
  return s;
}

TransitionMatrix build_transition_matrix(const PixelGrid& grid, const CueMaps& cues,
                                         const TransitionParams& params, const SparseLabels& labels) {
  validate(params);
  validate_labels(grid, labels);
  if (cues.boundary.size() != grid.size() || cues.vesselness.size() != grid.size() ||
      cues.boundary.width != grid.width()) {
    throw ArgumentError("cue maps do not match the grid");
  }
  const Image* orientation =
      (params.use_orientation && cues.orientation.has_value()) ? &*cues.orientation : nullptr;
  if (orientation && orientation->size() != grid.size()) {
    throw ArgumentError("orientation map does not match the grid");
  }

  const int n = grid.size();
  TransitionMatrix t(grid);
  t.row_ptr.assign(n + 1, 0);
  t.normalizer.assign(n, 0.0);
  t.absorbing.assign(n, 0);
  t.degenerate.assign(n, 0);
  for (const auto& e : labels.entries) t.absorbing[e.pixel] = 1;

  const int slots = n * grid.max_degree();
  t.target.reserve(slots);
  t.weight.reserve(slots);
  t.prob.reserve(slots);
  t.misalign.reserve(slots);

  int nb[8];
  for (int x = 0; x < n; ++x) {
    const int deg = grid.neighbors_into(x, nb);
    const int first = static_cast<int>(t.target.size());
    double z = 0.0;
    for (int k = 0; k < deg; ++k) {
      const int y = nb[k];
      const int cue_px = params.cue_side == CueSide::Source ? x : y;
      const double delta = orientation_misalignment(grid, orientation, x, y);
      const double u = std::exp(-cues.boundary.data[cue_px]) * std::exp(-params.lambda * delta) *
                       (1.0 - params.mu * (1.0 - cues.vesselness.data[cue_px]));
      t.target.push_back(y);
      t.weight.push_back(u);
      t.misalign.push_back(delta);
      z += u;
    }
    t.normalizer[x] = z;
    const bool degenerate = !(z > 0.0);
    if (degenerate && !t.absorbing[x]) {
      t.degenerate[x] = 1;
      ++t.degenerate_rows;
    }
    for (int k = 0; k < deg; ++k) {
      double p = 0.0;
      if (!t.absorbing[x]) p = degenerate ? 1.0 / deg : t.weight[first + k] / z;
      t.prob.push_back(p);
    }
    t.row_ptr[x + 1] = static_cast<int>(t.target.size());
  }
  return t;
}

namespace {

std::vector<char> reachable_pixels(const TransitionMatrix& t) {
  const int n = t.grid.size();
  std::vector<char> reach(n, 0);
  std::deque<int> queue;
  for (int x = 0; x < n; ++x) {
    if (t.absorbing[x]) {
      reach[x] = 1;
      queue.push_back(x);
    }
  }
  int nb[8];
  while (!queue.empty()) {
    const int y = queue.front();
    queue.pop_front();
    const int deg = t.grid.neighbors_into(y, nb);
    for (int k = 0; k < deg; ++k) {
      const int x = nb[k];
      if (reach[x]) continue;
      for (int s = t.row_ptr[x]; s < t.row_ptr[x + 1]; ++s) {
        if (t.target[s] == y && t.prob[s] > 0.0) {
          reach[x] = 1;
          queue.push_back(x);
          break;
        }
      }
    }
  }
  return reach;
}

}  // namespace

PropagationSystem assemble_system(const TransitionMatrix& transitions, const SparseLabels& labels) {
  const PixelGrid& grid = transitions.grid;
  PropagationSystem sys;
  sys.num_labels = labels.num_labels;
  sys.partition = partition(grid, labels);
  sys.reachable = reachable_pixels(transitions);
  const int n = grid.size();
  sys.row_of.assign(n, -1);
  for (int x : sys.partition.unlabeled) {
    if (sys.reachable[x]) {
      sys.row_of[x] = static_cast<int>(sys.pixel_of.size());
      sys.pixel_of.push_back(x);
    }
  }
  const int m = static_cast<int>(sys.pixel_of.size());
  sys.rhs.assign(labels.num_labels, std::vector<double>(m, 0.0));
  sys.slack.assign(m, 0.0);
  std::vector<SparseMatrix::Triplet> trip;
  trip.reserve(std::size_t(m) * (grid.max_degree() + 1));
  for (int r = 0; r < m; ++r) {
    const int x = sys.pixel_of[r];
    trip.push_back({r, r, 1.0});
    for (int s = transitions.row_ptr[x]; s < transitions.row_ptr[x + 1]; ++s) {
      const int y = transitions.target[s];
      const double p = transitions.prob[s];
      if (p == 0.0) continue;
      const int lab = sys.partition.label_of[y];
      if (lab >= 0) {
        sys.rhs[lab][r] += p;
        sys.slack[r] += p;
      } else if (sys.row_of[y] >= 0) {
        trip.push_back({r, sys.row_of[y], -p});
      } else {
        sys.slack[r] += p;  // into a pixel that can never be absorbed
      }
    }
  }
  sys.matrix = SparseMatrix::from_triplets(m, m, std::move(trip));
  return sys;
}

double categorical_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

std::vector<double> PropagatedField::channel(int label) const {
  std::vector<double> out(size());
  for (int x = 0; x < size(); ++x) out[x] = p(x, label);
  return out;
}

std::vector<int> PropagatedField::argmax() const {
  std::vector<int> out(size(), 0);
  for (int x = 0; x < size(); ++x) {
    int best = 0;
    for (int l = 1; l < num_labels; ++l) {
      if (p(x, l) > p(x, best)) best = l;
    }
    out[x] = best;
  }
  return out;
}

namespace {

// Normalizes Z into P and fills reachability and entropy.
void finalize_field(PropagatedField& f, const std::vector<char>& graph_reachable) {
  const int n = f.size();
  const int L = f.num_labels;
  f.probs.assign(std::size_t(n) * L, 0.0);
  f.reachable.assign(n, 0);
  f.entropy.assign(n, 0.0);
  for (int x = 0; x < n; ++x) {
    double sum = 0.0;
    for (int l = 0; l < L; ++l) sum += f.z[std::size_t(x) * L + l];
    double* px = f.probs.data() + std::size_t(x) * L;
    if (graph_reachable[x] && sum >= kReachableThreshold) {
      f.reachable[x] = 1;
      for (int l = 0; l < L; ++l) px[l] = f.z[std::size_t(x) * L + l] / sum;
      f.entropy[x] = categorical_entropy({px, std::size_t(L)});
    } else {
      for (int l = 0; l < L; ++l) px[l] = 1.0 / L;
      f.entropy[x] = std::log(static_cast<double>(L));
    }
  }
}

}  // namespace

HittingSolution solve_system(const PropagationSystem& system, const PixelGrid& grid,
                             const SolverConfig& config) {
  HittingSolution sol;
  const int L = system.num_labels;
  auto solver = std::make_shared<LinearSolver>(system.matrix, config, system.slack);
  sol.z.resize(L);
  sol.stats.resize(L);
  for (int l = 0; l < L; ++l) sol.z[l] = solver->solve(system.rhs[l], &sol.stats[l]);
  sol.solver = std::move(solver);

  PropagatedField& f = sol.field;
  f.width = grid.width();
  f.height = grid.height();
  f.num_labels = L;
  const int n = grid.size();
  f.z.assign(std::size_t(n) * L, 0.0);
  for (int x = 0; x < n; ++x) {
    const int lab = system.partition.label_of[x];
    if (lab >= 0) {
      f.z[std::size_t(x) * L + lab] = 1.0;
    } else if (system.row_of[x] >= 0) {
      for (int l = 0; l < L; ++l) {
        // Z lies in [0, 1] exactly; nearly closed regions (exp(-B) tiny on every exit)
        // make A ill-conditioned and the solve can overshoot by more than round-off.
        const double v = sol.z[l][system.row_of[x]];
        const double c = std::clamp(v, 0.0, 1.0);
        f.max_clip = std::max(f.max_clip, std::abs(v - c));
        f.z[std::size_t(x) * L + l] = c;
      }
    }
  }
  finalize_field(f, system.reachable);
  return sol;
}

PropagatedField solve_hitting_probabilities(const PropagationSystem& system, const PixelGrid& grid,
                                            const SolverConfig& config) {
  return solve_system(system, grid, config).field;
}

PropagatedField propagate(const PixelGrid& grid, const CueMaps& cues, const TransitionParams& params,
                          const SparseLabels& labels, const SolverConfig& config) {
  const auto t = build_transition_matrix(grid, cues, params, labels);
  const auto sys = assemble_system(t, labels);
  return solve_hitting_probabilities(sys, grid, config);
}

PropagatedField brute_force_hitting(const PixelGrid& grid, const TransitionMatrix& transitions,
                                    const SparseLabels& labels) {
  const int n = grid.size();
  if (n > kBruteForceMaxPixels) {
    throw ArgumentError("brute_force_hitting: grid of " + std::to_string(n) + " pixels exceeds the " +
                        std::to_string(kBruteForceMaxPixels) + "-pixel oracle limit");
  }
  validate_labels(grid, labels);
  if (labels.entries.empty()) throw ValidationError("no labeled pixels: no absorbing states");
  const int L = labels.num_labels;
  std::vector<int> label_of(n, -1);
  for (const auto& e : labels.entries) label_of[e.pixel] = e.label;

  // Dense transition matrix; labeled rows stay zero.
  std::vector<double> T(std::size_t(n) * n, 0.0);
  for (int x = 0; x < n; ++x) {
    if (label_of[x] >= 0) continue;
    for (int s = transitions.row_ptr[x]; s < transitions.row_ptr[x + 1]; ++s) {
      T[std::size_t(x) * n + transitions.target[s]] += transitions.prob[s];
    }
  }

  // A path with positive probability to some labeled pixel exists iff the
  // path sum is nonzero; find those pixels by fixed-point iteration.
  std::vector<char> reach(n, 0);
  for (int x = 0; x < n; ++x) reach[x] = label_of[x] >= 0;
  for (bool changed = true; changed;) {
    changed = false;
    for (int x = 0; x < n; ++x) {
      if (reach[x]) continue;
      for (int y = 0; y < n; ++y) {
        if (reach[y] && T[std::size_t(x) * n + y] > 0.0) {
          reach[x] = 1;
          changed = true;
          break;
        }
      }
    }
  }

  std::vector<int> unknowns;
  std::vector<int> pos(n, -1);
  for (int x = 0; x < n; ++x) {
    if (label_of[x] < 0 && reach[x]) {
      pos[x] = static_cast<int>(unknowns.size());
      unknowns.push_back(x);
    }
  }
  const int m = static_cast<int>(unknowns.size());
  // Augmented system [I - T_UU | T_UL onehot] solved by Gaussian elimination with partial pivoting.
  const int cols = m + L;
  std::vector<double> M(std::size_t(m) * cols, 0.0);
  for (int i = 0; i < m; ++i) {
    const int x = unknowns[i];
    M[std::size_t(i) * cols + i] = 1.0;
    for (int y = 0; y < n; ++y) {
      const double p = T[std::size_t(x) * n + y];
      if (p == 0.0) continue;
      if (label_of[y] >= 0) {
        M[std::size_t(i) * cols + m + label_of[y]] += p;
      } else if (pos[y] >= 0) {
        M[std::size_t(i) * cols + pos[y]] -= p;
      }
    }
  }
  for (int c = 0; c < m; ++c) {
    int piv = c;
    for (int r = c + 1; r < m; ++r) {
      if (std::abs(M[std::size_t(r) * cols + c]) > std::abs(M[std::size_t(piv) * cols + c])) piv = r;
    }
    if (M[std::size_t(piv) * cols + c] == 0.0) throw SolverError("oracle: singular system", 0.0, 0);
    if (piv != c) {
      for (int k = 0; k < cols; ++k) std::swap(M[std::size_t(piv) * cols + k], M[std::size_t(c) * cols + k]);
    }
    const double d = M[std::size_t(c) * cols + c];
    for (int r = c + 1; r < m; ++r) {
      const double f = M[std::size_t(r) * cols + c] / d;
      if (f == 0.0) continue;
      for (int k = c; k < cols; ++k) M[std::size_t(r) * cols + k] -= f * M[std::size_t(c) * cols + k];
    }
  }
  std::vector<double> Z(std::size_t(m) * L, 0.0);
  for (int l = 0; l < L; ++l) {
    for (int r = m - 1; r >= 0; --r) {
      double s = M[std::size_t(r) * cols + m + l];
      for (int k = r + 1; k < m; ++k) s -= M[std::size_t(r) * cols + k] * Z[std::size_t(k) * L + l];
      Z[std::size_t(r) * L + l] = s / M[std::size_t(r) * cols + r];
    }
  }

  PropagatedField f;
  f.width = grid.width();
  f.height = grid.height();
  f.num_labels = L;
  f.z.assign(std::size_t(n) * L, 0.0);
  for (int x = 0; x < n; ++x) {
    if (label_of[x] >= 0) {
      f.z[std::size_t(x) * L + label_of[x]] = 1.0;
    } else if (pos[x] >= 0) {
      for (int l = 0; l < L; ++l) f.z[std::size_t(x) * L + l] = Z[std::size_t(pos[x]) * L + l];
    }
  }
  finalize_field(f, reach);
  return f;
}

}  // namespace vrw
