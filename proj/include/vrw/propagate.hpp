#pragma once

#include <memory>
#include <vector>

#include "vrw/cues.hpp"
#include "vrw/grid.hpp"
#include "vrw/solver.hpp"

namespace vrw {

// Which endpoint of a step supplies B and V in the transition weight.
// Source is the literal per-pixel form, where both factors are constant along a
// row and cancel under normalization. Target makes them edge-dependent.
enum class CueSide { Source, Target };

struct TransitionParams {
  double lambda = 2.0;  // orientation sensitivity, >= 0
  double mu = 0.7;      // vesselness influence, in [0, 1]
  CueSide cue_side = CueSide::Target;
  bool use_orientation = true;
};

void validate(const TransitionParams& params);

// 1 - |cos(step angle - orientation(from))|; 0 when no orientation map is given.
// Throws ArgumentError if `to` is not a neighbor of `from`.
double orientation_misalignment(const PixelGrid& grid, const Image* orientation, int from, int to);

// Row-stochastic transitions over all pixels; labeled rows are empty (absorbing).
struct TransitionMatrix {
  PixelGrid grid;
  std::vector<int> row_ptr;       // size N+1, slots for every in-bounds neighbor
  std::vector<int> target;        // neighbor pixel per slot
  std::vector<double> weight;     // unnormalized weight u(x, x')
  std::vector<double> prob;       // t(x, x') = u / Z_x, zero on labeled rows
  std::vector<double> misalign;   // orientation misalignment per slot
  std::vector<double> normalizer; // Z_x
  std::vector<char> absorbing;    // labeled pixels
  std::vector<char> degenerate;   // rows with Z_x == 0 that fell back to uniform
  int degenerate_rows = 0;

  explicit TransitionMatrix(PixelGrid g) : grid(g) {}
  double row_sum(int pixel) const;
};

TransitionMatrix build_transition_matrix(const PixelGrid& grid, const CueMaps& cues,
                                         const TransitionParams& params, const SparseLabels& labels);

// A z_l = b_l over the unlabeled pixels that can reach a labeled pixel.
struct PropagationSystem {
  int num_labels = 2;
  Partition partition;
  std::vector<char> reachable;  // per pixel: labeled, or unlabeled with a path to a label
  std::vector<int> row_of;      // pixel -> system row, -1 when not an unknown
  std::vector<int> pixel_of;    // system row -> pixel
  SparseMatrix matrix;          // I - T_UU
  std::vector<std::vector<double>> rhs;  // b_l = T_UL 1[y = l]
  std::vector<double> slack;             // per row: mass leaving the unknowns, 1 - sum_j T_UU
};

PropagationSystem assemble_system(const TransitionMatrix& transitions, const SparseLabels& labels);

inline constexpr double kReachableThreshold = 1e-12;

struct PropagatedField {
  int width = 0;
  int height = 0;
  int num_labels = 2;
  std::vector<double> probs;    // pixel-major, size N * L
  std::vector<double> z;        // unnormalized hitting probabilities Z_{x,l}, size N * L
  std::vector<char> reachable;
  std::vector<double> entropy;  // nats
  double max_clip = 0.0;        // largest correction applied to bring Z into [0, 1]

  int size() const { return width * height; }
  double p(int pixel, int label) const { return probs[std::size_t(pixel) * num_labels + label]; }
  std::vector<double> channel(int label) const;
  // Argmax label per pixel; ties go to the lowest label id.
  std::vector<int> argmax() const;
};

struct HittingSolution {
  PropagatedField field;
  std::vector<std::vector<double>> z;  // per label, indexed by system row
  std::shared_ptr<const LinearSolver> solver;
  std::vector<SolveStats> stats;
};

HittingSolution solve_system(const PropagationSystem& system, const PixelGrid& grid,
                             const SolverConfig& config = {});

PropagatedField solve_hitting_probabilities(const PropagationSystem& system, const PixelGrid& grid,
                                            const SolverConfig& config = {});

// Convenience: transitions, system and solve in one call.
PropagatedField propagate(const PixelGrid& grid, const CueMaps& cues, const TransitionParams& params,
                          const SparseLabels& labels, const SolverConfig& config = {});

inline constexpr int kBruteForceMaxPixels = 1024;

// Dense absorbing-chain oracle. Refuses grids above kBruteForceMaxPixels.
PropagatedField brute_force_hitting(const PixelGrid& grid, const TransitionMatrix& transitions,
                                    const SparseLabels& labels);

double categorical_entropy(std::span<const double> p);

}  // namespace vrw
