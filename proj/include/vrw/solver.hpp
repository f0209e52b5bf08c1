#pragma once

#include <atomic>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vrw {

// Compressed sparse row matrix.
struct SparseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr{0};
  std::vector<int> col;
  std::vector<double> val;

  struct Triplet {
    int row;
    int col;
    double value;
  };
  // Duplicates are summed.
  static SparseMatrix from_triplets(int rows, int cols, std::vector<Triplet> triplets);
  static SparseMatrix identity(int n);

  int nnz() const { return static_cast<int>(val.size()); }
  void multiply(std::span<const double> x, std::span<double> y) const;
  void multiply_transpose(std::span<const double> x, std::span<double> y) const;
  SparseMatrix transposed() const;
  std::vector<double> diagonal() const;
  double coeff(int r, int c) const;
};

enum class SolverMethod { Auto, ConjugateGradient, CGNR, BiCGSTAB, DirectLU };
enum class Preconditioner { None, Jacobi };

struct SolverConfig {
  SolverMethod method = SolverMethod::Auto;
  Preconditioner preconditioner = Preconditioner::Jacobi;
  double tol = 1e-8;
  int max_iters = 5000;
  // Auto picks the direct path up to this many unknowns (512 x 512). The Krylov
  // methods stall on high-contrast cue maps; the factorization does not.
  int direct_max_unknowns = 262144;
};

void validate(const SolverConfig& config);

struct SolveStats {
  SolverMethod method = SolverMethod::Auto;
  int iterations = 0;
  double residual = 0.0;        // ||Ax - b|| / ||b||
  double backward_error = 0.0;  // ||Ax - b|| / (||A||_inf ||x|| + ||b||), direct path only
};

struct KrylovResult {
  std::vector<double> x;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::string failure;  // breakdown reason when not converged
};

double relative_residual(const SparseMatrix& a, std::span<const double> x, std::span<const double> b);

// Preconditioned CG; requires a symmetric positive-definite matrix.
KrylovResult conjugate_gradient(const SparseMatrix& a, std::span<const double> b, const SolverConfig& cfg);
// CG on the normal equations A^T A x = A^T b, Jacobi-preconditioned by column norms.
KrylovResult cg_normal_equations(const SparseMatrix& a, std::span<const double> b, const SolverConfig& cfg);
// Jacobi-preconditioned BiCGSTAB for general nonsymmetric systems.
KrylovResult bicgstab(const SparseMatrix& a, std::span<const double> b, const SolverConfig& cfg);

// Solves A x = b and A^T x = b for a fixed square matrix. The direct path keeps
// the LU factorization so transposed (adjoint) solves reuse it.
//
// `row_slack`, when given, is the exact escape mass of each row of A = I - T
// (1 - sum_j T_ij, computed from the absorbed transitions rather than by
// subtraction). With it, and off-diagonals <= 0, the direct path eliminates
// without cancellation and stays accurate for nearly closed regions.
class LinearSolver {
 public:
  LinearSolver(SparseMatrix a, SolverConfig config, std::vector<double> row_slack = {});
  ~LinearSolver();
  LinearSolver(const LinearSolver&) = delete;
  LinearSolver& operator=(const LinearSolver&) = delete;

  int size() const { return a_.rows; }
  const SparseMatrix& matrix() const { return a_; }
  SolverMethod method() const { return method_; }

  std::vector<double> solve(std::span<const double> b, SolveStats* stats = nullptr) const;
  std::vector<double> solve_transpose(std::span<const double> b, SolveStats* stats = nullptr) const;

  int forward_solves() const { return forward_count_.load(); }
  int transpose_solves() const { return transpose_count_.load(); }

 private:
  std::vector<double> run(const SparseMatrix& m, std::span<const double> b, bool transpose,
                          SolveStats* stats) const;

  SparseMatrix a_;
  SparseMatrix at_;
  SolverConfig config_;
  SolverMethod method_;
  double norm_inf_ = 0.0;
  double norm_inf_transpose_ = 0.0;
  struct Direct;
  std::unique_ptr<Direct> direct_;
  mutable std::atomic<int> forward_count_{0};
  mutable std::atomic<int> transpose_count_{0};
};

const char* to_string(SolverMethod m);

}  // namespace vrw
