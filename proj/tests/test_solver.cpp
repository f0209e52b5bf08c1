#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "test_support.hpp"
#include "vrw/errors.hpp"
#include "vrw/solver.hpp"

using namespace vrw;
using vrw::testing::dense_solve;
using vrw::testing::max_abs_diff;

namespace {

SparseMatrix to_sparse(const std::vector<double>& dense, int n) {
  std::vector<SparseMatrix::Triplet> t;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (dense[r * n + c] != 0.0) t.push_back({r, c, dense[r * n + c]});
    }
  }
  return SparseMatrix::from_triplets(n, n, t);
}

std::vector<double> random_spd(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g;
  std::vector<double> m(n * n), a(n * n, 0.0);
  for (double& v : m) v = g(rng);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      for (int k = 0; k < n; ++k) a[r * n + c] += m[k * n + r] * m[k * n + c];
    }
    a[r * n + r] += n;
  }
  return a;
}

}  // namespace

TEST_CASE("CG on the identity returns b in one iteration") {
  std::vector<double> b{1.0, -2.0, 3.5, 0.25};
  SolverConfig cfg;
  const auto r = conjugate_gradient(SparseMatrix::identity(4), b, cfg);
  CHECK(r.converged);
  CHECK(r.iterations <= 1);
  CHECK(max_abs_diff(r.x, b) == 0.0);
}

TEST_CASE("Krylov solvers match a dense direct solve on random SPD systems") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 50;
    const auto dense = random_spd(rng, n);
    std::vector<double> b(n);
    for (double& v : b) v = g(rng);
    const auto expected = dense_solve(dense, b);
    const auto a = to_sparse(dense, n);
    SolverConfig cfg;
    cfg.tol = 1e-12;
    for (auto fn : {conjugate_gradient, cg_normal_equations, bicgstab}) {
      const auto r = fn(a, b, cfg);
      REQUIRE(r.converged);
      CHECK(max_abs_diff(r.x, expected) < 1e-8);
    }
  }
}

TEST_CASE("nonsymmetric systems: BiCGSTAB, CGNR and direct LU agree with dense") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int n = 30;
  std::vector<double> dense(n * n, 0.0);
  for (int r = 0; r < n; ++r) {
    double off = 0.0;
    for (int c = 0; c < n; ++c) {
      if (r != c && u(rng) > 0.6) {
        dense[r * n + c] = u(rng);
        off += std::abs(dense[r * n + c]);
      }
    }
    dense[r * n + r] = off + 0.5;
  }
  std::vector<double> b(n);
  for (double& v : b) v = u(rng);
  const auto expected = dense_solve(dense, b);
  // transpose system
  std::vector<double> dense_t(n * n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) dense_t[c * n + r] = dense[r * n + c];
  }
  const auto expected_t = dense_solve(dense_t, b);

  for (auto method : {SolverMethod::BiCGSTAB, SolverMethod::CGNR, SolverMethod::DirectLU}) {
    SolverConfig cfg;
    cfg.method = method;
    cfg.tol = 1e-12;
    LinearSolver solver(to_sparse(dense, n), cfg);
    SolveStats st;
    CHECK(max_abs_diff(solver.solve(b, &st), expected) < 1e-8);
    CHECK(st.residual < 1e-12);
    CHECK(max_abs_diff(solver.solve_transpose(b), expected_t) < 1e-8);
    CHECK(solver.forward_solves() == 1);
    CHECK(solver.transpose_solves() == 1);
  }
}

TEST_CASE("zero right-hand side gives zero without iterating") {
  SolverConfig cfg;
  cfg.method = SolverMethod::BiCGSTAB;
  LinearSolver solver(SparseMatrix::identity(3), cfg);
  std::vector<double> zero(3, 0.0);
  SolveStats st;
  CHECK(solver.solve(zero, &st) == zero);
  CHECK(st.iterations == 0);
}

TEST_CASE("non-convergence raises SolverError carrying the residual") {
  // CG on an indefinite matrix breaks down
  const auto a = SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {1, 1, -1.0}, {0, 1, 2.0}, {1, 0, 2.0}});
  SolverConfig cfg;
  cfg.method = SolverMethod::ConjugateGradient;
  cfg.max_iters = 1;
  LinearSolver solver(a, cfg);
  std::vector<double> b{1.0, 1.0};
  try {
    (void)solver.solve(b);
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.residual() > cfg.tol);
  }
}

TEST_CASE("sparse matrix basics") {
  const auto a = SparseMatrix::from_triplets(2, 3, {{0, 2, 1.0}, {1, 0, 2.0}, {0, 2, 0.5}});
  CHECK(a.nnz() == 2);
  CHECK(a.coeff(0, 2) == 1.5);
  CHECK(a.coeff(1, 1) == 0.0);
  const auto t = a.transposed();
  CHECK(t.rows == 3);
  CHECK(t.coeff(2, 0) == 1.5);
  CHECK(t.coeff(0, 1) == 2.0);
}

TEST_CASE("slack-aware direct path resolves escape mass below machine epsilon") {
  // Two states that bounce between each other; state 0 escapes to label A with
  // e0, state 1 to label B with e1. 1 - e rounds to 1, so only the slack carries
  // the escape: z0 = e0 / (e0 + e1 - e0 e1).
  const double e0 = 1e-20, e1 = 3e-20;
  const auto a = SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {0, 1, -(1.0 - e0)}, {1, 0, -(1.0 - e1)}, {1, 1, 1.0}});
  SolverConfig cfg;
  cfg.method = SolverMethod::DirectLU;
  const LinearSolver solver(a, cfg, {e0, e1});
  const auto z = solver.solve(std::vector<double>{e0, 0.0});
  CHECK(z[0] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(z[1] == doctest::Approx(0.25).epsilon(1e-14));
  const auto zb = solver.solve(std::vector<double>{0.0, e1});
  CHECK(z[0] + zb[0] == doctest::Approx(1.0).epsilon(1e-14));
  // A^T u = (c0, 0) by hand: u0 = c0 / (e0 + e1 - e0 e1), u1 = (1 - e0) u0
  const auto u = solver.solve_transpose(std::vector<double>{1e-20, 0.0});
  CHECK(u[1] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(u[0] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("slack-aware direct path matches dense solves on random substochastic systems") {
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    // random symmetric sparsity, random substochastic rows
    const int n = 5 + trial * 3;
    std::vector<double> t(n * n, 0.0), slack(n, 0.0);
    for (int r = 0; r < n; ++r) {
      for (int c = r + 1; c < n; ++c) {
        if (c == r + 1 || u01(rng) < 0.15) t[r * n + c] = t[c * n + r] = 1.0;
      }
    }
    for (int r = 0; r < n; ++r) {
      double sum = 0.0;
      for (int c = 0; c < n; ++c) {
        if (t[r * n + c] != 0.0) sum += (t[r * n + c] = std::exp(-6.0 * u01(rng)));
      }
      slack[r] = u01(rng) < 0.3 ? u01(rng) : 0.0;
      for (int c = 0; c < n; ++c) t[r * n + c] /= sum + slack[r];
      slack[r] /= sum + slack[r];
    }
    slack[0] = std::max(slack[0], 0.05);  // at least one exit
    double s0 = 0.0;
    for (int c = 0; c < n; ++c) s0 += t[c];
    for (int c = 0; c < n; ++c) t[c] *= (1.0 - slack[0]) / s0;

    std::vector<double> a(n * n);
    for (int i = 0; i < n * n; ++i) a[i] = -t[i];
    for (int r = 0; r < n; ++r) a[r * n + r] = 1.0;
    std::vector<double> at(n * n);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) at[c * n + r] = a[r * n + c];
    }
    std::vector<double> b(n);
    for (double& v : b) v = u01(rng) - 0.3;

    SolverConfig cfg;
    cfg.method = SolverMethod::DirectLU;
    const LinearSolver solver(to_sparse(a, n), cfg, slack);
    SolveStats stats;
    const auto x = solver.solve(b, &stats);
    CHECK(stats.backward_error < 1e-12);
    CHECK(max_abs_diff(x, dense_solve(a, b)) < 1e-9);
    CHECK(max_abs_diff(solver.solve_transpose(b), dense_solve(at, b)) < 1e-9);
  }
}

TEST_CASE("slack-aware direct path rejects a closed class") {
  // two states that only talk to each other: no escape at all
  const auto a = SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {0, 1, -1.0}, {1, 0, -1.0}, {1, 1, 1.0}});
  SolverConfig cfg;
  cfg.method = SolverMethod::DirectLU;
  CHECK_THROWS_AS(LinearSolver(a, cfg, {0.0, 0.0}), SolverError);
  CHECK_THROWS_AS(LinearSolver(a, cfg, {0.0}), ArgumentError);
}
