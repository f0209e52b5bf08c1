#include "vrw/solver.hpp"

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vrw/errors.hpp"

namespace vrw {

SparseMatrix SparseMatrix::from_triplets(int rows, int cols, std::vector<Triplet> triplets) {
  std::sort(triplets.begin(), triplets.end(), [](const Triplet& a, const Triplet& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  SparseMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  for (std::size_t i = 0; i < triplets.size();) {
    const auto& t = triplets[i];
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
      throw ArgumentError("sparse triplet out of range");
    }
    double v = 0.0;
    std::size_t j = i;
    for (; j < triplets.size() && triplets[j].row == t.row && triplets[j].col == t.col; ++j) {
      v += triplets[j].value;
    }
    m.col.push_back(t.col);
    m.val.push_back(v);
    m.row_ptr[t.row + 1]++;
    i = j;
  }
  for (int r = 0; r < rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];
  return m;
}

SparseMatrix SparseMatrix::identity(int n) {
  SparseMatrix m;
  m.rows = m.cols = n;
  m.row_ptr.resize(n + 1);
  std::iota(m.row_ptr.begin(), m.row_ptr.end(), 0);
  m.col.resize(n);
  std::iota(m.col.begin(), m.col.end(), 0);
  m.val.assign(n, 1.0);
  return m;
}

void SparseMatrix::multiply(std::span<const double> x, std::span<double> y) const {
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) s += val[k] * x[col[k]];
    y[r] = s;
  }
}

void SparseMatrix::multiply_transpose(std::span<const double> x, std::span<double> y) const {
  std::fill(y.begin(), y.end(), 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) y[col[k]] += val[k] * x[r];
  }
}

SparseMatrix SparseMatrix::transposed() const {
  SparseMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_ptr.assign(cols + 1, 0);
  for (int c : col) t.row_ptr[c + 1]++;
  for (int r = 0; r < cols; ++r) t.row_ptr[r + 1] += t.row_ptr[r];
  t.col.resize(col.size());
  t.val.resize(val.size());
  std::vector<int> next(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (int r = 0; r < rows; ++r) {
    for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      const int dst = next[col[k]]++;
      t.col[dst] = r;
      t.val[dst] = val[k];
    }
  }
  return t;
}

std::vector<double> SparseMatrix::diagonal() const {
  std::vector<double> d(std::min(rows, cols), 0.0);
  for (int r = 0; r < static_cast<int>(d.size()); ++r) d[r] = coeff(r, r);
  return d;
}

double SparseMatrix::coeff(int r, int c) const {
  const auto first = col.begin() + row_ptr[r];
  const auto last = col.begin() + row_ptr[r + 1];
  const auto it = std::lower_bound(first, last, c);
  return (it != last && *it == c) ? val[it - col.begin()] : 0.0;
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::vector<double> inverse_or_one(std::vector<double> d, Preconditioner p) {
  for (double& v : d) v = (p == Preconditioner::Jacobi && v != 0.0) ? 1.0 / v : 1.0;
  return d;
}

KrylovResult trivial_zero(std::size_t n) {
  KrylovResult r;
  r.x.assign(n, 0.0);
  r.converged = true;
  return r;
}

}  // namespace

void validate(const SolverConfig& c) {
  if (!(c.tol > 0.0 && c.tol < 1.0)) throw ValidationError("solver tol must lie in (0, 1)");
  if (c.max_iters < 1) throw ValidationError("solver max_iters must be >= 1");
  if (c.direct_max_unknowns < 0) throw ValidationError("solver direct_max_unknowns must be >= 0");
}

double relative_residual(const SparseMatrix& a, std::span<const double> x, std::span<const double> b) {
  std::vector<double> ax(a.rows);
  a.multiply(x, ax);
  double num = 0.0;
  for (int i = 0; i < a.rows; ++i) num += (ax[i] - b[i]) * (ax[i] - b[i]);
  const double den = norm2(b);
  return den > 0.0 ? std::sqrt(num) / den : std::sqrt(num);
}

KrylovResult conjugate_gradient(const SparseMatrix& a, std::span<const double> b, const SolverConfig& cfg) {
  const std::size_t n = b.size();
  const double bnorm = norm2(b);
  if (bnorm == 0.0) return trivial_zero(n);
  const auto minv = inverse_or_one(a.diagonal(), cfg.preconditioner);
  KrylovResult res;
  res.x.assign(n, 0.0);
  std::vector<double> r(b.begin(), b.end()), z(n), p(n), q(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = minv[i] * r[i];
  p = z;
  double rz = dot(r, z);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    a.multiply(p, q);
    const double pq = dot(p, q);
    if (!(pq > 0.0)) {
      res.failure = "CG breakdown: matrix not positive definite";
      break;
    }
    const double alpha = rz / pq;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    res.iterations = it;
    res.residual = norm2(r) / bnorm;
    if (res.residual < cfg.tol) {
      res.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = minv[i] * r[i];
    const double rz_new = dot(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  res.residual = relative_residual(a, res.x, b);
  res.converged = res.converged && res.residual < cfg.tol;
  return res;
}

KrylovResult cg_normal_equations(const SparseMatrix& a, std::span<const double> b, const SolverConfig& cfg) {
  const std::size_t n = a.cols;
  const double bnorm = norm2(b);
  if (bnorm == 0.0) return trivial_zero(n);
  std::vector<double> colnorm(n, 0.0);
  for (int k = 0; k < a.nnz(); ++k) colnorm[a.col[k]] += a.val[k] * a.val[k];
  const auto minv = inverse_or_one(colnorm, cfg.preconditioner);

  KrylovResult res;
  res.x.assign(n, 0.0);
  std::vector<double> r(b.begin(), b.end()), s(n), z(n), p(n), q(a.rows);
  a.multiply_transpose(r, s);
  for (std::size_t i = 0; i < n; ++i) z[i] = minv[i] * s[i];
  p = z;
  double gamma = dot(s, z);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    a.multiply(p, q);
    const double qq = dot(q, q);
    if (!(qq > 0.0)) {
      res.failure = "CGNR breakdown";
      break;
    }
    const double alpha = gamma / qq;
    for (std::size_t i = 0; i < n; ++i) res.x[i] += alpha * p[i];
    for (int i = 0; i < a.rows; ++i) r[i] -= alpha * q[i];
    res.iterations = it;
    res.residual = norm2(r) / bnorm;
    if (res.residual < cfg.tol) {
      res.converged = true;
      break;
    }
    a.multiply_transpose(r, s);
    for (std::size_t i = 0; i < n; ++i) z[i] = minv[i] * s[i];
    const double gamma_new = dot(s, z);
    const double beta = gamma_new / gamma;
    gamma = gamma_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  res.residual = relative_residual(a, res.x, b);
  res.converged = res.converged && res.residual < cfg.tol;
  return res;
}

KrylovResult bicgstab(const SparseMatrix& a, std::span<const double> b, const SolverConfig& cfg) {
  const std::size_t n = b.size();
  const double bnorm = norm2(b);
  if (bnorm == 0.0) return trivial_zero(n);
  const auto minv = inverse_or_one(a.diagonal(), cfg.preconditioner);

  KrylovResult res;
  res.x.assign(n, 0.0);
  std::vector<double> r(b.begin(), b.end()), r0 = r, p(n, 0.0), v(n, 0.0), s(n), t(n), y(n), z(n);
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    const double rho_new = dot(r0, r);
    if (rho_new == 0.0 || omega == 0.0) {
      res.failure = "BiCGSTAB breakdown";
      break;
    }
    const double beta = (rho_new / rho) * (alpha / omega);
    rho = rho_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    for (std::size_t i = 0; i < n; ++i) y[i] = minv[i] * p[i];
    a.multiply(y, v);
    const double r0v = dot(r0, v);
    if (r0v == 0.0) {
      res.failure = "BiCGSTAB breakdown";
      break;
    }
    alpha = rho / r0v;
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    res.iterations = it;
    if (norm2(s) / bnorm < cfg.tol) {
      for (std::size_t i = 0; i < n; ++i) res.x[i] += alpha * y[i];
      res.converged = true;
      break;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = minv[i] * s[i];
    a.multiply(z, t);
    const double tt = dot(t, t);
    omega = tt > 0.0 ? dot(t, s) / tt : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += alpha * y[i] + omega * z[i];
      r[i] = s[i] - omega * t[i];
    }
    if (norm2(r) / bnorm < cfg.tol) {
      res.converged = true;
      break;
    }
  }
  res.residual = relative_residual(a, res.x, b);
  res.converged = res.converged && res.residual < cfg.tol;
  return res;
}

namespace {

// Sparse A = L D U for A = I - T with T substochastic (off-diagonals <= 0), after
// Grassmann, Taksar and Heyman: each pivot is the row's escape mass plus its
// remaining off-diagonal mass, so elimination never subtracts. Near-closed regions
// whose escape probability is below machine epsilon keep full relative accuracy,
// where ordinary LU returns noise. Symmetric pattern assumed (grid graphs).
// AMD ordering, postordered elimination tree, supernodal multifrontal numerics.
class GthFactor {
 public:
  GthFactor(const SparseMatrix& a, std::span<const double> slack) : n_(a.rows) {
    order(a);
    symbolic(a);
    numeric(a, slack);
  }

  std::vector<double> solve(std::span<const double> b) const {
    std::vector<double> y(n_);
    for (int k = 0; k < n_; ++k) y[k] = b[perm_[k]];
    for (int k = 0; k < n_; ++k) {
      const double yk = y[k];
      if (yk == 0.0) continue;
      for (int t = ptr_[k]; t < ptr_[k + 1]; ++t) y[idx_[t]] -= lo_[t] * yk;
    }
    for (int k = n_ - 1; k >= 0; --k) {
      double acc = y[k];
      for (int t = ptr_[k]; t < ptr_[k + 1]; ++t) acc -= up_[t] * y[idx_[t]];
      y[k] = acc / d_[k];
    }
    std::vector<double> x(n_);
    for (int k = 0; k < n_; ++k) x[perm_[k]] = y[k];
    return x;
  }

  std::vector<double> solve_transpose(std::span<const double> b) const {
    std::vector<double> z(n_);
    for (int k = 0; k < n_; ++k) z[k] = b[perm_[k]];
    for (int k = 0; k < n_; ++k) {
      const double zk = z[k] / d_[k];
      z[k] = zk;
      if (zk == 0.0) continue;
      for (int t = ptr_[k]; t < ptr_[k + 1]; ++t) z[idx_[t]] -= up_[t] * zk;
    }
    for (int k = n_ - 1; k >= 0; --k) {
      double acc = z[k];
      for (int t = ptr_[k]; t < ptr_[k + 1]; ++t) acc -= lo_[t] * z[idx_[t]];
      z[k] = acc;
    }
    std::vector<double> x(n_);
    for (int k = 0; k < n_; ++k) x[perm_[k]] = z[k];
    return x;
  }

 private:
  // Upper-triangle adjacency of the pattern under `iperm`.
  std::vector<std::vector<int>> upper_adjacency(const SparseMatrix& a) const {
    std::vector<std::vector<int>> adj(n_);
    for (int r = 0; r < a.rows; ++r) {
      for (int k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) {
        const int i = iperm_[r], j = iperm_[a.col[k]];
        if (i < j) adj[i].push_back(j);
        if (j < i) adj[j].push_back(i);
      }
    }
    return adj;
  }

  void order(const SparseMatrix& a) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(a.nnz());
    for (int r = 0; r < a.rows; ++r) {
      for (int k = a.row_ptr[r]; k < a.row_ptr[r + 1]; ++k) trip.emplace_back(r, a.col[k], 1.0);
    }
    Eigen::SparseMatrix<double> m(a.rows, a.cols);
    m.setFromTriplets(trip.begin(), trip.end());
    Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p;
    Eigen::AMDOrdering<int> amd;
    amd(m, p);
    perm_.assign(p.indices().data(), p.indices().data() + n_);
    iperm_.assign(n_, 0);
    for (int k = 0; k < n_; ++k) iperm_[perm_[k]] = k;

    // elimination tree (Liu, with path compression), then relabel in postorder so
    // supernodes are runs of consecutive pivots
    std::vector<int> parent(n_, -1), ancestor(n_, -1);
    for (int k = 0; k < n_; ++k) {
      const int r = perm_[k];
      for (int t = a.row_ptr[r]; t < a.row_ptr[r + 1]; ++t) {
        for (int i = iperm_[a.col[t]]; i != -1 && i < k;) {
          const int up = ancestor[i];
          ancestor[i] = k;
          if (up == -1) parent[i] = k;
          i = up;
        }
      }
    }
    std::vector<int> head(n_, -1), next(n_, -1);
    for (int k = n_ - 1; k >= 0; --k) {
      if (parent[k] >= 0) {
        next[k] = head[parent[k]];
        head[parent[k]] = k;
      }
    }
    std::vector<int> post;
    post.reserve(n_);
    std::vector<int> stack;
    for (int root = 0; root < n_; ++root) {
      if (parent[root] != -1) continue;
      stack.push_back(root);
      while (!stack.empty()) {
        const int v = stack.back();
        if (head[v] != -1) {
          const int c = head[v];
          head[v] = next[c];
          stack.push_back(c);
        } else {
          stack.pop_back();
          post.push_back(v);
        }
      }
    }
    std::vector<int> relabeled(n_);
    for (int k = 0; k < n_; ++k) relabeled[k] = perm_[post[k]];
    perm_ = std::move(relabeled);
    for (int k = 0; k < n_; ++k) iperm_[perm_[k]] = k;
  }

  // S_k = higher neighbors of k in the filled graph; supernodes from runs where
  // S_k = {k + 1} + S_{k+1}.
  void symbolic(const SparseMatrix& a) {
    const auto adj = upper_adjacency(a);
    std::vector<std::vector<int>> children(n_);
    std::vector<int> mark(n_, -1);
    ptr_.assign(n_ + 1, 0);
    idx_.clear();
    std::vector<int> s;
    for (int k = 0; k < n_; ++k) {
      s.clear();
      mark[k] = k;
      auto add = [&](int j) {
        if (mark[j] != k) {
          mark[j] = k;
          s.push_back(j);
        }
      };
      for (int j : adj[k]) add(j);
      for (int c : children[k]) {
        for (int t = ptr_[c]; t < ptr_[c + 1]; ++t) add(idx_[t]);
      }
      std::sort(s.begin(), s.end());
      idx_.insert(idx_.end(), s.begin(), s.end());
      ptr_[k + 1] = static_cast<int>(idx_.size());
      if (!s.empty()) children[s.front()].push_back(k);
    }
    super_.assign(1, 0);
    for (int k = 0; k + 1 < n_; ++k) {
      const int len = ptr_[k + 1] - ptr_[k];
      const bool chain = len > 0 && idx_[ptr_[k]] == k + 1 && children[k + 1].size() == 1 &&
                         len == ptr_[k + 2] - ptr_[k + 1] + 1;
      if (!chain) super_.push_back(k + 1);
    }
    if (n_ > 0) super_.push_back(n_);
  }

  void numeric(const SparseMatrix& a, std::span<const double> slack) {
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Block = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
    using Vec = Eigen::Map<Eigen::VectorXd>;

    up_.assign(idx_.size(), 0.0);
    lo_.assign(idx_.size(), 0.0);
    d_.assign(n_, 0.0);
    const SparseMatrix col = a.transposed();  // column access for the lower entries

    // update blocks awaiting their parent, stacked in one arena
    struct Pending {
      std::size_t index_at, values_at;
      int size;
    };
    std::vector<Pending> stack;
    std::vector<int> stack_index;
    std::vector<double> stack_values, stack_slack;
    std::vector<int> local(n_, -1), index, map;
    std::vector<double> front, fslack;

    for (std::size_t sn = 0; sn + 1 < super_.size(); ++sn) {
      const int f = super_[sn], e = super_[sn + 1], m = e - f;
      // front indices: the supernode's pivots then the structure of its last column
      index.clear();
      for (int k = f; k < e; ++k) index.push_back(k);
      index.insert(index.end(), idx_.begin() + ptr_[e - 1], idx_.begin() + ptr_[e]);
      const int F = static_cast<int>(index.size());
      for (int t = 0; t < F; ++t) local[index[t]] = t;
      front.assign(std::size_t(F) * F, 0.0);
      fslack.assign(F, 0.0);
      auto at = [&](int i, int j) -> double& { return front[std::size_t(i) * F + j]; };

      for (int k = f; k < e; ++k) {
        const int r = perm_[k];
        fslack[k - f] = slack[r];
        for (int t = a.row_ptr[r]; t < a.row_ptr[r + 1]; ++t) {
          const int j = iperm_[a.col[t]];
          if (j > k) at(k - f, local[j]) += a.val[t];
        }
        for (int t = col.row_ptr[r]; t < col.row_ptr[r + 1]; ++t) {
          const int i = iperm_[col.col[t]];
          if (i > k) at(local[i], k - f) += col.val[t];
        }
      }
      // extend-add the children's update blocks (postorder keeps them on top of the stack)
      while (!stack.empty() && stack_index[stack.back().index_at] >= f && stack_index[stack.back().index_at] < e) {
        const Pending c = stack.back();
        map.resize(c.size);
        for (int t = 0; t < c.size; ++t) map[t] = local[stack_index[c.index_at + t]];
        for (int t = 0; t < c.size; ++t) {
          fslack[map[t]] += stack_slack[c.index_at + t];
          double* row = &front[std::size_t(map[t]) * F];
          const double* src = &stack_values[c.values_at + std::size_t(t) * c.size];
          for (int u = 0; u < c.size; ++u) row[map[u]] += src[u];
        }
        stack.pop_back();
        stack_index.resize(c.index_at);
        stack_slack.resize(c.index_at);
        stack_values.resize(c.values_at);
      }

      // Dense GTH elimination, left-looking inside the supernode so each pivot row is
      // complete before its escape mass is summed; then one product for the rest.
      Block fm(front.data(), F, F, Eigen::OuterStride<>(F));
      Vec sv(fslack.data(), F);
      for (int t = 0; t < m; ++t) {
        if (t > 0) {
          const auto lrow = fm.row(t).head(t);
          fm.block(t, t + 1, 1, F - t - 1).noalias() -= lrow * fm.block(0, t + 1, t, F - t - 1);
          fm.block(t + 1, t, F - t - 1, 1).noalias() -= fm.block(t + 1, 0, F - t - 1, t) * fm.block(0, t, t, 1);
          sv[t] -= lrow.dot(sv.head(t));
        }
        double dk = sv[t];
        const double* prow = &front[std::size_t(t) * F];
        for (int j = t + 1; j < F; ++j) dk -= prow[j];
        if (!(dk > 0.0)) throw SolverError("direct solve: row without escape (closed class)", dk, 0);
        const int k = f + t;
        d_[k] = dk;
        const int base = ptr_[k];
        for (int j = t + 1; j < F; ++j) {
          at(j, t) /= dk;
          up_[base + j - t - 1] = prow[j];
          lo_[base + j - t - 1] = at(j, t);
        }
      }
      const int cn = F - m;
      if (cn > 0) {
        fm.block(m, m, cn, cn).noalias() -= fm.block(m, 0, cn, m) * fm.block(0, m, m, cn);
        sv.tail(cn).noalias() -= fm.block(m, 0, cn, m) * sv.head(m);
        stack.push_back({stack_index.size(), stack_values.size(), cn});
        stack_index.insert(stack_index.end(), index.begin() + m, index.end());
        stack_slack.insert(stack_slack.end(), fslack.begin() + m, fslack.end());
        for (int i = 0; i < cn; ++i) {
          const double* src = &front[std::size_t(i + m) * F + m];
          stack_values.insert(stack_values.end(), src, src + cn);
        }
      }
      for (int t = 0; t < F; ++t) local[index[t]] = -1;
    }
  }

  int n_;
  std::vector<int> perm_, iperm_;  // perm_[k]: original row eliminated k-th
  std::vector<int> ptr_, idx_;
  std::vector<int> super_;  // supernode boundaries
  std::vector<double> up_;  // U(k, j), j in S_k
  std::vector<double> lo_;  // L(i, k) = A(i, k) / d_k, i in S_k
  std::vector<double> d_;
};

}  // namespace

struct LinearSolver::Direct {
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
  std::unique_ptr<GthFactor> gth;
};

LinearSolver::LinearSolver(SparseMatrix a, SolverConfig config, std::vector<double> row_slack)
    : a_(std::move(a)), config_(config), method_(config.method) {
  if (a_.rows != a_.cols) throw ArgumentError("LinearSolver: matrix must be square");
  if (!row_slack.empty() && static_cast<int>(row_slack.size()) != a_.rows) {
    throw ArgumentError("LinearSolver: slack size mismatch");
  }
  if (method_ == SolverMethod::Auto) {
    method_ = a_.rows <= config_.direct_max_unknowns ? SolverMethod::DirectLU : SolverMethod::BiCGSTAB;
  }
  bool m_matrix = !row_slack.empty();
  for (int r = 0; r < a_.rows && m_matrix; ++r) {
    if (row_slack[r] < 0.0) m_matrix = false;
    for (int k = a_.row_ptr[r]; k < a_.row_ptr[r + 1]; ++k) {
      if (a_.col[k] != r && a_.val[k] > 0.0) m_matrix = false;
    }
  }
  if (method_ == SolverMethod::DirectLU && m_matrix) {
    direct_ = std::make_unique<Direct>();
    if (a_.rows > 0) direct_->gth = std::make_unique<GthFactor>(a_, row_slack);
  } else if (method_ == SolverMethod::DirectLU) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(a_.nnz());
    for (int r = 0; r < a_.rows; ++r) {
      for (int k = a_.row_ptr[r]; k < a_.row_ptr[r + 1]; ++k) trip.emplace_back(r, a_.col[k], a_.val[k]);
    }
    Eigen::SparseMatrix<double> m(a_.rows, a_.cols);
    m.setFromTriplets(trip.begin(), trip.end());
    m.makeCompressed();
    direct_ = std::make_unique<Direct>();
    if (a_.rows > 0) {
      direct_->lu.compute(m);
      if (direct_->lu.info() != Eigen::Success) {
        throw SolverError("sparse LU factorization failed: " + direct_->lu.lastErrorMessage(),
                          std::numeric_limits<double>::infinity(), 0);
      }
    }
  }
  at_ = a_.transposed();
  auto row_sum_max = [](const SparseMatrix& s) {
    double best = 0.0;
    for (int r = 0; r < s.rows; ++r) {
      double acc = 0.0;
      for (int k = s.row_ptr[r]; k < s.row_ptr[r + 1]; ++k) acc += std::abs(s.val[k]);
      best = std::max(best, acc);
    }
    return best;
  };
  norm_inf_ = row_sum_max(a_);
  norm_inf_transpose_ = row_sum_max(at_);
}

LinearSolver::~LinearSolver() = default;

std::vector<double> LinearSolver::run(const SparseMatrix& m, std::span<const double> b, bool transpose,
                                      SolveStats* stats) const {
  if (static_cast<int>(b.size()) != a_.rows) throw ArgumentError("LinearSolver: rhs size mismatch");
  SolveStats local;
  local.method = method_;
  std::vector<double> x;
  if (a_.rows == 0) {
    if (stats) *stats = local;
    return x;
  }
  if (method_ == SolverMethod::DirectLU) {
    const GthFactor* gth = direct_->gth.get();
    if (gth) {
      x = transpose ? gth->solve_transpose(b) : gth->solve(b);
    } else {
      Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
      Eigen::VectorXd sol = transpose ? Eigen::VectorXd(direct_->lu.transpose().solve(rhs))
                                      : Eigen::VectorXd(direct_->lu.solve(rhs));
      x.assign(sol.data(), sol.data() + sol.size());
    }
    local.iterations = 1;
    std::vector<double> ax(x.size());
    Eigen::VectorXd r(static_cast<Eigen::Index>(x.size()));
    const double anorm = transpose ? norm_inf_transpose_ : norm_inf_;
    auto measure = [&] {
      m.multiply(x, ax);
      double rr = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        r[Eigen::Index(i)] = b[i] - ax[i];
        rr += r[Eigen::Index(i)] * r[Eigen::Index(i)];
      }
      const double bn = norm2(b);
      local.residual = bn > 0.0 ? std::sqrt(rr) / bn : std::sqrt(rr);
      const double scale = anorm * norm2(x) + bn;
      local.backward_error = scale > 0.0 ? std::sqrt(rr) / scale : 0.0;
    };
    measure();
    // Iterative refinement for ill-conditioned systems on the plain LU path. The GTH
    // factors are already accurate, and a residual formed with the unit diagonal
    // would only feed cancellation noise back in.
    for (int k = 0; k < 5 && !gth && !(local.residual < config_.tol); ++k) {
      const Eigen::VectorXd dx = transpose ? Eigen::VectorXd(direct_->lu.transpose().solve(r))
                                           : Eigen::VectorXd(direct_->lu.solve(r));
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += dx[Eigen::Index(i)];
      measure();
      ++local.iterations;
    }
    // A tiny right-hand side (labels hidden behind strong boundaries) caps the
    // attainable relative residual, so the direct path is judged by backward error.
    if (!(local.backward_error < config_.tol)) {
      throw SolverError("direct solve backward error above tolerance", local.backward_error, local.iterations);
    }
  } else {
    KrylovResult r;
    switch (method_) {
      case SolverMethod::ConjugateGradient: r = conjugate_gradient(m, b, config_); break;
      case SolverMethod::CGNR: r = cg_normal_equations(m, b, config_); break;
      default: r = bicgstab(m, b, config_); break;
    }
    if (!r.converged && config_.method == SolverMethod::Auto) {
      // BiCGSTAB can stagnate on strongly nonsymmetric rows; normal equations always apply.
      KrylovResult fallback = cg_normal_equations(m, b, config_);
      fallback.iterations += r.iterations;
      r = std::move(fallback);
    }
    local.iterations = r.iterations;
    local.residual = r.residual;
    if (!r.converged) {
      throw SolverError(std::string(to_string(method_)) + " did not converge" +
                            (r.failure.empty() ? "" : ": " + r.failure),
                        r.residual, r.iterations);
    }
    x = std::move(r.x);
  }
  if (stats) *stats = local;
  return x;
}

std::vector<double> LinearSolver::solve(std::span<const double> b, SolveStats* stats) const {
  ++forward_count_;
  return run(a_, b, false, stats);
}

std::vector<double> LinearSolver::solve_transpose(std::span<const double> b, SolveStats* stats) const {
  ++transpose_count_;
  return run(at_, b, true, stats);
}

const char* to_string(SolverMethod m) {
  switch (m) {
    case SolverMethod::Auto: return "auto";
    case SolverMethod::ConjugateGradient: return "cg";
    case SolverMethod::CGNR: return "cgnr";
    case SolverMethod::BiCGSTAB: return "bicgstab";
    case SolverMethod::DirectLU: return "direct";
  }
  return "auto";
}

}  // namespace vrw
