#pragma once

// Truncated SVD: a randomized range finder for large sparse operators and an
// exact one-sided Jacobi factorization for small dense matrices.
//
// Sign convention for every factorization returned here: in each right
// singular vector the entry of largest magnitude is nonnegative (ties go to
// the lowest index); the matching left vector is flipped along with it.
// Singular values below kZeroSingular * sigma_max are reported as exact zeros
// and their vectors are completed to an orthonormal set deterministically.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "saft/tensor.hpp"

namespace saft {

struct OracleScaleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SvdFactors {
  Tensor left;                 // m x k
  std::vector<double> values;  // k, nonincreasing, >= 0
  Tensor right;                // n x k

  std::size_t rank() const noexcept { return values.size(); }
};

/// Anything that can multiply a block of vectors from either side.
template <class Op>
concept MatrixOperator = requires(const Op& op, const Tensor& x) {
  { op.rows() } -> std::convertible_to<std::size_t>;
  { op.cols() } -> std::convertible_to<std::size_t>;
  { op.apply(x) } -> std::same_as<Tensor>;            // (cols x c) -> (rows x c)
  { op.apply_transpose(x) } -> std::same_as<Tensor>;  // (rows x c) -> (cols x c)
};

/// Dense matrix exposed through the MatrixOperator interface.
class DenseOperator {
 public:
  explicit DenseOperator(Tensor m) : m_(std::move(m)) {}
  std::size_t rows() const { return m_.rows(); }
  std::size_t cols() const { return m_.cols(); }
  Tensor apply(const Tensor& x) const { return matmul(m_, x); }
  Tensor apply_transpose(const Tensor& x) const { return matmul_tn(m_, x); }

 private:
  Tensor m_;
};

inline constexpr double kZeroSingular = 1e-12;
inline constexpr std::size_t kDenseSvdMaxDim = 512;

namespace detail {

using Columns = std::vector<std::vector<double>>;

inline Columns to_columns(const Tensor& a) {
  Columns c(a.cols(), std::vector<double>(a.rows()));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) c[j][i] = a(i, j);
  return c;
}

inline Tensor from_columns(const Columns& c, std::size_t rows) {
  Tensor a = Tensor::zeros(rows, c.size());
  for (std::size_t j = 0; j < c.size(); ++j)
    for (std::size_t i = 0; i < rows; ++i) a(i, j) = c[j][i];
  return a;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

// Replace every column with valid[j] == false by a unit vector orthogonal to
// all valid columns, scanning the standard basis in order. Some basis vector
// always keeps at least the average residual (m - r) / m after projection.
inline void complete_orthonormal(Columns& q, std::vector<bool>& valid) {
  if (q.empty()) return;
  const std::size_t m = q.front().size();
  std::size_t r = static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
  for (std::size_t j = 0; j < q.size(); ++j) {
    if (valid[j]) continue;
    if (r >= m) throw DimensionError("cannot complete more orthonormal columns than rows");
    const double accept = 0.5 * static_cast<double>(m - r) / static_cast<double>(m);
    for (std::size_t b = 0; b < m; ++b) {
      std::vector<double> v(m, 0.0);
      v[b] = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t i = 0; i < q.size(); ++i) {
          if (!valid[i]) continue;
          const double p = dot(q[i], v);
          for (std::size_t k = 0; k < m; ++k) v[k] -= p * q[i][k];
        }
      const double nv = norm(v);
      if (nv * nv >= accept) {
        for (double& x : v) x /= nv;
        q[j] = std::move(v);
        valid[j] = true;
        ++r;
        break;
      }
    }
    if (!valid[j]) throw DimensionError("orthonormal completion failed");
  }
}

// Thin QR by modified Gram-Schmidt with one reorthogonalization pass.
// Dependent columns get R_jj = 0 and a completed orthonormal Q column.
inline void qr_mgs(const Columns& a, Columns& q, Tensor& r) {
  const std::size_t n = a.size();
  q = a;
  r = Tensor::zeros(n, n);
  std::vector<bool> valid(n, true);
  for (std::size_t j = 0; j < n; ++j) {
    auto& v = q[j];
    const double orig = norm(v);
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t i = 0; i < j; ++i) {
        const double p = dot(q[i], v);
        r(i, j) += p;
        for (std::size_t k = 0; k < v.size(); ++k) v[k] -= p * q[i][k];
      }
    const double nv = norm(v);
    if (orig == 0.0 || nv <= 1e-13 * orig) {
      valid[j] = false;
      r(j, j) = 0.0;
      // later columns must not project on a non-normalized vector
      std::fill(v.begin(), v.end(), 0.0);
    } else {
      r(j, j) = nv;
      for (double& x : v) x /= nv;
    }
  }
  // Completed columns only need to be orthogonal to the valid set; any later
  // column already had its (zero) projection onto them.
  complete_orthonormal(q, valid);
}

// One-sided Jacobi on a square upper-triangular (or any square) matrix:
// a * V = W, columns of W mutually orthogonal. Returns sigma = column norms.
inline void hestenes(Columns& w, Columns& v) {
  const std::size_t n = w.size();
  v.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) v[j][j] = 1.0;
  for (int sweep = 0; sweep < 80; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot(w[p], w[p]);
        const double beta = dot(w[q], w[q]);
        const double gamma = dot(w[p], w[q]);
        if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < w[p].size(); ++k) {
          const double a = w[p][k], b = w[q][k];
          w[p][k] = c * a - s * b;
          w[q][k] = s * a + c * b;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double a = v[p][k], b = v[q][k];
          v[p][k] = c * a - s * b;
          v[q][k] = s * a + c * b;
        }
      }
    if (!rotated) break;
  }
}

// Thin SVD of a tall (m >= n) matrix given as columns.
inline void tall_svd(const Columns& a, std::size_t m, Columns& u, std::vector<double>& sigma, Columns& v) {
  const std::size_t n = a.size();
  Columns q;
  Tensor r;
  qr_mgs(a, q, r);
  Columns w = to_columns(r);
  Columns vr;
  hestenes(w, vr);
  std::vector<double> s(n);
  for (std::size_t j = 0; j < n; ++j) s[j] = norm(w[j]);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return s[x] > s[y]; });
  const double smax = n ? s[order.front()] : 0.0;
  u.assign(n, std::vector<double>(m, 0.0));
  v.assign(n, {});
  sigma.assign(n, 0.0);
  std::vector<bool> valid(n, true);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    v[k] = vr[j];
    if (smax == 0.0 || s[j] <= kZeroSingular * smax) {
      sigma[k] = 0.0;
      valid[k] = false;
      continue;
    }
    sigma[k] = s[j];
    // U = Q * (w_j / s_j)
    for (std::size_t i = 0; i < n; ++i) {
      const double coef = w[j][i] / s[j];
      if (coef == 0.0) continue;
      for (std::size_t row = 0; row < m; ++row) u[k][row] += coef * q[i][row];
    }
  }
  complete_orthonormal(u, valid);
}

inline void apply_sign_convention(SvdFactors& f) {
  for (std::size_t j = 0; j < f.values.size(); ++j) {
    std::size_t best = 0;
    double mag = -1.0;
    for (std::size_t i = 0; i < f.right.rows(); ++i)
      if (std::abs(f.right(i, j)) > mag) {
        mag = std::abs(f.right(i, j));
        best = i;
      }
    if (f.right.rows() && f.right(best, j) < 0.0) {
      for (std::size_t i = 0; i < f.right.rows(); ++i) f.right(i, j) = -f.right(i, j);
      for (std::size_t i = 0; i < f.left.rows(); ++i) f.left(i, j) = -f.left(i, j);
    }
  }
}

// Exact thin SVD with min(m, n) components, no size cap.
inline SvdFactors thin_svd(const Tensor& m) {
  SvdFactors f;
  Columns u, v;
  std::vector<double> s;
  if (m.rows() >= m.cols()) {
    tall_svd(to_columns(m), m.rows(), u, s, v);
    f.left = from_columns(u, m.rows());
    f.right = from_columns(v, m.cols());
  } else {
    tall_svd(to_columns(m.transpose()), m.cols(), u, s, v);
    f.left = from_columns(v, m.rows());
    f.right = from_columns(u, m.cols());
  }
  f.values = std::move(s);
  apply_sign_convention(f);
  return f;
}

inline SvdFactors truncate(SvdFactors f, std::size_t k) {
  if (k >= f.values.size()) return f;
  SvdFactors t;
  t.values.assign(f.values.begin(), f.values.begin() + static_cast<std::ptrdiff_t>(k));
  t.left = Tensor::zeros(f.left.rows(), k);
  t.right = Tensor::zeros(f.right.rows(), k);
  for (std::size_t i = 0; i < f.left.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) t.left(i, j) = f.left(i, j);
  for (std::size_t i = 0; i < f.right.rows(); ++i)
    for (std::size_t j = 0; j < k; ++j) t.right(i, j) = f.right(i, j);
  return t;
}

inline Tensor orthonormal_basis(const Tensor& y) {
  Columns q;
  Tensor r;
  qr_mgs(to_columns(y), q, r);
  return from_columns(q, y.rows());
}

}  // namespace detail

/// Exact SVD of a small dense matrix (both dimensions at most 512).
inline SvdFactors dense_svd(const Tensor& m) {
  if (m.rows() > kDenseSvdMaxDim || m.cols() > kDenseSvdMaxDim)
    throw OracleScaleError("dense_svd: matrix exceeds oracle scale");
  return detail::thin_svd(m);
}

struct RsvdOptions {
  std::size_t oversample = 8;
  std::size_t power_iters = 2;
  std::uint64_t seed = 0;
};

/// Rank-k randomized SVD (Gaussian range finder with power iterations).
/// If k exceeds the numerical rank, the tail carries zero singular values.
template <MatrixOperator Op>
SvdFactors randomized_svd(const Op& m, std::size_t k, RsvdOptions opt = {}) {
  const std::size_t rows = m.rows(), cols = m.cols();
  const std::size_t min_dim = std::min(rows, cols);
  if (k == 0) throw ContractError("randomized_svd: rank must be positive");
  if (k > min_dim) throw DimensionError("randomized_svd: rank exceeds matrix dimensions");
  const std::size_t l = std::min(k + opt.oversample, min_dim);

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor omega = Tensor::zeros(cols, l);
  for (double& x : omega.data()) x = normal(rng);

  Tensor q = detail::orthonormal_basis(m.apply(omega));
  for (std::size_t it = 0; it < opt.power_iters; ++it) {
    Tensor z = detail::orthonormal_basis(m.apply_transpose(q));
    q = detail::orthonormal_basis(m.apply(z));
  }
  // B = Q^T M, factored through its (tall) transpose M^T Q.
  const Tensor bt = m.apply_transpose(q);  // cols x l
  SvdFactors small = detail::thin_svd(bt.transpose());
  SvdFactors f;
  f.values = std::move(small.values);
  f.left = matmul(q, small.left);
  f.right = std::move(small.right);
  f = detail::truncate(std::move(f), k);
  detail::apply_sign_convention(f);
  return f;
}

/// Orthonormality defect max |F^T F - I|.
inline double orthonormality_error(const Tensor& f) {
  const Tensor g = matmul_tn(f, f);
  double e = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) e = std::max(e, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  return e;
}

/// U diag(S) V^T
inline Tensor reconstruct(const SvdFactors& f) {
  Tensor us = f.left;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= f.values[j];
  return matmul_nt(us, f.right);
}

}  // namespace saft
