#pragma once

// Brute-force reference computations for small TINs. Everything here uses its
// own dense linear algebra (cyclic Jacobi eigensolver, Gauss-Jordan inverse)
// and builds matrices straight from their entrywise definitions, so agreement
// with the production path is evidence rather than a tautology.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <vector>

#include "saft/graph.hpp"
#include "saft/tensor.hpp"

namespace saft::oracle {

struct ScaleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxEdges = 64;
inline constexpr std::size_t kMaxEnumerationEdges = 12;
inline constexpr double kPinvCutoff = 1e-10;

struct EigenSystem {
  std::vector<double> values;  // ascending
  Tensor vectors;              // column j pairs with values[j]
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline EigenSystem symmetric_eigen(Tensor a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionError("symmetric_eigen: matrix must be square");
  Tensor v = Tensor::identity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        total += a(i, j) * a(i, j);
        if (i != j) off += a(i, j) * a(i, j);
      }
    if (off <= 1e-30 * std::max(total, 1e-300)) break;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) < a(y, y); });
  EigenSystem es;
  es.vectors = Tensor::zeros(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    es.values.push_back(a(order[k], order[k]));
    for (std::size_t i = 0; i < n; ++i) es.vectors(i, k) = v(i, order[k]);
  }
  return es;
}

/// V f(Lambda) V^T for a spectral function f.
template <class F>
Tensor spectral_map(const EigenSystem& es, F f) {
  const std::size_t n = es.values.size();
  Tensor out = Tensor::zeros(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = f(es.values[k]);
    if (w == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out(i, j) += w * es.vectors(i, k) * es.vectors(j, k);
  }
  return out;
}

/// Moore-Penrose pseudoinverse of a symmetric matrix via its eigensystem,
/// discarding eigenvalues below kPinvCutoff * |lambda|_max.
inline Tensor symmetric_pinv(const Tensor& a) {
  const EigenSystem es = symmetric_eigen(a);
  double lmax = 0.0;
  for (double l : es.values) lmax = std::max(lmax, std::abs(l));
  const double cut = kPinvCutoff * lmax;
  return spectral_map(es, [cut](double l) { return std::abs(l) > cut ? 1.0 / l : 0.0; });
}

/// Gauss-Jordan inverse with partial pivoting.
inline Tensor inverse(Tensor a) {
  const std::size_t n = a.rows();
  Tensor inv = Tensor::identity(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (a(piv, c) == 0.0) throw ContractError("inverse: singular matrix");
    for (std::size_t k = 0; k < n; ++k) {
      std::swap(a(c, k), a(piv, k));
      std::swap(inv(c, k), inv(piv, k));
    }
    const double d = a(c, c);
    for (std::size_t k = 0; k < n; ++k) {
      a(c, k) /= d;
      inv(c, k) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c || a(r, c) == 0.0) continue;
      const double f = a(r, c);
      for (std::size_t k = 0; k < n; ++k) {
        a(r, k) -= f * a(c, k);
        inv(r, k) -= f * inv(c, k);
      }
    }
  }
  return inv;
}

// ---------------------------------------------------------------------------
// Dense matrices from their definitions

/// Unoriented incidence E, (|U|+|I|) x |E|.
inline Tensor unoriented_incidence(const IncidenceOperators& ops) {
  Tensor e = Tensor::zeros(ops.num_nodes(), ops.num_edges());
  for (std::size_t k = 0; k < ops.num_edges(); ++k) {
    e(ops.edge_user(k), k) = 1.0;
    e(ops.item_row(k), k) = 1.0;
  }
  return e;
}

/// Oriented incidence B: +1 at the user row, -1 at the item row.
inline Tensor oriented_incidence(const IncidenceOperators& ops) {
  Tensor b = Tensor::zeros(ops.num_nodes(), ops.num_edges());
  for (std::size_t k = 0; k < ops.num_edges(); ++k) {
    b(ops.edge_user(k), k) = 1.0;
    b(ops.item_row(k), k) = -1.0;
  }
  return b;
}

/// Per-edge side slice E_u (|E| x |U|) or E_i (|E| x |I|).
inline Tensor side_incidence(const IncidenceOperators& ops, Side side) {
  const std::size_t n = side == Side::User ? ops.num_users() : ops.num_items();
  Tensor e = Tensor::zeros(ops.num_edges(), n);
  for (std::size_t k = 0; k < ops.num_edges(); ++k)
    e(k, side == Side::User ? ops.edge_user(k) : ops.edge_item(k)) = 1.0;
  return e;
}

/// Side transition entrywise: 1/(d_v + 1) when both edges share node v.
inline Tensor side_transition(const IncidenceOperators& ops, Side side) {
  const std::size_t m = ops.num_edges();
  Tensor p = Tensor::zeros(m, m);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) {
      if (side == Side::User && ops.edge_user(a) == ops.edge_user(b))
        p(a, b) = 1.0 / (static_cast<double>(ops.user_degree(ops.edge_user(a))) + 1.0);
      if (side == Side::Item && ops.edge_item(a) == ops.edge_item(b))
        p(a, b) = 1.0 / (static_cast<double>(ops.item_degree(ops.edge_item(a))) + 1.0);
    }
  return p;
}

/// Line-graph transition P = E^T (diag(d)^-1 / 2) E by dense products.
inline Tensor line_transition(const IncidenceOperators& ops) {
  Tensor e = unoriented_incidence(ops);
  const auto d = ops.degrees();
  Tensor scaled = e;
  for (std::size_t v = 0; v < scaled.rows(); ++v)
    for (std::size_t k = 0; k < scaled.cols(); ++k) scaled(v, k) *= d[v] > 0 ? 0.5 / d[v] : 0.0;
  return matmul_tn(e, scaled);
}

/// Line-graph Laplacian built by enumerating pairs of edges that share an
/// endpoint: W(a,b) = sum over shared nodes x of 1 / (2 d_x), L = diag(W 1) - W.
inline Tensor line_graph_laplacian(const IncidenceOperators& ops) {
  const std::size_t m = ops.num_edges();
  Tensor w = Tensor::zeros(m, m);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b) {
      if (ops.edge_user(a) == ops.edge_user(b))
        w(a, b) += 0.5 / static_cast<double>(ops.user_degree(ops.edge_user(a)));
      if (ops.edge_item(a) == ops.edge_item(b))
        w(a, b) += 0.5 / static_cast<double>(ops.item_degree(ops.edge_item(a)));
    }
  Tensor l = Tensor::zeros(m, m);
  for (std::size_t a = 0; a < m; ++a) {
    double deg = 0.0;
    for (std::size_t b = 0; b < m; ++b) deg += w(a, b);
    for (std::size_t b = 0; b < m; ++b) l(a, b) = (a == b ? deg : 0.0) - w(a, b);
  }
  return l;
}

/// TIN Laplacian diag(d) - A from the adjacency definition.
inline Tensor tin_laplacian(const IncidenceOperators& ops) {
  const std::size_t n = ops.num_nodes();
  Tensor l = Tensor::zeros(n, n);
  for (std::size_t k = 0; k < ops.num_edges(); ++k) {
    const auto u = ops.edge_user(k), i = ops.item_row(k);
    l(u, u) += 1.0;
    l(i, i) += 1.0;
    l(u, i) -= 1.0;
    l(i, u) -= 1.0;
  }
  return l;
}

// ---------------------------------------------------------------------------

/// Dense reference quantities of one small TIN.
class DenseOracle {
 public:
  explicit DenseOracle(const IncidenceOperators& ops) : ops_(ops) {
    if (ops.num_edges() > kMaxEdges) throw ScaleError("oracle: more than 64 interactions");
    laplacian_ = tin_laplacian(ops);
    laplacian_pinv_ = symmetric_pinv(laplacian_);
    p_ = line_transition(ops);
    const std::size_t m = ops.num_edges();
    line_laplacian_ = Tensor::identity(m) - p_;
    line_laplacian_pinv_ = symmetric_pinv(line_laplacian_);
  }

  const IncidenceOperators& ops() const { return ops_; }
  const Tensor& laplacian() const { return laplacian_; }
  const Tensor& laplacian_pinv() const { return laplacian_pinv_; }
  const Tensor& transition() const { return p_; }
  const Tensor& line_laplacian() const { return line_laplacian_; }
  const Tensor& line_laplacian_pinv() const { return line_laplacian_pinv_; }

  /// RD over the line graph: L~+_ii + L~+_jj - 2 L~+_ij.
  double resistance_distance(std::size_t ei, std::size_t ej) const {
    check_edge(ei);
    check_edge(ej);
    const Tensor& q = line_laplacian_pinv_;
    return q(ei, ei) + q(ej, ej) - 2.0 * q(ei, ej);
  }

  /// s(e) = L+_uu + L+_ii - 2 L+_ui.
  double spanning_centrality(std::size_t e) const {
    check_edge(e);
    const auto u = ops_.edge_user(e), i = ops_.item_row(e);
    const Tensor& q = laplacian_pinv_;
    return q(u, u) + q(i, i) - 2.0 * q(u, i);
  }

  /// Fraction of maximal spanning forests containing each edge, by exhaustive
  /// enumeration of edge subsets.
  std::vector<double> spanning_centrality_by_enumeration() const {
    const std::size_t m = ops_.num_edges();
    if (m > kMaxEnumerationEdges) throw ScaleError("spanning-tree enumeration: too many edges");
    std::size_t comps = 0;
    node_components(ops_, &comps);
    const std::size_t forest_size = ops_.num_nodes() - comps;
    std::vector<double> hits(m, 0.0);
    double total = 0.0;
    for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != forest_size) continue;
      std::vector<std::size_t> parent(ops_.num_nodes());
      std::iota(parent.begin(), parent.end(), 0);
      auto find = [&](std::size_t v) {
        while (parent[v] != v) v = parent[v] = parent[parent[v]];
        return v;
      };
      bool acyclic = true;
      for (std::size_t e = 0; e < m && acyclic; ++e) {
        if (!(mask & (1u << e))) continue;
        const auto a = find(ops_.edge_user(e)), b = find(ops_.item_row(e));
        if (a == b) acyclic = false;
        else parent[a] = b;
      }
      if (!acyclic) continue;
      total += 1.0;
      for (std::size_t e = 0; e < m; ++e)
        if (mask & (1u << e)) hits[e] += 1.0;
    }
    for (double& h : hits) h /= total;
    return hits;
  }

  /// sum_{l=0..lmax} alpha^l P^l by repeated multiplication.
  Tensor katz_partial(double alpha, std::size_t lmax) const {
    const std::size_t m = ops_.num_edges();
    Tensor acc = Tensor::identity(m);
    Tensor power = Tensor::identity(m);
    for (std::size_t l = 1; l <= lmax; ++l) {
      power = matmul(power, p_) * alpha;
      acc += power;
    }
    return acc;
  }

  /// Same partial sum with the stationary (eigenvalue-1) component of P
  /// projected out of every power, then restricted to the complement.
  Tensor katz_projected_partial(std::size_t lmax) const {
    const std::size_t m = ops_.num_edges();
    const Tensor proj = stationary_projector();
    const Tensor comp = Tensor::identity(m) - proj;
    const Tensor pbar = p_ - proj;
    Tensor acc = Tensor::identity(m);
    Tensor power = Tensor::identity(m);
    for (std::size_t l = 1; l <= lmax; ++l) {
      power = matmul(power, pbar);
      acc += power;
    }
    return matmul(matmul(comp, acc), comp);
  }

  /// Orthogonal projector onto the eigenvalue-1 eigenspace of P.
  Tensor stationary_projector() const {
    const EigenSystem es = symmetric_eigen(p_);
    return spectral_map(es, [](double l) { return std::abs(l - 1.0) <= 1e-9 ? 1.0 : 0.0; });
  }

  /// Number of connected components of the line graph (edges sharing a node).
  std::size_t line_graph_components() const {
    std::size_t comps = 0;
    const auto id = node_components(ops_, &comps);
    std::vector<bool> seen(comps, false);
    std::size_t n = 0;
    for (std::size_t e = 0; e < ops_.num_edges(); ++e)
      if (!seen[id[ops_.edge_user(e)]]) {
        seen[id[ops_.edge_user(e)]] = true;
        ++n;
      }
    return n;
  }

 private:
  void check_edge(std::size_t e) const {
    if (e >= ops_.num_edges()) throw DimensionError("oracle: edge index out of range");
  }

  IncidenceOperators ops_;
  Tensor laplacian_, laplacian_pinv_, p_, line_laplacian_, line_laplacian_pinv_;
};

}  // namespace saft::oracle
