#pragma once

// Bipartite textual interaction network (TIN) and incidence-derived operators.
//
// Edge order is insertion order and is the canonical index space for every
// per-interaction matrix in the library (embeddings, labels, batches).
// Transition matrices are applied implicitly through the incidence structure:
//
//   P_user = E_u diag(d_u + 1)^-1 E_u^T
//   P_item = E_i diag(d_i + 1)^-1 E_i^T
//   P_line = E^T (diag(d)^-1 / 2) E
//
// none of which is ever materialized outside the oracles.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "saft/autodiff.hpp"
#include "saft/tensor.hpp"

namespace saft {

struct IngestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Side { User, Item };

struct Interaction {
  std::size_t user = 0;
  std::size_t item = 0;
  int label = 0;
  std::string text;
};

class TinGraph {
 public:
  TinGraph() = default;
  TinGraph(std::size_t num_users, std::size_t num_items, int num_classes)
      : num_users_(num_users), num_items_(num_items), num_classes_(num_classes) {}

  /// Adds an interaction; rejects out-of-range endpoints and duplicate pairs.
  std::size_t add(std::size_t user, std::size_t item, int label, std::string text = {}) {
    if (user >= num_users_ || item >= num_items_)
      throw IngestError("interaction references an unknown user or item");
    if (!pairs_.emplace(std::make_pair(user, item), edges_.size()).second)
      throw IngestError("duplicate interaction (" + std::to_string(user) + ", " +
                        std::to_string(item) + ")");
    edges_.push_back({user, item, label, std::move(text)});
    return edges_.size() - 1;
  }

  void validate() const {
    if (num_classes_ < 2) throw IngestError("class count must be at least 2");
    for (const auto& e : edges_)
      if (e.label < 0 || e.label >= num_classes_) throw IngestError("label out of range");
  }

  std::size_t num_users() const noexcept { return num_users_; }
  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t num_nodes() const noexcept { return num_users_ + num_items_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  int num_classes() const noexcept { return num_classes_; }
  void set_num_classes(int k) { num_classes_ = k; }

  const Interaction& edge(std::size_t e) const { return edges_.at(e); }
  const std::vector<Interaction>& edges() const noexcept { return edges_; }

  std::vector<int> labels() const {
    std::vector<int> y;
    y.reserve(edges_.size());
    for (const auto& e : edges_) y.push_back(e.label);
    return y;
  }

  /// Optional external identifiers (dataset strings), indexed like users/items.
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  int num_classes_ = 2;
  std::vector<Interaction> edges_;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> pairs_;
};

/// Incidence structure of a TIN. The unoriented incidence E and oriented
/// incidence B share one sparsity pattern: column e has entries at rows
/// user(e) and |U| + item(e), equal to (1, 1) in E and (+1, -1) in B.
class IncidenceOperators {
 public:
  IncidenceOperators() = default;

  static IncidenceOperators from_edges(std::size_t num_users, std::size_t num_items,
                                       const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
    IncidenceOperators ops;
    ops.num_users_ = num_users;
    ops.num_items_ = num_items;
    ops.edge_user_.reserve(edges.size());
    ops.edge_item_.reserve(edges.size());
    ops.user_degree_.assign(num_users, 0);
    ops.item_degree_.assign(num_items, 0);
    for (const auto& [u, i] : edges) {
      if (u >= num_users || i >= num_items) throw IngestError("edge endpoint out of range");
      ops.edge_user_.push_back(u);
      ops.edge_item_.push_back(i);
      ++ops.user_degree_[u];
      ++ops.item_degree_[i];
    }
    build_csr(ops.edge_user_, num_users, ops.user_offsets_, ops.user_edges_);
    build_csr(ops.edge_item_, num_items, ops.item_offsets_, ops.item_edges_);
    return ops;
  }

  std::size_t num_users() const noexcept { return num_users_; }
  std::size_t num_items() const noexcept { return num_items_; }
  std::size_t num_nodes() const noexcept { return num_users_ + num_items_; }
  std::size_t num_edges() const noexcept { return edge_user_.size(); }

  std::size_t edge_user(std::size_t e) const { return edge_user_[e]; }
  std::size_t edge_item(std::size_t e) const { return edge_item_[e]; }
  /// Row of the item endpoint in the stacked (users, items) node index.
  std::size_t item_row(std::size_t e) const { return num_users_ + edge_item_[e]; }

  std::size_t user_degree(std::size_t u) const { return user_degree_[u]; }
  std::size_t item_degree(std::size_t i) const { return item_degree_[i]; }

  /// Degree vector d over stacked nodes (users first, then items).
  std::vector<double> degrees() const {
    std::vector<double> d;
    d.reserve(num_nodes());
    for (auto v : user_degree_) d.push_back(static_cast<double>(v));
    for (auto v : item_degree_) d.push_back(static_cast<double>(v));
    return d;
  }

  std::span<const std::size_t> user_edges(std::size_t u) const {
    return {user_edges_.data() + user_offsets_[u], user_offsets_[u + 1] - user_offsets_[u]};
  }
  std::span<const std::size_t> item_edges(std::size_t i) const {
    return {item_edges_.data() + item_offsets_[i], item_offsets_[i + 1] - item_offsets_[i]};
  }
  std::span<const std::size_t> incident_edges(Side side, std::size_t node) const {
    return side == Side::User ? user_edges(node) : item_edges(node);
  }

  /// Operators of the subgraph induced by an edge subset. Nodes are
  /// re-indexed in first-appearance order; degrees are recomputed.
  IncidenceOperators induced(const std::vector<std::size_t>& edge_subset) const {
    std::vector<std::size_t> umap(num_users_, npos), imap(num_items_, npos);
    std::size_t nu = 0, ni = 0;
    std::vector<std::pair<std::size_t, std::size_t>> local;
    local.reserve(edge_subset.size());
    for (std::size_t e : edge_subset) {
      if (e >= num_edges()) throw DimensionError("induced: edge index out of range");
      std::size_t& lu = umap[edge_user_[e]];
      std::size_t& li = imap[edge_item_[e]];
      if (lu == npos) lu = nu++;
      if (li == npos) li = ni++;
      local.emplace_back(lu, li);
    }
    return from_edges(nu, ni, local);
  }

 private:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  static void build_csr(const std::vector<std::size_t>& endpoint, std::size_t n,
                        std::vector<std::size_t>& offsets, std::vector<std::size_t>& list) {
    offsets.assign(n + 1, 0);
    for (auto v : endpoint) ++offsets[v + 1];
    for (std::size_t k = 0; k < n; ++k) offsets[k + 1] += offsets[k];
    list.assign(endpoint.size(), 0);
    std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t e = 0; e < endpoint.size(); ++e) list[cursor[endpoint[e]]++] = e;
  }

  std::size_t num_users_ = 0, num_items_ = 0;
  std::vector<std::size_t> edge_user_, edge_item_;
  std::vector<std::size_t> user_degree_, item_degree_;
  std::vector<std::size_t> user_offsets_, user_edges_, item_offsets_, item_edges_;
};

inline IncidenceOperators build_incidence(const TinGraph& g) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(g.num_edges());
  for (const auto& e : g.edges()) pairs.emplace_back(e.user, e.item);
  return IncidenceOperators::from_edges(g.num_users(), g.num_items(), pairs);
}

namespace detail {

// out = E_s diag(shifted)^-1 E_s^T X for one side, O(|E| * cols).
inline Tensor apply_side_transition(const IncidenceOperators& ops, const Tensor& x, Side side) {
  if (x.rows() != ops.num_edges())
    throw DimensionError("transition apply: expected " + std::to_string(ops.num_edges()) +
                         " rows, got " + std::to_string(x.rows()));
  const std::size_t c = x.cols();
  const std::size_t n = side == Side::User ? ops.num_users() : ops.num_items();
  Tensor node_sum = Tensor::zeros(n, c);
  for (std::size_t e = 0; e < ops.num_edges(); ++e) {
    const std::size_t v = side == Side::User ? ops.edge_user(e) : ops.edge_item(e);
    auto dst = node_sum.row(v);
    auto src = x.row(e);
    for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
  }
  for (std::size_t v = 0; v < n; ++v) {
    const double deg = static_cast<double>(side == Side::User ? ops.user_degree(v) : ops.item_degree(v));
    const double inv = 1.0 / (deg + 1.0);
    for (double& s : node_sum.row(v)) s *= inv;
  }
  Tensor out = Tensor::zeros(ops.num_edges(), c);
  for (std::size_t e = 0; e < ops.num_edges(); ++e) {
    const std::size_t v = side == Side::User ? ops.edge_user(e) : ops.edge_item(e);
    auto src = node_sum.row(v);
    std::copy(src.begin(), src.end(), out.row(e).begin());
  }
  return out;
}

}  // namespace detail

/// P_user X via the reordered product E_u (diag(d_u + 1)^-1 (E_u^T X)).
inline Tensor apply_user_transition(const IncidenceOperators& ops, const Tensor& x) {
  return detail::apply_side_transition(ops, x, Side::User);
}

inline Tensor apply_item_transition(const IncidenceOperators& ops, const Tensor& x) {
  return detail::apply_side_transition(ops, x, Side::Item);
}

inline Tensor apply_side_transition(const IncidenceOperators& ops, const Tensor& x, Side side) {
  return detail::apply_side_transition(ops, x, side);
}

/// P X with P = E^T (diag(d)^-1 / 2) E, the line-graph random walk.
inline Tensor apply_line_transition(const IncidenceOperators& ops, const Tensor& x) {
  if (x.rows() != ops.num_edges()) throw DimensionError("line transition: row count mismatch");
  const std::size_t c = x.cols();
  Tensor node_sum = Tensor::zeros(ops.num_nodes(), c);
  for (std::size_t e = 0; e < ops.num_edges(); ++e) {
    auto src = x.row(e);
    auto du = node_sum.row(ops.edge_user(e));
    auto di = node_sum.row(ops.item_row(e));
    for (std::size_t j = 0; j < c; ++j) {
      du[j] += src[j];
      di[j] += src[j];
    }
  }
  const auto d = ops.degrees();
  for (std::size_t v = 0; v < ops.num_nodes(); ++v) {
    const double s = d[v] > 0 ? 0.5 / d[v] : 0.0;
    for (double& x_ : node_sum.row(v)) x_ *= s;
  }
  Tensor out = Tensor::zeros(ops.num_edges(), c);
  for (std::size_t e = 0; e < ops.num_edges(); ++e) {
    auto du = node_sum.row(ops.edge_user(e));
    auto di = node_sum.row(ops.item_row(e));
    auto dst = out.row(e);
    for (std::size_t j = 0; j < c; ++j) dst[j] = du[j] + di[j];
  }
  return out;
}

/// Differentiable side transition. P_user and P_item are symmetric, so the
/// adjoint is the same apply.
inline Var apply_side_transition(const IncidenceOperators& ops, const Var& x, Side side) {
  Tensor out = detail::apply_side_transition(ops, x.value(), side);
  const IncidenceOperators* p = &ops;
  return x.tape().record(std::move(out), {x}, [x, p, side](Tape& t, const Tensor& g) {
    t.accumulate(x, detail::apply_side_transition(*p, g, side));
  });
}

/// Softmax over the nonzero entries of each row; zeros stay zero and an
/// all-zero row maps to all zeros.
inline Tensor ssoftmax_dense(const Tensor& m) {
  Tensor out = Tensor::zeros(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : m.row(i))
      if (v != 0.0) mx = std::max(mx, v);
    if (!std::isfinite(mx)) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (m(i, j) != 0.0) s += (out(i, j) = std::exp(m(i, j) - mx));
    for (double& v : out.row(i)) v /= s;
  }
  return out;
}

/// Connected components of the TIN over stacked nodes. Returns the component
/// id of every node; isolated nodes form their own components.
inline std::vector<std::size_t> node_components(const IncidenceOperators& ops, std::size_t* count = nullptr) {
  std::vector<std::size_t> parent(ops.num_nodes());
  for (std::size_t v = 0; v < parent.size(); ++v) parent[v] = v;
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (std::size_t e = 0; e < ops.num_edges(); ++e) {
    const auto a = find(ops.edge_user(e)), b = find(ops.item_row(e));
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::size_t> id(parent.size());
  std::map<std::size_t, std::size_t> label;
  for (std::size_t v = 0; v < parent.size(); ++v) {
    const auto r = find(v);
    auto it = label.emplace(r, label.size()).first;
    id[v] = it->second;
  }
  if (count) *count = label.size();
  return id;
}

}  // namespace saft
