#pragma once

// Verification suites beyond the embedding identities: transition operators,
// implicit message passing against dense recurrences, per-component sums.

#include <cmath>
#include <optional>
#include <random>
#include <string>

#include "saft/message_passing.hpp"
#include "saft/oracles.hpp"
#include "saft/struct_embed.hpp"

namespace saft {

inline constexpr double kIdentityTol = 1e-12;
inline constexpr double kTrajectoryTol = 1e-10;

namespace detail {

inline Tensor seeded_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t = Tensor::zeros(r, c);
  for (double& v : t.data()) v = n(rng);
  return t;
}

inline Tensor dense_affine(const Tensor& x, const Linear& l) {
  Tensor y = matmul(x, l.w->value);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += l.b->value(0, j);
  return y;
}

inline Tensor dense_silu(Tensor x) {
  for (double& v : x.data()) v *= sigmoid(v);
  return x;
}

inline Tensor dense_hadamard(Tensor a, const Tensor& b) {
  for (std::size_t k = 0; k < a.size(); ++k) a[k] *= b[k];
  return a;
}

}  // namespace detail

/// ssoftmax(E_s E_s^T / sqrt(n_s)) for one side.
inline Tensor scaled_side_ssoftmax(const IncidenceOperators& ops, Side side) {
  const Tensor es = oracle::side_incidence(ops, side);
  const double n = static_cast<double>(side == Side::User ? ops.num_users() : ops.num_items());
  return ssoftmax_dense(matmul_nt(es, es) * (1.0 / std::sqrt(n)));
}

/// Max deviation of the literal identity ssoftmax(E_s E_s^T / sqrt(n_s)) = P_s
/// over both sides.
inline double ssoftmax_identity_deviation(const IncidenceOperators& ops) {
  double dev = 0.0;
  for (Side side : {Side::User, Side::Item})
    dev = std::max(dev, max_abs_diff(scaled_side_ssoftmax(ops, side), oracle::side_transition(ops, side)));
  return dev;
}

/// Same, after scaling row e of the ssoftmax by d / (d + 1) for its node.
inline double rescaled_ssoftmax_deviation(const IncidenceOperators& ops) {
  double dev = 0.0;
  for (Side side : {Side::User, Side::Item}) {
    Tensor s = scaled_side_ssoftmax(ops, side);
    for (std::size_t e = 0; e < ops.num_edges(); ++e) {
      const double d = static_cast<double>(side == Side::User ? ops.user_degree(ops.edge_user(e))
                                                              : ops.item_degree(ops.edge_item(e)));
      for (double& v : s.row(e)) v *= d / (d + 1.0);
    }
    dev = std::max(dev, max_abs_diff(s, oracle::side_transition(ops, side)));
  }
  return dev;
}

struct StochasticDeviation {
  double rows = 0.0, cols = 0.0, laplacian = 0.0;
};

/// Row and column sums of the dense line transition against 1, and I - P
/// against the line-graph Laplacian built from edge adjacency.
inline StochasticDeviation line_transition_deviation(const IncidenceOperators& ops) {
  const Tensor p = oracle::line_transition(ops);
  const std::size_t m = p.rows();
  StochasticDeviation s;
  for (std::size_t i = 0; i < m; ++i) {
    double r = 0.0, c = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      r += p(i, j);
      c += p(j, i);
    }
    s.rows = std::max(s.rows, std::abs(r - 1.0));
    s.cols = std::max(s.cols, std::abs(c - 1.0));
  }
  s.laplacian = max_abs_diff(Tensor::identity(m) - p, oracle::line_graph_laplacian(ops));
  return s;
}

/// Max deviation between implicit operator applies and dense matrices.
inline double implicit_operator_deviation(const IncidenceOperators& ops, std::size_t d, std::uint64_t seed) {
  const Tensor x = detail::seeded_matrix(ops.num_edges(), d, seed);
  double dev = max_abs_diff(apply_line_transition(ops, x), matmul(oracle::line_transition(ops), x));
  for (Side side : {Side::User, Side::Item})
    dev = std::max(dev, max_abs_diff(apply_side_transition(ops, x, side), matmul(oracle::side_transition(ops, side), x)));
  return dev;
}

/// Runs R steps of `variant` with implicit operators and with dense side
/// transitions on seeded inputs and parameters; returns the largest deviation
/// over every step and both streams.
inline double trajectory_deviation(const IncidenceOperators& ops, MpVariant variant, std::size_t R, std::size_t d,
                                   std::uint64_t seed, double delta = 2.0, double lambda = 2.0) {
  const std::size_t m = ops.num_edges();
  ParamStore store;
  std::mt19937_64 rng(seed);
  const MpLayerParams p = make_mp_layer(store, "mp", d, variant, rng);
  const Tensor xt_u = detail::seeded_matrix(m, d, seed + 1), xt_i = detail::seeded_matrix(m, d, seed + 2);
  const Tensor x_u = detail::seeded_matrix(m, d, seed + 3), x_i = detail::seeded_matrix(m, d, seed + 4);

  Tape tape;
  Binding bind(tape);
  MpState s = init_embeddings(tape.constant(xt_u), tape.constant(xt_i), tape.constant(x_u), tape.constant(x_i), lambda);
  GauGates g;
  if (variant == MpVariant::Gau) g = gau_gates(bind, p, s);

  const Tensor pu = oracle::side_transition(ops, Side::User), pi = oracle::side_transition(ops, Side::Item);
  const Tensor u0 = xt_u + lambda * x_u, i0 = xt_i + lambda * x_i;
  Tensor u = u0, i = i0;
  Tensor gu, du, gi, di;
  if (variant == MpVariant::Gau) {
    gu = detail::dense_silu(detail::dense_affine(u0, p.user.gate));
    du = detail::dense_silu(detail::dense_affine(u0, p.user.resid));
    gi = detail::dense_silu(detail::dense_affine(i0, p.item.gate));
    di = detail::dense_silu(detail::dense_affine(i0, p.item.resid));
  }
  double dev = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (variant == MpVariant::Lga) {
      s = lga_step(s, ops, delta);
      u = matmul(pu, u) + delta * u0;
      i = matmul(pi, i) + delta * i0;
    } else {
      s = gau_step(bind, s, g, p, ops, delta);
      u = detail::dense_affine(detail::dense_hadamard(gu, matmul(pu, u) + delta * du), p.user.mix);
      i = detail::dense_affine(detail::dense_hadamard(gi, matmul(pi, i) + delta * di), p.item.mix);
    }
    dev = std::max({dev, max_abs_diff(s.user.value(), u), max_abs_diff(s.item.value(), i)});
  }
  return dev;
}

/// One row per connected component with at least one edge: centrality mass
/// against (nodes - 1) of that component.
inline VerificationReport component_report(const IncidenceOperators& ops, const Tensor& zc, double tolerance) {
  std::size_t count = 0;
  const auto comp = node_components(ops, &count);
  std::vector<double> mass(count, 0.0);
  std::vector<std::size_t> nodes(count, 0), edges(count, 0);
  for (std::size_t v = 0; v < comp.size(); ++v) ++nodes[comp[v]];
  for (std::size_t e = 0; e < ops.num_edges(); ++e) {
    const std::size_t c = comp[ops.edge_user(e)];
    ++edges[c];
    for (double v : zc.row(e)) mass[c] += v * v;
  }
  VerificationReport rep;
  for (std::size_t c = 0; c < count; ++c) {
    if (edges[c] == 0) continue;
    rep.add("component" + std::to_string(c) + "_nodes" + std::to_string(nodes[c]) + "_edges" +
                std::to_string(edges[c]) + "_centrality_mass",
            std::abs(mass[c] - static_cast<double>(nodes[c] - 1)), tolerance);
  }
  return rep;
}

/// Every suite on one small graph. The literal ssoftmax identity is reported
/// as informational; its rescaled form is the checked relation.
inline VerificationReport verify_all(const IncidenceOperators& ops, double tolerance,
                                     std::optional<Tensor> zd = std::nullopt, std::optional<Tensor> zc = std::nullopt,
                                     std::uint64_t seed = 0) {
  const Tensor zc_used = zc ? *zc : centrality_embeddings(ops, kFullRank, seed).z;
  VerificationReport rep = verify_embeddings(ops, tolerance, std::move(zd), zc_used, seed);
  rep.add("ssoftmax_equals_side_transition", ssoftmax_identity_deviation(ops), kIdentityTol, true);
  rep.add("rescaled_ssoftmax_equals_side_transition", rescaled_ssoftmax_deviation(ops), kIdentityTol);
  const auto st = line_transition_deviation(ops);
  rep.add("line_transition_row_sums", st.rows, kIdentityTol);
  rep.add("line_transition_col_sums", st.cols, kIdentityTol);
  rep.add("identity_minus_p_equals_line_laplacian", st.laplacian, kIdentityTol);
  rep.add("implicit_operators_match_dense", implicit_operator_deviation(ops, 4, seed), kIdentityTol);
  for (MpVariant v : {MpVariant::Lga, MpVariant::Gau})
    rep.add(std::string("reordered_") + to_string(v) + "_trajectory", trajectory_deviation(ops, v, 5, 4, seed),
            kTrajectoryTol);
  rep.append(component_report(ops, zc_used, tolerance));
  return rep;
}

}  // namespace saft
