#pragma once

// Interaction-level message passing on the user side and the item side.
//
// LGA: U^r = P U^{r-1} + delta * U^0
// GAU: U^r = Lin(Gamma .* (P U^{r-1} + delta * Delta)),
//      Gamma = SiLU(Lin_g(U^0)), Delta = SiLU(Lin_d(U^0))
// with U^0 = Xtilde + lambda * X, and the output LayerNorm(Lin(U^R)).
// P is the side transition of the stream (user streams use P_user).

#include <random>
#include <string>
#include <utility>

#include "saft/graph.hpp"
#include "saft/nn.hpp"

namespace saft {

enum class MpVariant { Lga, Gau };

inline const char* to_string(MpVariant v) { return v == MpVariant::Lga ? "lga" : "gau"; }

inline MpVariant parse_variant(const std::string& s) {
  if (s == "lga") return MpVariant::Lga;
  if (s == "gau") return MpVariant::Gau;
  throw ContractError("unknown message passing variant: " + s);
}

struct MpConfig {
  MpVariant variant = MpVariant::Lga;
  std::size_t R = 1;
  double delta = 2.0;
  double lambda = 2.0;

  void validate() const {
    if (R < 1) throw ContractError("message passing needs R >= 1");
    if (!(delta >= 0.0) || !(lambda >= 0.0)) throw ContractError("delta and lambda must be nonnegative");
  }
};

struct MpSideParams {
  Linear gate;   // GAU only
  Linear resid;  // GAU only
  Linear mix;    // GAU only, applied after gating
  Linear out;
  LayerNorm norm;
};

struct MpLayerParams {
  MpSideParams user;
  MpSideParams item;
};

inline MpSideParams make_mp_side(ParamStore& s, const std::string& prefix, std::size_t d, MpVariant v,
                                 std::mt19937_64& rng) {
  MpSideParams p;
  if (v == MpVariant::Gau) {
    p.gate = Linear::make(s, prefix + ".gate", d, d, rng);
    p.resid = Linear::make(s, prefix + ".resid", d, d, rng);
    p.mix = Linear::make(s, prefix + ".mix", d, d, rng);
  }
  p.out = Linear::make(s, prefix + ".out", d, d, rng);
  p.norm = LayerNorm::make(s, prefix + ".norm", d);
  return p;
}

inline MpLayerParams make_mp_layer(ParamStore& s, const std::string& prefix, std::size_t d, MpVariant v,
                                   std::mt19937_64& rng) {
  MpLayerParams p;
  p.user = make_mp_side(s, prefix + ".user", d, v, rng);
  p.item = make_mp_side(s, prefix + ".item", d, v, rng);
  return p;
}

struct MpState {
  Var user, item;    // U^{r}
  Var user0, item0;  // U^{0}
};

struct GauGates {
  Var gamma_user, delta_user, gamma_item, delta_item;
};

inline MpState init_embeddings(const Var& xt_user, const Var& xt_item, const Var& x_user, const Var& x_item,
                               double lambda) {
  if (!xt_user.value().same_shape(x_user.value()) || !xt_item.value().same_shape(x_item.value()) ||
      !xt_user.value().same_shape(xt_item.value()))
    throw DimensionError("init_embeddings: all inputs must share one |E| x d shape");
  MpState s;
  s.user0 = s.user = xt_user + lambda * x_user;
  s.item0 = s.item = xt_item + lambda * x_item;
  return s;
}

inline MpState lga_step(const MpState& s, const IncidenceOperators& ops, double delta) {
  MpState n = s;
  n.user = apply_side_transition(ops, s.user, Side::User) + delta * s.user0;
  n.item = apply_side_transition(ops, s.item, Side::Item) + delta * s.item0;
  return n;
}

inline GauGates gau_gates(Binding& bind, const MpLayerParams& p, const MpState& s) {
  GauGates g;
  g.gamma_user = silu(p.user.gate(bind, s.user0));
  g.delta_user = silu(p.user.resid(bind, s.user0));
  g.gamma_item = silu(p.item.gate(bind, s.item0));
  g.delta_item = silu(p.item.resid(bind, s.item0));
  return g;
}

inline MpState gau_step(Binding& bind, const MpState& s, const GauGates& g, const MpLayerParams& p,
                        const IncidenceOperators& ops, double delta) {
  MpState n = s;
  n.user = p.user.mix(bind, hadamard(g.gamma_user, apply_side_transition(ops, s.user, Side::User) +
                                                       delta * g.delta_user));
  n.item = p.item.mix(bind, hadamard(g.gamma_item, apply_side_transition(ops, s.item, Side::Item) +
                                                       delta * g.delta_item));
  return n;
}

inline std::pair<Var, Var> finalize(Binding& bind, const MpState& s, const MpLayerParams& p) {
  return {p.user.norm(bind, p.user.out(bind, s.user)), p.item.norm(bind, p.item.out(bind, s.item))};
}

/// Full module: init, R iterations of the configured variant, finalize.
inline std::pair<Var, Var> message_passing(Binding& bind, const MpLayerParams& p, const MpConfig& cfg,
                                           const IncidenceOperators& ops, const Var& xt_user,
                                           const Var& xt_item, const Var& x_user, const Var& x_item) {
  MpState s = init_embeddings(xt_user, xt_item, x_user, x_item, cfg.lambda);
  if (cfg.variant == MpVariant::Lga) {
    for (std::size_t r = 0; r < cfg.R; ++r) s = lga_step(s, ops, cfg.delta);
  } else {
    const GauGates g = gau_gates(bind, p, s);
    for (std::size_t r = 0; r < cfg.R; ++r) s = gau_step(bind, s, g, p, ops, cfg.delta);
  }
  return finalize(bind, s, p);
}

}  // namespace saft
