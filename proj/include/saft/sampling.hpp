#pragma once

// Neighborhood samplers for mini-batches. For an anchor interaction e and one
// of its endpoints, pick up to b other interactions of that endpoint:
//   distance:   weight(e') = max(0, Zd[e] . Zd[e'])
//   centrality: weight(e') = ||Zc[e']||^2
//   random:     uniform
// Draws are without replacement via exponential clocks: key = Exp(1) / w,
// smallest keys win, so each single draw is proportional to w.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "saft/graph.hpp"

namespace saft {

enum class SamplerKind { Distance, Centrality, Random };

inline const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::Distance: return "distance";
    case SamplerKind::Centrality: return "centrality";
    default: return "random";
  }
}

inline SamplerKind parse_sampler(const std::string& s) {
  if (s == "distance") return SamplerKind::Distance;
  if (s == "centrality") return SamplerKind::Centrality;
  if (s == "random") return SamplerKind::Random;
  throw ContractError("unknown sampler: " + s);
}

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Distance;
  std::size_t b = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (b < 1) throw ContractError("sampler budget b must be at least 1");
  }
};

struct NeighborSample {
  Side side = Side::User;
  std::size_t node = 0;
  std::vector<std::size_t> edges;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(seed ^ splitmix64(a)) ^ b) ^ c);
}

/// Indices of up to b entries drawn without replacement, each draw
/// proportional to the remaining weights. Zero-weight entries only fill
/// remaining slots, in uniformly random order. Negative weights are
/// treated as zero; if every weight vanishes the draw is uniform.
inline std::vector<std::size_t> weighted_sample_without_replacement(const std::vector<double>& weights,
                                                                    std::size_t b, std::mt19937_64& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const bool any_positive = std::any_of(weights.begin(), weights.end(), [](double w) { return w > 0.0; });
  struct Key {
    bool zero;
    double key;
    std::size_t idx;
  };
  std::vector<Key> keys;
  keys.reserve(weights.size());
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const double w = any_positive ? std::max(0.0, weights[j]) : 1.0;
    if (w > 0.0) keys.push_back({false, expo(rng) / w, j});
    else keys.push_back({true, unif(rng), j});
  }
  const std::size_t take = std::min(b, keys.size());
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(take), keys.end(),
                    [](const Key& x, const Key& y) {
                      if (x.zero != y.zero) return !x.zero;
                      if (x.key != y.key) return x.key < y.key;
                      return x.idx < y.idx;
                    });
  std::vector<std::size_t> out;
  out.reserve(take);
  for (std::size_t j = 0; j < take; ++j) out.push_back(keys[j].idx);
  return out;
}

namespace detail {

inline std::size_t anchor_node(const IncidenceOperators& ops, std::size_t anchor_edge, Side side) {
  if (anchor_edge >= ops.num_edges()) throw ContractError("anchor edge out of range");
  return side == Side::User ? ops.edge_user(anchor_edge) : ops.edge_item(anchor_edge);
}

inline void check_incident(const IncidenceOperators& ops, std::size_t node, std::size_t anchor_edge, Side side) {
  if (detail::anchor_node(ops, anchor_edge, side) != node)
    throw ContractError("anchor edge is not incident to the anchor node");
}

inline std::vector<std::size_t> candidates(const IncidenceOperators& ops, std::size_t anchor_edge, Side side) {
  const std::size_t node = anchor_node(ops, anchor_edge, side);
  std::vector<std::size_t> c;
  for (std::size_t e : ops.incident_edges(side, node))
    if (e != anchor_edge) c.push_back(e);
  return c;
}

template <class WeightFn>
NeighborSample sample_with(const IncidenceOperators& ops, std::size_t anchor_edge, Side side,
                           const SamplerConfig& cfg, std::uint64_t salt, WeightFn weight) {
  cfg.validate();
  NeighborSample s;
  s.side = side;
  s.node = anchor_node(ops, anchor_edge, side);
  const auto cand = candidates(ops, anchor_edge, side);
  if (cand.size() <= cfg.b) {
    s.edges = cand;
    return s;
  }
  std::vector<double> w(cand.size());
  for (std::size_t j = 0; j < cand.size(); ++j) w[j] = weight(cand[j]);
  std::mt19937_64 rng(stream_seed(cfg.seed, salt, side == Side::User ? 0 : 1, s.node));
  for (std::size_t j : weighted_sample_without_replacement(w, cfg.b, rng)) s.edges.push_back(cand[j]);
  return s;
}

}  // namespace detail

inline NeighborSample sample_distance(const IncidenceOperators& ops, std::size_t anchor_edge, Side side,
                                      const Tensor& zd, const SamplerConfig& cfg, std::uint64_t salt = 0) {
  if (zd.rows() != ops.num_edges()) throw DimensionError("distance sampler: embedding rows must equal |E|");
  const auto a = zd.row(anchor_edge);
  return detail::sample_with(ops, anchor_edge, side, cfg, salt, [&](std::size_t e) {
    double dot = 0.0;
    const auto r = zd.row(e);
    for (std::size_t j = 0; j < r.size(); ++j) dot += a[j] * r[j];
    return std::max(0.0, dot);
  });
}

inline NeighborSample sample_centrality(const IncidenceOperators& ops, std::size_t anchor_edge, Side side,
                                        const Tensor& zc, const SamplerConfig& cfg, std::uint64_t salt = 0) {
  if (zc.rows() != ops.num_edges()) throw DimensionError("centrality sampler: embedding rows must equal |E|");
  return detail::sample_with(ops, anchor_edge, side, cfg, salt, [&](std::size_t e) {
    double s = 0.0;
    for (double v : zc.row(e)) s += v * v;
    return s;
  });
}

inline NeighborSample sample_random(const IncidenceOperators& ops, std::size_t anchor_edge, Side side,
                                    const SamplerConfig& cfg, std::uint64_t salt = 0) {
  return detail::sample_with(ops, anchor_edge, side, cfg, salt, [](std::size_t) { return 1.0; });
}

/// Dispatch on cfg.kind; also checks that anchor_edge touches node.
inline NeighborSample sample_neighbors(const IncidenceOperators& ops, std::size_t node, std::size_t anchor_edge,
                                       Side side, const Tensor& zd, const Tensor& zc, const SamplerConfig& cfg,
                                       std::uint64_t salt = 0) {
  detail::check_incident(ops, node, anchor_edge, side);
  switch (cfg.kind) {
    case SamplerKind::Distance: return sample_distance(ops, anchor_edge, side, zd, cfg, salt);
    case SamplerKind::Centrality: return sample_centrality(ops, anchor_edge, side, zc, cfg, salt);
    default: return sample_random(ops, anchor_edge, side, cfg, salt);
  }
}

/// Targets plus the sampled neighborhoods of their users and items. Each
/// anchor node is sampled once per batch, with the first target touching it
/// as the anchor edge, and the sample is shared by all targets at that node.
struct BatchNeighborhood {
  std::vector<std::size_t> targets;
  std::vector<std::size_t> edges;  // targets first, then sampled edges, no repeats
  std::map<std::pair<int, std::size_t>, NeighborSample> samples;

  const NeighborSample& sample(Side side, std::size_t node) const {
    return samples.at({side == Side::User ? 0 : 1, node});
  }
};

inline BatchNeighborhood sample_batch(const IncidenceOperators& ops, const std::vector<std::size_t>& targets,
                                      const Tensor& zd, const Tensor& zc, const SamplerConfig& cfg,
                                      std::uint64_t salt) {
  BatchNeighborhood nb;
  nb.targets = targets;
  std::vector<bool> in_batch(ops.num_edges(), false);
  auto push = [&](std::size_t e) {
    if (!in_batch[e]) {
      in_batch[e] = true;
      nb.edges.push_back(e);
    }
  };
  for (std::size_t e : targets) {
    if (e >= ops.num_edges()) throw ContractError("batch target out of range");
    push(e);
  }
  for (std::size_t e : targets) {
    for (Side side : {Side::User, Side::Item}) {
      const std::size_t node = side == Side::User ? ops.edge_user(e) : ops.edge_item(e);
      const std::pair<int, std::size_t> key{side == Side::User ? 0 : 1, node};
      if (nb.samples.count(key)) continue;
      nb.samples.emplace(key, sample_neighbors(ops, node, e, side, zd, zc, cfg, salt));
    }
  }
  for (const auto& [key, s] : nb.samples)
    for (std::size_t e : s.edges) push(e);
  return nb;
}

}  // namespace saft
