#pragma once

// Seeded generators: random small TINs for property tests and a planted-signal
// network whose labels combine the user's community with a text signal.

#include <algorithm>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "saft/graph.hpp"

namespace saft::synth {

/// Random bipartite edge list with exactly min(m, nu*ni) distinct pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> random_edges(std::size_t nu, std::size_t ni, std::size_t m,
                                                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  m = std::min(m, nu * ni);
  std::vector<std::size_t> cells(nu * ni);
  for (std::size_t k = 0; k < cells.size(); ++k) cells[k] = k;
  std::shuffle(cells.begin(), cells.end(), rng);
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t k = 0; k < m; ++k) e.emplace_back(cells[k] / ni, cells[k] % ni);
  return e;
}

/// Random instance for identity checks: |U|, |I| in [2, max_nodes],
/// |E| in [2, max_edges]. Isolated nodes and several components occur.
inline IncidenceOperators random_incidence(std::uint64_t seed, std::size_t max_nodes = 10,
                                           std::size_t max_edges = 25) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nodes(2, max_nodes);
  const std::size_t nu = nodes(rng), ni = nodes(rng);
  std::uniform_int_distribution<std::size_t> edges(2, std::min(max_edges, nu * ni));
  const std::size_t m = edges(rng);
  return IncidenceOperators::from_edges(nu, ni, random_edges(nu, ni, m, rng()));
}

/// Path, cycle and star fixtures.
inline IncidenceOperators path_graph(std::size_t edges) {
  // u0 - i0 - u1 - i1 - ...
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t k = 0; k < edges; ++k) e.emplace_back((k + 1) / 2, k / 2);
  return IncidenceOperators::from_edges((edges + 2) / 2, (edges + 1) / 2, e);
}

inline IncidenceOperators cycle_graph(std::size_t half) {
  // C_{2 half}: u_k - i_k - u_{k+1}
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t k = 0; k < half; ++k) {
    e.emplace_back(k, k);
    e.emplace_back((k + 1) % half, k);
  }
  return IncidenceOperators::from_edges(half, half, e);
}

inline IncidenceOperators star_graph(std::size_t leaves) {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t k = 0; k < leaves; ++k) e.emplace_back(0, k);
  return IncidenceOperators::from_edges(1, leaves, e);
}

struct PlantedConfig {
  std::size_t num_users = 60;
  std::size_t num_items = 40;
  std::size_t edges_per_user = 10;
  double cross_prob = 0.03;        // chance an edge leaves the user's community
  std::size_t words = 8;           // words per text
  std::size_t signal_words = 4;    // words drawn from the signal vocabulary
  std::size_t filler_vocab = 50;
  std::size_t signal_vocab = 4;    // per signal class
  std::uint64_t seed = 7;
};

/// Labels are 2 * community(user) + signal(text), so K = 4. The text carries
/// the signal class only; the community is visible only through structure.
inline TinGraph planted_signal(const PlantedConfig& c) {
  std::mt19937_64 rng(c.seed);
  TinGraph g(c.num_users, c.num_items, 4);
  for (std::size_t u = 0; u < c.num_users; ++u) g.user_names.push_back("u" + std::to_string(u));
  for (std::size_t i = 0; i < c.num_items; ++i) g.item_names.push_back("i" + std::to_string(i));
  auto community_u = [&](std::size_t u) { return u * 2 / c.num_users; };
  auto community_i = [&](std::size_t i) { return i * 2 / c.num_items; };
  std::vector<std::size_t> items_of[2];
  for (std::size_t i = 0; i < c.num_items; ++i) items_of[community_i(i)].push_back(i);

  std::bernoulli_distribution cross(c.cross_prob), coin(0.5);
  std::uniform_int_distribution<std::size_t> filler(0, c.filler_vocab - 1), sig(0, c.signal_vocab - 1);
  for (std::size_t u = 0; u < c.num_users; ++u) {
    const std::size_t cu = community_u(u);
    std::set<std::size_t> chosen;
    std::size_t guard = 0;
    while (chosen.size() < c.edges_per_user && guard++ < 100 * c.edges_per_user) {
      const auto& pool = items_of[cross(rng) ? 1 - cu : cu];
      chosen.insert(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
    }
    for (std::size_t i : chosen) {
      const int signal = coin(rng) ? 1 : 0;
      std::vector<std::string> w;
      for (std::size_t k = 0; k < c.words - c.signal_words; ++k) w.push_back("w" + std::to_string(filler(rng)));
      for (std::size_t k = 0; k < c.signal_words; ++k)
        w.push_back((signal ? "pos" : "neg") + std::to_string(sig(rng)));
      std::shuffle(w.begin(), w.end(), rng);
      std::string text;
      for (const auto& s : w) text += (text.empty() ? "" : " ") + s;
      g.add(u, i, static_cast<int>(2 * cu) + signal, text);
    }
  }
  return g;
}

}  // namespace saft::synth
