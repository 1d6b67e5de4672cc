#include <gtest/gtest.h>

#include <set>

#include "check_util.hpp"
#include "saft/sampling.hpp"
#include "saft/struct_embed.hpp"
#include "saft/synthetic.hpp"

using namespace saft;

namespace {

constexpr std::size_t kDraws = 100000;

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  double tv = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) tv += std::abs(p[j] - q[j]);
  return 0.5 * tv;
}

std::vector<double> normalized(std::vector<double> w) {
  double s = 0.0;
  for (double& v : w) s += (v = std::max(0.0, v));
  for (double& v : w) v /= s;
  return w;
}

/// Empirical first-draw frequencies of the sampler over salts, indexed by
/// candidate edge.
template <class Sampler>
std::vector<double> frequencies(std::size_t num_edges, Sampler sampler) {
  std::vector<double> f(num_edges, 0.0);
  for (std::size_t s = 0; s < kDraws; ++s) {
    const auto r = sampler(s);
    EXPECT_EQ(r.edges.size(), 1u);
    f[r.edges[0]] += 1.0 / kDraws;
  }
  return f;
}

}  // namespace

TEST(WeightedDraw, ProportionalSingleDraw) {
  std::mt19937_64 rng(1);
  std::vector<double> f(3, 0.0);
  for (std::size_t s = 0; s < kDraws; ++s) f[weighted_sample_without_replacement({3.0, 1.0, 0.0}, 1, rng)[0]] += 1.0;
  EXPECT_NEAR(f[0] / kDraws, 0.75, 0.01);
  EXPECT_NEAR(f[1] / kDraws, 0.25, 0.01);
  EXPECT_EQ(f[2], 0.0);
}

TEST(WeightedDraw, ZeroWeightsOnlyFillLeftovers) {
  std::mt19937_64 rng(2);
  for (int s = 0; s < 100; ++s) {
    auto two = weighted_sample_without_replacement({3.0, 0.0, 1.0, 0.0}, 2, rng);
    std::sort(two.begin(), two.end());
    EXPECT_EQ(two, (std::vector<std::size_t>{0, 2}));
    const auto three = weighted_sample_without_replacement({3.0, 0.0, 1.0, 0.0}, 3, rng);
    EXPECT_EQ(std::set<std::size_t>(three.begin(), three.begin() + 2), (std::set<std::size_t>{0, 2}));
  }
}

TEST(WeightedDraw, AllZeroFallsBackToUniform) {
  std::mt19937_64 rng(3);
  std::vector<double> f(4, 0.0);
  for (std::size_t s = 0; s < kDraws; ++s) f[weighted_sample_without_replacement({0, 0, -1, 0}, 1, rng)[0]] += 1.0 / kDraws;
  EXPECT_LE(total_variation(f, {0.25, 0.25, 0.25, 0.25}), 0.02);
}

TEST(WeightedDraw, NoDuplicates) {
  std::mt19937_64 rng(4);
  const auto s = weighted_sample_without_replacement(std::vector<double>(20, 1.0), 20, rng);
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 20u);
}

TEST(Sampler, SmallNeighborhoodReturnedWhole) {
  const auto star = synth::star_graph(4);
  const auto emb = compute_struct_embeddings(star, 4, 0);
  SamplerConfig cfg;
  cfg.b = 3;
  for (auto kind : {SamplerKind::Distance, SamplerKind::Centrality, SamplerKind::Random}) {
    cfg.kind = kind;
    const auto s = sample_neighbors(star, 0, 1, Side::User, emb.distance, emb.centrality, cfg, 5);
    EXPECT_EQ(s.edges, (std::vector<std::size_t>{0, 2, 3}));
    EXPECT_EQ(s.node, 0u);
  }
  const auto leaf = sample_neighbors(star, 2, 2, Side::Item, emb.distance, emb.centrality, cfg);
  EXPECT_TRUE(leaf.edges.empty());
}

TEST(Sampler, CentralityOnTreeAndCycleIsUniform) {
  for (const auto& ops : {synth::star_graph(6), synth::cycle_graph(3)}) {
    const auto zc = centrality_embeddings(ops, kFullRank, 0).z;
    SamplerConfig cfg;
    cfg.kind = SamplerKind::Centrality;
    cfg.b = 1;
    const auto f = frequencies(ops.num_edges(), [&](std::size_t s) {
      return sample_centrality(ops, 0, Side::User, zc, cfg, s);
    });
    const auto cand = ops.incident_edges(Side::User, ops.edge_user(0));
    std::vector<double> expect(ops.num_edges(), 0.0);
    for (std::size_t e : cand)
      if (e != 0) expect[e] = 1.0 / static_cast<double>(cand.size() - 1);
    EXPECT_LE(total_variation(f, expect), 0.02);
  }
}

TEST(Sampler, DistanceFollowsClampedDotProducts) {
  const auto ops = IncidenceOperators::from_edges(1, 6, {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5}});
  Tensor zd = testutil::random_tensor(6, 3, 7);
  SamplerConfig cfg;
  cfg.b = 1;
  const auto f = frequencies(6, [&](std::size_t s) { return sample_distance(ops, 0, Side::User, zd, cfg, s); });
  std::vector<double> w(6, 0.0);
  for (std::size_t e = 1; e < 6; ++e)
    for (std::size_t j = 0; j < 3; ++j) w[e] += zd(0, j) * zd(e, j);
  EXPECT_LE(total_variation(f, normalized(w)), 0.02);
}

TEST(Sampler, CentralityFollowsSquaredNorms) {
  const auto ops = IncidenceOperators::from_edges(1, 5, {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {0, 4}});
  const Tensor zc = Tensor::from_rows({{9, 9}, {1, 0}, {1, 1}, {0, 2}, {0, 0}});
  SamplerConfig cfg;
  cfg.kind = SamplerKind::Centrality;
  cfg.b = 1;
  const auto f = frequencies(5, [&](std::size_t s) { return sample_centrality(ops, 0, Side::User, zc, cfg, s); });
  EXPECT_LE(total_variation(f, {0, 1.0 / 7, 2.0 / 7, 4.0 / 7, 0}), 0.02);
}

TEST(Sampler, RandomIsUniformAndDeterministic) {
  const auto ops = synth::star_graph(5);
  SamplerConfig cfg;
  cfg.kind = SamplerKind::Random;
  cfg.b = 1;
  const auto f = frequencies(5, [&](std::size_t s) { return sample_random(ops, 4, Side::User, cfg, s); });
  EXPECT_LE(total_variation(f, {0.25, 0.25, 0.25, 0.25, 0}), 0.02);
  cfg.b = 2;
  cfg.seed = 11;
  EXPECT_EQ(sample_random(ops, 0, Side::User, cfg, 3).edges, sample_random(ops, 0, Side::User, cfg, 3).edges);
}

TEST(Sampler, RejectsNonIncidentAnchor) {
  const auto ops = synth::path_graph(4);
  const auto emb = compute_struct_embeddings(ops, 4, 0);
  SamplerConfig cfg;
  EXPECT_THROW(sample_neighbors(ops, 0, 3, Side::User, emb.distance, emb.centrality, cfg), ContractError);
  EXPECT_THROW(sample_neighbors(ops, 0, 99, Side::User, emb.distance, emb.centrality, cfg), ContractError);
  cfg.b = 0;
  EXPECT_THROW(sample_neighbors(ops, 0, 0, Side::User, emb.distance, emb.centrality, cfg), ContractError);
  EXPECT_THROW(sample_distance(ops, 0, Side::User, Tensor::zeros(2, 2), SamplerConfig{}), DimensionError);
}

TEST(BatchSampling, SharesSamplesAndHasNoRepeats) {
  const auto ops = IncidenceOperators::from_edges(12, 8, synth::random_edges(12, 8, 60, 3));
  const auto emb = compute_struct_embeddings(ops, 16, 3);
  SamplerConfig cfg;
  cfg.b = 2;
  cfg.seed = 4;
  const std::vector<std::size_t> targets{0, 5, 9, 17, 33};
  const auto nb = sample_batch(ops, targets, emb.distance, emb.centrality, cfg, 1);
  EXPECT_EQ(std::vector<std::size_t>(nb.edges.begin(), nb.edges.begin() + 5), targets);
  EXPECT_EQ(std::set<std::size_t>(nb.edges.begin(), nb.edges.end()).size(), nb.edges.size());
  for (std::size_t e : targets) {
    const auto& su = nb.sample(Side::User, ops.edge_user(e));
    EXPECT_LE(su.edges.size(), cfg.b);
    for (std::size_t n : su.edges) {
      EXPECT_EQ(ops.edge_user(n), ops.edge_user(e));
      EXPECT_NE(std::find(nb.edges.begin(), nb.edges.end(), n), nb.edges.end());
    }
  }
  const auto again = sample_batch(ops, targets, emb.distance, emb.centrality, cfg, 1);
  EXPECT_EQ(again.edges, nb.edges);
}
