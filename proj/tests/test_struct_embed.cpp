#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "check_util.hpp"
#include "saft/struct_embed.hpp"
#include "saft/synthetic.hpp"

using namespace saft;

namespace {

double sq_dist(const Tensor& z, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t j = 0; j < z.cols(); ++j) s += (z(a, j) - z(b, j)) * (z(a, j) - z(b, j));
  return s;
}

double sq_norm(const Tensor& z, std::size_t a) {
  double s = 0.0;
  for (double v : z.row(a)) s += v * v;
  return s;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("saft_test_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(DistanceEmbedding, TwoEdgePathGivesResistanceFour) {
  const auto ops = synth::path_graph(2);
  const auto r = distance_embeddings(ops, kFullRank, 0);
  EXPECT_EQ(r.z.cols(), 2u);
  EXPECT_NEAR(sq_dist(r.z, 0, 1), 4.0, 1e-10);
  EXPECT_EQ(r.dropped, 1u);
}

TEST(DistanceEmbedding, KiteMatchesFrozenResistances) {
  const auto ops = IncidenceOperators::from_edges(3, 2, {{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 1}});
  const auto z = distance_embeddings(ops, kFullRank, 3).z;
  EXPECT_NEAR(sq_dist(z, 0, 1), 3.0, 1e-10);
  EXPECT_NEAR(sq_dist(z, 0, 4), 5.75, 1e-10);
  EXPECT_NEAR(sq_dist(z, 2, 4), 5.75, 1e-10);
}

TEST(DistanceEmbedding, ColumnsBeyondEdgeCountAreZero) {
  const auto ops = synth::path_graph(3);
  const auto r = distance_embeddings(ops, 6, 0);
  EXPECT_EQ(r.z.cols(), 6u);
  EXPECT_EQ(r.rank_deficit, 3u);
  for (std::size_t e = 0; e < 3; ++e)
    for (std::size_t j = 3; j < 6; ++j) EXPECT_EQ(r.z(e, j), 0.0);
}

TEST(DistanceEmbedding, DroppedColumnsCountLineComponents) {
  const auto ops = IncidenceOperators::from_edges(4, 4, {{0, 0}, {1, 0}, {2, 2}, {3, 3}, {2, 3}, {3, 2}});
  EXPECT_EQ(distance_embeddings(ops, kFullRank, 0).dropped, 2u);
}

TEST(CentralityEmbedding, CycleAndTreeValues) {
  const auto c4 = synth::cycle_graph(2);
  const auto zc = centrality_embeddings(c4, kFullRank, 0).z;
  for (std::size_t e = 0; e < 4; ++e) EXPECT_NEAR(sq_norm(zc, e), 0.75, 1e-10);
  const auto star = synth::star_graph(5);
  const auto zs = centrality_embeddings(star, kFullRank, 0).z;
  for (std::size_t e = 0; e < 5; ++e) EXPECT_NEAR(sq_norm(zs, e), 1.0, 1e-10);
}

TEST(CentralityEmbedding, RankDeficitIsReported) {
  const auto c4 = synth::cycle_graph(2);
  const auto r = centrality_embeddings(c4, 4, 0);
  EXPECT_EQ(r.dropped, 1u);  // rank(B) = 3
  EXPECT_EQ(r.rank_deficit, 1u);
  for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(r.z(e, 3), 0.0);
}

TEST(CentralityEmbedding, SumRuleOnDisconnectedGraph) {
  const auto ops = IncidenceOperators::from_edges(5, 4, {{0, 0}, {1, 0}, {1, 1}, {2, 2}, {3, 2}, {3, 3}, {2, 3}});
  const auto z = centrality_embeddings(ops, kFullRank, 0).z;
  double total = 0.0;
  for (std::size_t e = 0; e < ops.num_edges(); ++e) total += sq_norm(z, e);
  std::size_t comps = 0;
  node_components(ops, &comps);
  EXPECT_NEAR(total, static_cast<double>(ops.num_nodes() - comps), 1e-9);
}

TEST(Verification, RandomInstancesPass) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ops = synth::random_incidence(seed);
    const auto rep = verify_embeddings(ops, 1e-6, std::nullopt, std::nullopt, seed);
    for (const auto& row : rep.rows) EXPECT_TRUE(row.pass) << "seed " << seed << " " << row.name << " " << row.deviation;
  }
}

TEST(Verification, CorruptedDistanceEmbeddingFails) {
  const auto ops = synth::path_graph(4);
  Tensor zd = distance_embeddings(ops, kFullRank, 0).z;
  zd(1, 0) += 0.5;
  const auto rep = verify_embeddings(ops, 1e-6, zd);
  EXPECT_FALSE(rep.rows[0].pass);
  EXPECT_EQ(rep.rows[0].name, "resistance_distance");
}

TEST(Verification, RefusesLargeGraphs) {
  const auto ops = IncidenceOperators::from_edges(9, 9, synth::random_edges(9, 9, 70, 0));
  EXPECT_THROW(verify_embeddings(ops, 1e-6), oracle::ScaleError);
}

TEST(EmbeddingFile, RoundTripIsExact) {
  const auto ops = synth::random_incidence(4);
  const auto z = distance_embeddings(ops, 8, 4).z;
  const auto path = temp_path("rt.emb");
  write_embedding(path, z, EmbeddingKind::Distance, 4);
  const auto f = read_embedding(path);
  EXPECT_EQ(f.kind, EmbeddingKind::Distance);
  EXPECT_EQ(f.seed, 4u);
  EXPECT_EQ(f.z.shape(), z.shape());
  EXPECT_EQ(f.z.data(), z.data());
  std::remove(path.c_str());
}

TEST(EmbeddingFile, SameSeedIsByteIdentical) {
  const auto ops = synth::random_incidence(6);
  const auto a = temp_path("a.emb"), b = temp_path("b.emb");
  write_embedding(a, compute_struct_embeddings(ops, 8, 1).centrality, EmbeddingKind::Centrality, 1);
  write_embedding(b, compute_struct_embeddings(ops, 8, 1).centrality, EmbeddingKind::Centrality, 1);
  EXPECT_EQ(slurp(a), slurp(b));
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST(EmbeddingFile, RejectsGarbage) {
  const auto path = temp_path("bad.emb");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTANEMBEDDING";
  }
  EXPECT_THROW(read_embedding(path), IngestError);
  std::remove(path.c_str());
}

TEST(StructEmbeddings, LargeGraphUsesImplicitOperators) {
  const auto ops = IncidenceOperators::from_edges(300, 200, synth::random_edges(300, 200, 3000, 5));
  const auto s = compute_struct_embeddings(ops, 16, 5);
  EXPECT_EQ(s.distance.rows(), 3000u);
  EXPECT_EQ(s.distance.cols(), 16u);
  EXPECT_TRUE(s.distance.all_finite());
  EXPECT_TRUE(s.centrality.all_finite());
}
