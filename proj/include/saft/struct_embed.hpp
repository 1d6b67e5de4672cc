#pragma once

// Distance and centrality embeddings of interactions.
//
// Distance: with U S V^T the SVD of diag(d)^-1/2 E, Z_d = V (I - S^2/2)^-1/2.
// S^2/2 are the eigenvalues of the line-graph walk P, which equals 1 once per
// connected component; those columns are scaled by 0 (pseudo-inverse reading).
// Asking for more columns than rank(diag(d)^-1/2 E) completes V with an
// orthonormal basis of its null space (singular value 0, scale 1), so that at
// full rank (k = |E|) Z_d Z_d^T = (I - P)^+ exactly.
//
// Centrality: with Phi L Psi^T the SVD of the oriented incidence B, Z_c = Psi
// restricted to nonzero singular values, so ||Z_c[e]||^2 is the spanning
// centrality of e at full rank.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "saft/graph.hpp"
#include "saft/oracles.hpp"
#include "saft/rsvd.hpp"

namespace saft {

/// diag(d)^-1/2 E as a (|U|+|I|) x |E| operator.
class NormalizedIncidence {
 public:
  explicit NormalizedIncidence(const IncidenceOperators& ops) : ops_(ops) {
    for (double d : ops.degrees()) inv_sqrt_.push_back(d > 0 ? 1.0 / std::sqrt(d) : 0.0);
  }
  std::size_t rows() const { return ops_.num_nodes(); }
  std::size_t cols() const { return ops_.num_edges(); }

  Tensor apply(const Tensor& x) const {
    Tensor out = Tensor::zeros(rows(), x.cols());
    for (std::size_t e = 0; e < cols(); ++e) {
      const auto u = ops_.edge_user(e), i = ops_.item_row(e);
      for (std::size_t j = 0; j < x.cols(); ++j) {
        out(u, j) += inv_sqrt_[u] * x(e, j);
        out(i, j) += inv_sqrt_[i] * x(e, j);
      }
    }
    return out;
  }

  Tensor apply_transpose(const Tensor& y) const {
    Tensor out = Tensor::zeros(cols(), y.cols());
    for (std::size_t e = 0; e < cols(); ++e) {
      const auto u = ops_.edge_user(e), i = ops_.item_row(e);
      for (std::size_t j = 0; j < y.cols(); ++j) out(e, j) = inv_sqrt_[u] * y(u, j) + inv_sqrt_[i] * y(i, j);
    }
    return out;
  }

 private:
  const IncidenceOperators& ops_;
  std::vector<double> inv_sqrt_;
};

/// Oriented incidence B as a (|U|+|I|) x |E| operator.
class OrientedIncidence {
 public:
  explicit OrientedIncidence(const IncidenceOperators& ops) : ops_(ops) {}
  std::size_t rows() const { return ops_.num_nodes(); }
  std::size_t cols() const { return ops_.num_edges(); }

  Tensor apply(const Tensor& x) const {
    Tensor out = Tensor::zeros(rows(), x.cols());
    for (std::size_t e = 0; e < cols(); ++e) {
      const auto u = ops_.edge_user(e), i = ops_.item_row(e);
      for (std::size_t j = 0; j < x.cols(); ++j) {
        out(u, j) += x(e, j);
        out(i, j) -= x(e, j);
      }
    }
    return out;
  }

  Tensor apply_transpose(const Tensor& y) const {
    Tensor out = Tensor::zeros(cols(), y.cols());
    for (std::size_t e = 0; e < cols(); ++e) {
      const auto u = ops_.edge_user(e), i = ops_.item_row(e);
      for (std::size_t j = 0; j < y.cols(); ++j) out(e, j) = y(u, j) - y(i, j);
    }
    return out;
  }

 private:
  const IncidenceOperators& ops_;
};

/// Request every column the embedding can meaningfully have.
inline constexpr std::size_t kFullRank = std::numeric_limits<std::size_t>::max();

/// |1 - s^2/2| at or below this is treated as the unit eigenvalue of P.
inline constexpr double kUnitComponentTol = 1e-9;
/// Centrality columns with s <= this * s_max are treated as null space.
inline constexpr double kCentralityRankTol = 1e-9;

struct EmbeddingResult {
  Tensor z;                       // |E| x k
  std::vector<double> singular;   // singular values backing each column (0 for completed/padded)
  std::size_t dropped = 0;        // columns zeroed (unit component or null space)
  std::size_t rank_deficit = 0;   // requested columns beyond the factorization's nonzero rank
};

struct StructEmbeddings {
  Tensor distance;
  Tensor centrality;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t dropped_unit = 0;
};

namespace detail {

inline SvdFactors factor(const auto& op, std::size_t k, std::uint64_t seed) {
  RsvdOptions opt;
  opt.seed = seed;
  return randomized_svd(op, k, opt);
}

}  // namespace detail

inline EmbeddingResult distance_embeddings(const IncidenceOperators& ops, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ContractError("distance_embeddings: k must be positive");
  const std::size_t m = ops.num_edges();
  if (m == 0) throw ContractError("distance_embeddings: graph has no interactions");
  const std::size_t cols = k == kFullRank ? m : k;
  const std::size_t k_svd = std::min({cols, m, ops.num_nodes()});
  const NormalizedIncidence op(ops);
  const SvdFactors f = detail::factor(op, k_svd, seed);

  // Right basis, completed into the null space when more columns than the
  // factorization provides are requested (up to |E|).
  const std::size_t k_basis = std::min(cols, m);
  detail::Columns basis(k_basis, std::vector<double>(m, 0.0));
  std::vector<bool> valid(k_basis, false);
  for (std::size_t j = 0; j < k_svd; ++j) {
    for (std::size_t e = 0; e < m; ++e) basis[j][e] = f.right(e, j);
    valid[j] = true;
  }
  detail::complete_orthonormal(basis, valid);

  EmbeddingResult r;
  r.z = Tensor::zeros(m, cols);
  r.singular.assign(cols, 0.0);
  for (std::size_t j = 0; j < k_basis; ++j) {
    const double s = j < k_svd ? f.values[j] : 0.0;
    r.singular[j] = s;
    const double gap = 1.0 - s * s / 2.0;
    double scale = 0.0;
    if (std::abs(gap) <= kUnitComponentTol) ++r.dropped;
    else scale = 1.0 / std::sqrt(gap);
    for (std::size_t e = 0; e < m; ++e) r.z(e, j) = basis[j][e] * scale;
  }
  r.rank_deficit = cols > k_basis ? cols - k_basis : 0;
  return r;
}

inline EmbeddingResult centrality_embeddings(const IncidenceOperators& ops, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ContractError("centrality_embeddings: k must be positive");
  const std::size_t m = ops.num_edges();
  if (m == 0) throw ContractError("centrality_embeddings: graph has no interactions");
  const std::size_t cols = k == kFullRank ? std::min(m, ops.num_nodes()) : k;
  const std::size_t k_svd = std::min({cols, m, ops.num_nodes()});
  const OrientedIncidence op(ops);
  const SvdFactors f = detail::factor(op, k_svd, seed);
  const double smax = f.values.empty() ? 0.0 : f.values.front();

  EmbeddingResult r;
  r.z = Tensor::zeros(m, cols);
  r.singular.assign(cols, 0.0);
  for (std::size_t j = 0; j < k_svd; ++j) {
    if (smax == 0.0 || f.values[j] <= kCentralityRankTol * smax) {
      ++r.dropped;
      continue;
    }
    r.singular[j] = f.values[j];
    for (std::size_t e = 0; e < m; ++e) r.z(e, j) = f.right(e, j);
  }
  r.rank_deficit = (cols - k_svd) + r.dropped;
  return r;
}

inline StructEmbeddings compute_struct_embeddings(const IncidenceOperators& ops, std::size_t k, std::uint64_t seed) {
  StructEmbeddings s;
  auto d = distance_embeddings(ops, k, seed);
  auto c = centrality_embeddings(ops, k, seed);
  s.distance = std::move(d.z);
  s.centrality = std::move(c.z);
  s.k = k;
  s.seed = seed;
  s.dropped_unit = d.dropped;
  return s;
}

// ---------------------------------------------------------------------------
// Binary sidecar: "SAFTEMB1", u64 rows, u64 cols, u32 tag, u64 seed, then
// rows*cols little-endian float64 values in row-major order.

enum class EmbeddingKind : std::uint32_t { Distance = 0, Centrality = 1 };

struct EmbeddingFile {
  Tensor z;
  EmbeddingKind kind = EmbeddingKind::Distance;
  std::uint64_t seed = 0;
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    static_assert(sizeof(T) == 8);
    std::memcpy(&bits, &v, 8);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw IngestError("truncated binary file");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  if constexpr (std::is_floating_point_v<T>) {
    T v;
    std::memcpy(&v, &bits, 8);
    return v;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace detail

inline constexpr char kEmbeddingMagic[8] = {'S', 'A', 'F', 'T', 'E', 'M', 'B', '1'};

inline void write_embedding(const std::string& path, const Tensor& z, EmbeddingKind kind, std::uint64_t seed) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IngestError("cannot open " + path + " for writing");
  os.write(kEmbeddingMagic, 8);
  detail::put_le<std::uint64_t>(os, z.rows());
  detail::put_le<std::uint64_t>(os, z.cols());
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(kind));
  detail::put_le<std::uint64_t>(os, seed);
  for (double v : z.data()) detail::put_le<double>(os, v);
  if (!os) throw IngestError("write failed: " + path);
}

inline EmbeddingFile read_embedding(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestError("cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0)
    throw IngestError(path + ": not an embedding file");
  EmbeddingFile f;
  const auto rows = detail::get_le<std::uint64_t>(is);
  const auto cols = detail::get_le<std::uint64_t>(is);
  const auto tag = detail::get_le<std::uint32_t>(is);
  if (tag > 1) throw IngestError(path + ": unknown embedding tag");
  f.kind = static_cast<EmbeddingKind>(tag);
  f.seed = detail::get_le<std::uint64_t>(is);
  f.z = Tensor::zeros(rows, cols);
  for (double& v : f.z.data()) v = detail::get_le<double>(is);
  return f;
}

// ---------------------------------------------------------------------------
// Embedding identities checked against the dense oracles

struct CheckRow {
  std::string name;
  double deviation = 0.0;
  double threshold = 0.0;
  bool pass = false;
  bool informational = false;  // reported, never fails the report
};

struct VerificationReport {
  std::vector<CheckRow> rows;
  bool passed() const {
    return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.pass || r.informational; });
  }
  void add(std::string name, double dev, double thr, bool informational = false) {
    rows.push_back({std::move(name), dev, thr, dev <= thr, informational});
  }
  void append(const VerificationReport& o) { rows.insert(rows.end(), o.rows.begin(), o.rows.end()); }
};

/// Checks full-rank embeddings against the oracles. Supplied embeddings are
/// used as-is; otherwise they are computed at full rank with the given seed.
inline VerificationReport verify_embeddings(const IncidenceOperators& ops, double tolerance,
                                          std::optional<Tensor> zd_in = std::nullopt,
                                          std::optional<Tensor> zc_in = std::nullopt,
                                          std::uint64_t seed = 0) {
  if (ops.num_edges() > oracle::kMaxEdges) throw oracle::ScaleError("verify: more than 64 interactions");
  const oracle::DenseOracle orc(ops);
  const std::size_t m = ops.num_edges();

  std::size_t dropped = 0;
  Tensor zd;
  if (zd_in) {
    zd = std::move(*zd_in);
  } else {
    auto r = distance_embeddings(ops, kFullRank, seed);
    zd = std::move(r.z);
    dropped = r.dropped;
  }
  Tensor zc = zc_in ? std::move(*zc_in) : centrality_embeddings(ops, kFullRank, seed).z;
  if (zd.rows() != m || zc.rows() != m) throw DimensionError("verify: embedding rows do not match |E|");

  VerificationReport rep;
  const Tensor gram = matmul_nt(zd, zd);
  double rd_dev = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double emb = gram(i, i) + gram(j, j) - 2.0 * gram(i, j);
      rd_dev = std::max(rd_dev, std::abs(emb - orc.resistance_distance(i, j)));
    }
  rep.add("resistance_distance", rd_dev, tolerance);
  rep.add("gram_equals_line_laplacian_pinv", max_abs_diff(gram, orc.line_laplacian_pinv()), tolerance);

  std::vector<double> norms(m, 0.0);
  for (std::size_t e = 0; e < m; ++e)
    for (double v : zc.row(e)) norms[e] += v * v;
  double c_dev = 0.0, total = 0.0;
  for (std::size_t e = 0; e < m; ++e) {
    c_dev = std::max(c_dev, std::abs(norms[e] - orc.spanning_centrality(e)));
    total += norms[e];
  }
  rep.add("centrality_vs_pinv", c_dev, tolerance);
  if (m <= oracle::kMaxEnumerationEdges) {
    const auto enumerated = orc.spanning_centrality_by_enumeration();
    double agree = 0.0, e_dev = 0.0;
    for (std::size_t e = 0; e < m; ++e) {
      agree = std::max(agree, std::abs(enumerated[e] - orc.spanning_centrality(e)));
      e_dev = std::max(e_dev, std::abs(norms[e] - enumerated[e]));
    }
    rep.add("centrality_oracles_agree", agree, 1e-12);
    rep.add("centrality_vs_enumeration", e_dev, tolerance);
  }
  std::size_t comps = 0;
  node_components(ops, &comps);
  rep.add("centrality_sum_rule", std::abs(total - static_cast<double>(ops.num_nodes() - comps)), tolerance);
  if (!zd_in)
    rep.add("dropped_unit_components",
            std::abs(static_cast<double>(dropped) - static_cast<double>(orc.line_graph_components())), 0.0);
  return rep;
}

}  // namespace saft
