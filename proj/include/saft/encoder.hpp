#pragma once

// Interaction encoder.
//
// Each interaction is a block of token rows. Layer 1 runs attention and the
// feed-forward map over (proxy | text). Every later layer appends the user,
// item, distance and centrality tokens, applies
//   Htilde = LayerNorm(FFN(MHA(H)) + H),
// passes the tilded user/item rows through message passing, and fuses the
// results into the proxy: proxy = ReLU(Lin(proxy | user | item)).
// The representation averages the row means of the last two layers.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "saft/graph.hpp"
#include "saft/message_passing.hpp"
#include "saft/nn.hpp"

namespace saft {

struct EncoderConfig {
  std::size_t L = 2;
  std::size_t H = 2;
  std::size_t d = 32;
  std::size_t N = 16;
  std::size_t vocab_buckets = 4096;
  std::size_t K = 2;
  std::size_t struct_dim = 64;
  // Ablation switches; all on for the full model.
  bool node_tokens = true;
  bool structural_tokens = true;
  bool message_passing = true;

  void validate() const {
    if (L < 2) throw ContractError("encoder needs at least two layers");
    if (H == 0 || d == 0 || d % H != 0) throw ContractError("hidden size must be a positive multiple of heads");
    if (N == 0) throw ContractError("sequence length must be positive");
    if (vocab_buckets == 0) throw ContractError("vocab_buckets must be positive");
    if (K < 2) throw ContractError("need at least two classes");
    if (structural_tokens && struct_dim == 0) throw ContractError("struct_dim must be positive");
    if (message_passing && !node_tokens) throw ContractError("message passing needs user and item tokens");
  }

  std::size_t block() const { return N + 1 + (node_tokens ? 2 : 0) + (structural_tokens ? 2 : 0); }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

/// Lowercase, split on non-alphanumerics, hash into [0, buckets), pad with 0
/// or truncate to n ids.
inline std::vector<std::size_t> tokenize(const std::string& text, std::size_t n, std::size_t buckets) {
  std::vector<std::size_t> ids;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && ids.size() < n) ids.push_back(fnv1a64(cur) % buckets);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) cur.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  ids.resize(n, 0);
  return ids;
}

struct Attention {
  std::vector<Parameter*> q, k, v;  // one d x d/H map per head
};

struct FeedForward {
  Linear up, down;
};

struct EncoderLayer {
  Attention attn;
  FeedForward ffn;
  LayerNorm norm;     // layers >= 2
  Linear user_tok, item_tok, dist_tok, cent_tok;
  Linear fuse;        // 3d -> d
  MpLayerParams mp;
};

/// Inputs for one forward pass over a set of interactions. Message passing
/// uses ops, whose edge j is row j of every per-interaction input.
struct BatchInput {
  const IncidenceOperators* ops = nullptr;
  std::vector<std::size_t> tokens;  // B*N ids
  std::vector<std::size_t> users;   // feature rows
  std::vector<std::size_t> items;
  Tensor dist;                      // B x struct_dim
  Tensor cent;
  std::size_t size() const { return users.size(); }
};

struct ForwardTrace {
  std::vector<std::vector<Tensor>> attention;  // [layer][head], (B*block) x block
  std::vector<Tensor> layer_outputs;           // T^l, B*(N+1) x d
};

struct ForwardOutput {
  Var representation;  // B x d
  Var logits;          // B x K
  Var probs;           // B x K
};

// Row-block helpers -----------------------------------------------------------

/// Interleave per-interaction blocks: part p contributes rows_p consecutive
/// rows to every interaction block.
inline Var interleave(const std::vector<std::pair<Var, std::size_t>>& parts, std::size_t batch) {
  std::vector<Var> vars;
  std::vector<std::size_t> offset;
  std::size_t off = 0, block = 0;
  for (const auto& [v, r] : parts) {
    if (v.rows() != r * batch) throw DimensionError("interleave: part rows do not match batch");
    vars.push_back(v);
    offset.push_back(off);
    off += v.rows();
    block += r;
  }
  std::vector<std::size_t> index;
  index.reserve(batch * block);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < parts.size(); ++p)
      for (std::size_t r = 0; r < parts[p].second; ++r) index.push_back(offset[p] + b * parts[p].second + r);
  return gather_rows(concat_rows(vars), std::move(index));
}

/// Rows [start, start+count) of every block.
inline Var block_slice(const Var& x, std::size_t block, std::size_t start, std::size_t count) {
  const std::size_t batch = x.rows() / block;
  std::vector<std::size_t> index;
  index.reserve(batch * count);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < count; ++r) index.push_back(b * block + start + r);
  return gather_rows(x, std::move(index));
}

inline Var multi_head_attention(Binding& bind, const Attention& a, const Var& x, std::size_t block,
                                std::size_t d, std::vector<Tensor>* trace = nullptr) {
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < a.q.size(); ++h) {
    Var q = matmul(x, bind(*a.q[h]));
    Var k = matmul(x, bind(*a.k[h]));
    Var v = matmul(x, bind(*a.v[h]));
    Var s = softmax_rows(scale(block_matmul_nt(q, k, block), scale_factor));
    if (trace) trace->push_back(s.value());
    heads.push_back(block_matmul(s, v, block));
  }
  return heads.size() == 1 ? heads.front() : concat_cols(heads);
}

inline Var feed_forward(Binding& bind, const FeedForward& f, const Var& x) {
  return f.down(bind, relu(f.up(bind, x)));
}

/// 0.5 * (row mean of last + row mean of penultimate), per block.
inline Var final_representation(const Var& last, const Var& penultimate, std::size_t block) {
  return 0.5 * (block_mean_rows(last, block) + block_mean_rows(penultimate, block));
}

inline Var predict(Binding& bind, const Linear& head, const Var& rep) { return softmax_rows(head(bind, rep)); }

class SaftModel {
 public:
  SaftModel(EncoderConfig cfg, MpConfig mp, std::size_t num_users, std::size_t num_items, std::uint64_t seed)
      : cfg_(cfg), mp_(mp) {
    cfg_.validate();
    mp_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t d = cfg_.d, dh = d / cfg_.H;
    embed_ = &store_.add("embed", normal_init(cfg_.vocab_buckets, d, rng));
    user_feat_ = &store_.add("features.user", normal_init(num_users, d, rng), false);
    item_feat_ = &store_.add("features.item", normal_init(num_items, d, rng), false);
    for (std::size_t l = 1; l <= cfg_.L; ++l) {
      const std::string p = "layer" + std::to_string(l);
      EncoderLayer layer;
      for (std::size_t h = 0; h < cfg_.H; ++h) {
        const std::string hp = p + ".attn.h" + std::to_string(h);
        layer.attn.q.push_back(&store_.add(hp + ".q", uniform_init(d, dh, rng)));
        layer.attn.k.push_back(&store_.add(hp + ".k", uniform_init(d, dh, rng)));
        layer.attn.v.push_back(&store_.add(hp + ".v", uniform_init(d, dh, rng)));
      }
      layer.ffn.up = Linear::make(store_, p + ".ffn.up", d, 2 * d, rng);
      layer.ffn.down = Linear::make(store_, p + ".ffn.down", 2 * d, d, rng);
      if (l >= 2) {
        layer.norm = LayerNorm::make(store_, p + ".norm", d);
        if (cfg_.node_tokens) {
          layer.user_tok = Linear::make(store_, p + ".tok.user", d, d, rng);
          layer.item_tok = Linear::make(store_, p + ".tok.item", d, d, rng);
        }
        if (cfg_.structural_tokens) {
          layer.dist_tok = Linear::make(store_, p + ".tok.dist", cfg_.struct_dim, d, rng);
          layer.cent_tok = Linear::make(store_, p + ".tok.cent", cfg_.struct_dim, d, rng);
        }
        layer.fuse = Linear::make(store_, p + ".fuse", 3 * d, d, rng);
        if (cfg_.message_passing) layer.mp = make_mp_layer(store_, p + ".mp", d, mp_.variant, rng);
      }
      layers_.push_back(layer);
    }
    head_ = Linear::make(store_, "head", d, cfg_.K, rng);
  }

  SaftModel(const SaftModel&) = delete;
  SaftModel& operator=(const SaftModel&) = delete;

  const EncoderConfig& config() const { return cfg_; }
  const MpConfig& mp_config() const { return mp_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::size_t num_users() const { return user_feat_->value.rows(); }
  std::size_t num_items() const { return item_feat_->value.rows(); }
  const std::vector<EncoderLayer>& layers() const { return layers_; }
  const Linear& head() const { return head_; }

  ForwardOutput forward(Tape& tape, const BatchInput& in, ForwardTrace* trace = nullptr) {
    const std::size_t B = in.size(), N = cfg_.N, d = cfg_.d;
    if (B == 0) throw ContractError("forward on an empty batch");
    if (in.tokens.size() != B * N || in.items.size() != B) throw DimensionError("batch input sizes disagree");
    if (cfg_.message_passing && (!in.ops || in.ops->num_edges() != B))
      throw DimensionError("batch operators must cover every interaction in the batch");
    if (cfg_.structural_tokens &&
        (in.dist.rows() != B || in.cent.rows() != B || in.dist.cols() != cfg_.struct_dim ||
         in.cent.cols() != cfg_.struct_dim))
      throw DimensionError("structural embedding rows must be B x struct_dim");
    for (std::size_t t : in.tokens)
      if (t >= cfg_.vocab_buckets) throw DimensionError("token id out of range");

    Binding bind(tape);
    if (trace) *trace = ForwardTrace{};
    auto att_trace = [&]() -> std::vector<Tensor>* {
      if (!trace) return nullptr;
      trace->attention.emplace_back();
      return &trace->attention.back();
    };

    const Var text0 = gather_rows(bind(*embed_), in.tokens);
    const Var proxy0 = block_mean_rows(text0, N);
    const std::size_t tb = N + 1;
    Var t = interleave({{proxy0, 1}, {text0, N}}, B);
    t = feed_forward(bind, layers_[0].ffn, multi_head_attention(bind, layers_[0].attn, t, tb, d, att_trace()));
    if (trace) trace->layer_outputs.push_back(t.value());
    Var prev = t;

    Var xu_raw, xi_raw, dist, cent;
    if (cfg_.node_tokens) {
      xu_raw = gather_rows(bind(*user_feat_), in.users);
      xi_raw = gather_rows(bind(*item_feat_), in.items);
    }
    if (cfg_.structural_tokens) {
      dist = tape.constant(in.dist);
      cent = tape.constant(in.cent);
    }
    const std::size_t block = cfg_.block();
    for (std::size_t l = 1; l < cfg_.L; ++l) {
      const EncoderLayer& layer = layers_[l];
      std::vector<std::pair<Var, std::size_t>> parts{{t, tb}};
      Var xu, xi;
      if (cfg_.node_tokens) {
        xu = layer.user_tok(bind, xu_raw);
        xi = layer.item_tok(bind, xi_raw);
        parts.push_back({xu, 1});
        parts.push_back({xi, 1});
      }
      if (cfg_.structural_tokens) {
        parts.push_back({layer.dist_tok(bind, dist), 1});
        parts.push_back({layer.cent_tok(bind, cent), 1});
      }
      const Var h = interleave(parts, B);
      const Var ht =
          layer.norm(bind, feed_forward(bind, layer.ffn, multi_head_attention(bind, layer.attn, h, block, d, att_trace())) + h);
      const Var tp = block_slice(ht, block, 0, 1);
      const Var tt = block_slice(ht, block, 1, N);
      Var fused_in;
      if (cfg_.message_passing) {
        const Var xtu = block_slice(ht, block, tb, 1);
        const Var xti = block_slice(ht, block, tb + 1, 1);
        auto [xu_hat, xi_hat] = message_passing(bind, layer.mp, mp_, *in.ops, xtu, xti, xu, xi);
        fused_in = concat_cols({tp, xu_hat, xi_hat});
      } else {
        fused_in = concat_cols({tp, tape.constant(Tensor::zeros(B, 2 * d))});
      }
      const Var proxy = relu(layer.fuse(bind, fused_in));
      prev = t;
      t = interleave({{proxy, 1}, {tt, N}}, B);
      if (trace) trace->layer_outputs.push_back(t.value());
    }

    ForwardOutput out;
    out.representation = final_representation(t, prev, tb);
    out.logits = head_(bind, out.representation);
    out.probs = softmax_rows(out.logits);
    return out;
  }

 private:
  EncoderConfig cfg_;
  MpConfig mp_;
  ParamStore store_;
  Parameter* embed_ = nullptr;
  Parameter* user_feat_ = nullptr;
  Parameter* item_feat_ = nullptr;
  std::vector<EncoderLayer> layers_;
  Linear head_;
};

}  // namespace saft
