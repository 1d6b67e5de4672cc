#pragma once

// Training and evaluation: loss, AdamW, stratified splits, F1 metrics,
// full-batch and sampled mini-batch training, checkpoints and history files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "saft/config.hpp"
#include "saft/encoder.hpp"
#include "saft/graph.hpp"
#include "saft/sampling.hpp"
#include "saft/struct_embed.hpp"

namespace saft {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kProbClamp = 1e-12;

inline Tensor one_hot(const std::vector<int>& labels, std::size_t K) {
  Tensor y = Tensor::zeros(labels.size(), K);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= K) throw ContractError("label out of range");
    y(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  return y;
}

inline void check_one_hot(const Tensor& y) {
  for (std::size_t r = 0; r < y.rows(); ++r) {
    int ones = 0;
    for (double v : y.row(r)) {
      if (v == 1.0) ++ones;
      else if (v != 0.0) throw ContractError("targets must be one-hot");
    }
    if (ones != 1) throw ContractError("targets must be one-hot");
  }
}

/// -sum_e sum_k [y log p + (1 - y) log(1 - p)], p clamped to [1e-12, 1 - 1e-12].
inline Var binary_cross_entropy_sum(const Var& probs, const Tensor& y) {
  check_one_hot(y);
  const Tensor& p = probs.value();
  p.check_same(y, "loss");
  double loss = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double q = std::clamp(p[k], kProbClamp, 1.0 - kProbClamp);
    loss -= y[k] * std::log(q) + (1.0 - y[k]) * std::log(1.0 - q);
  }
  return probs.tape().record(Tensor::scalar(loss), {probs}, [probs, y](Tape& t, const Tensor& g) {
    const Tensor& p = probs.value();
    Tensor gp(p.shape());
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p[k] < kProbClamp || p[k] > 1.0 - kProbClamp) continue;
      gp[k] = g[0] * (-y[k] / p[k] + (1.0 - y[k]) / (1.0 - p[k]));
    }
    t.accumulate(probs, gp);
  });
}

inline double binary_cross_entropy_sum(const Tensor& p, const Tensor& y) {
  Tape t;
  return binary_cross_entropy_sum(t.constant(p), y).value().item();
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay applied before the adaptive step

class AdamW {
 public:
  AdamW(double lr, double weight_decay, double eps, double beta1 = 0.9, double beta2 = 0.999)
      : lr_(lr), wd_(weight_decay), eps_(eps), b1_(beta1), b2_(beta2) {}

  void step(ParamStore& store) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (Parameter& p : store.all()) {
      if (!p.trainable) continue;
      auto& [m, v] = moments_[&p];
      if (m.size() == 0) {
        m = Tensor(p.value.shape());
        v = Tensor(p.value.shape());
      }
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        p.value[k] *= 1.0 - lr_ * wd_;
        m[k] = b1_ * m[k] + (1.0 - b1_) * g;
        v[k] = b2_ * v[k] + (1.0 - b2_) * g * g;
        p.value[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  double lr_, wd_, eps_, b1_, b2_;
  std::size_t t_ = 0;
  std::unordered_map<const Parameter*, std::pair<Tensor, Tensor>> moments_;
};

// ---------------------------------------------------------------------------
// Splits and metrics

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Per label: shuffle, then 60% train, 20% validation, rest test.
inline Split stratified_split(const std::vector<int>& labels, std::uint64_t seed, double train_frac = 0.6,
                              double val_frac = 0.2) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t e = 0; e < labels.size(); ++e) by_label[labels[e]].push_back(e);
  std::mt19937_64 rng(stream_seed(seed, 0x5b117));
  Split s;
  for (auto& [label, edges] : by_label) {
    std::shuffle(edges.begin(), edges.end(), rng);
    const auto n = edges.size();
    auto ntr = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    auto nva = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
    ntr = std::max<std::size_t>(std::min(ntr, n), 1);
    nva = std::min(nva, n - ntr);
    s.train.insert(s.train.end(), edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(ntr));
    s.val.insert(s.val.end(), edges.begin() + static_cast<std::ptrdiff_t>(ntr),
                 edges.begin() + static_cast<std::ptrdiff_t>(ntr + nva));
    s.test.insert(s.test.end(), edges.begin() + static_cast<std::ptrdiff_t>(ntr + nva), edges.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

struct Metrics {
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][pred]
};

inline Metrics f1_scores(const std::vector<int>& truth, const std::vector<int>& pred, std::size_t K) {
  if (truth.size() != pred.size()) throw DimensionError("truth and prediction lengths differ");
  if (truth.empty()) throw ContractError("empty evaluation set");
  Metrics m;
  m.confusion.assign(K, std::vector<std::size_t>(K, 0));
  std::size_t correct = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (truth[k] < 0 || pred[k] < 0 || static_cast<std::size_t>(truth[k]) >= K ||
        static_cast<std::size_t>(pred[k]) >= K)
      throw ContractError("class index out of range");
    ++m.confusion[static_cast<std::size_t>(truth[k])][static_cast<std::size_t>(pred[k])];
    if (truth[k] == pred[k]) ++correct;
  }
  // Single-label data: pooled TP = correct, pooled FP = pooled FN = errors.
  m.micro_f1 = static_cast<double>(correct) / static_cast<double>(truth.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < K; ++c) {
    std::size_t tp = m.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < K; ++o) {
      if (o == c) continue;
      fp += m.confusion[o][c];
      fn += m.confusion[c][o];
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    sum += denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
  m.macro_f1 = sum / static_cast<double>(K);
  return m;
}

inline std::vector<int> argmax_rows(const Tensor& p) {
  std::vector<int> out(p.rows());
  for (std::size_t r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Data preparation

/// A graph with everything the model consumes per interaction.
struct PreparedData {
  const TinGraph* graph = nullptr;
  IncidenceOperators ops;
  std::vector<std::size_t> tokens;  // |E| * N
  Tensor dist, cent;                // |E| x struct_dim
  std::vector<int> labels;
};

inline PreparedData prepare(const TinGraph& g, const EncoderConfig& enc, const StructEmbeddings& emb) {
  PreparedData d;
  d.graph = &g;
  d.ops = build_incidence(g);
  d.labels = g.labels();
  d.tokens.reserve(g.num_edges() * enc.N);
  for (const auto& e : g.edges()) {
    const auto ids = tokenize(e.text, enc.N, enc.vocab_buckets);
    d.tokens.insert(d.tokens.end(), ids.begin(), ids.end());
  }
  if (enc.structural_tokens) {
    if (emb.distance.rows() != g.num_edges() || emb.centrality.rows() != g.num_edges() ||
        emb.distance.cols() != enc.struct_dim || emb.centrality.cols() != enc.struct_dim)
      throw ContractError("structural embeddings must be |E| x svd_dim");
    d.dist = emb.distance;
    d.cent = emb.centrality;
  } else {
    d.dist = Tensor::zeros(g.num_edges(), enc.struct_dim);
    d.cent = Tensor::zeros(g.num_edges(), enc.struct_dim);
  }
  return d;
}

/// Inputs for the interactions `edges`; message passing runs on `ops`,
/// whose edge j must correspond to edges[j].
inline BatchInput make_batch(const PreparedData& d, const std::vector<std::size_t>& edges,
                             const IncidenceOperators* ops, std::size_t N) {
  BatchInput in;
  in.ops = ops;
  const std::size_t k = d.dist.cols();
  in.dist = Tensor::zeros(edges.size(), k);
  in.cent = Tensor::zeros(edges.size(), k);
  for (std::size_t j = 0; j < edges.size(); ++j) {
    const std::size_t e = edges[j];
    in.users.push_back(d.ops.edge_user(e));
    in.items.push_back(d.ops.edge_item(e));
    in.tokens.insert(in.tokens.end(), d.tokens.begin() + static_cast<std::ptrdiff_t>(e * N),
                     d.tokens.begin() + static_cast<std::ptrdiff_t>((e + 1) * N));
    std::copy(d.dist.row(e).begin(), d.dist.row(e).end(), in.dist.row(j).begin());
    std::copy(d.cent.row(e).begin(), d.cent.row(e).end(), in.cent.row(j).begin());
  }
  return in;
}

inline BatchInput make_full_batch(const PreparedData& d, std::size_t N) {
  std::vector<std::size_t> all(d.ops.num_edges());
  for (std::size_t e = 0; e < all.size(); ++e) all[e] = e;
  return make_batch(d, all, &d.ops, N);
}

inline std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(labels[r]);
  return out;
}

inline constexpr std::uint64_t kEvalSalt = 0xe7a1ULL << 40;

/// Class probabilities for `edges`. Full batch: one pass over the whole graph.
/// Mini-batch: chunks of `edges` with sampled neighborhoods (fixed salt).
inline Tensor predict_probs(SaftModel& model, const PreparedData& d, const TrainConfig& cfg,
                            const std::vector<std::size_t>& edges) {
  const std::size_t N = model.config().N, K = model.config().K;
  Tensor out = Tensor::zeros(edges.size(), K);
  if (cfg.full_batch()) {
    Tape tape;
    const BatchInput in = make_full_batch(d, N);
    const Tensor p = model.forward(tape, in).probs.value();
    for (std::size_t j = 0; j < edges.size(); ++j)
      std::copy(p.row(edges[j]).begin(), p.row(edges[j]).end(), out.row(j).begin());
    return out;
  }
  for (std::size_t start = 0, chunk = 0; start < edges.size(); start += cfg.batch_size, ++chunk) {
    const std::vector<std::size_t> targets(edges.begin() + static_cast<std::ptrdiff_t>(start),
                                           edges.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(edges.size(), start + cfg.batch_size)));
    const auto nb = sample_batch(d.ops, targets, d.dist, d.cent, cfg.sampler, kEvalSalt + chunk);
    const IncidenceOperators sub = d.ops.induced(nb.edges);
    Tape tape;
    const Tensor p = model.forward(tape, make_batch(d, nb.edges, &sub, N)).probs.value();
    for (std::size_t j = 0; j < targets.size(); ++j)
      std::copy(p.row(j).begin(), p.row(j).end(), out.row(start + j).begin());
  }
  return out;
}

inline Metrics evaluate(SaftModel& model, const PreparedData& d, const TrainConfig& cfg,
                        const std::vector<std::size_t>& edges) {
  if (edges.empty()) throw ContractError("empty evaluation split");
  const Tensor p = predict_probs(model, d, cfg, edges);
  return f1_scores(gather_labels(d.labels, edges), argmax_rows(p), model.config().K);
}

// ---------------------------------------------------------------------------
// Training

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_macro = 0.0;
  double val_micro = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  std::size_t best_epoch = 0;  // 1-based; index into history is best_epoch - 1
  bool stopped_early = false;
};

inline std::vector<Tensor> snapshot(const ParamStore& s) {
  std::vector<Tensor> v;
  for (const auto& p : s.all()) v.push_back(p.value);
  return v;
}

inline void restore(ParamStore& s, const std::vector<Tensor>& v) {
  std::size_t k = 0;
  for (auto& p : s.all()) p.value = v[k++];
}

namespace detail {

inline bool better(const HistoryRow& a, const HistoryRow& b) {
  if (a.val_micro != b.val_micro) return a.val_micro > b.val_micro;
  return a.val_macro > b.val_macro;
}

inline void check_finite(double loss, std::size_t epoch) {
  if (!std::isfinite(loss))
    throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch));
}

}  // namespace detail

/// Trains `model` in place and leaves it at the best validation epoch (the
/// last epoch when there is no validation split).
/// Full batch: the metrics of epoch t describe the parameters that produced
/// that epoch's loss, so the retained parameters reproduce the history line.
inline TrainResult train(SaftModel& model, const PreparedData& d, const TrainConfig& cfg, const Split& split) {
  cfg.validate();
  if (split.train.empty()) throw ContractError("empty training split");
  const std::size_t N = model.config().N, K = model.config().K;
  AdamW opt(cfg.lr, cfg.weight_decay, cfg.eps, cfg.beta1, cfg.beta2);
  TrainResult res;
  std::vector<Tensor> best;
  HistoryRow best_row;
  bool have_best = false;
  std::size_t since_best = 0;

  auto record = [&](HistoryRow row) {
    res.history.push_back(row);
    if (!have_best || split.val.empty() || detail::better(row, best_row)) {
      best_row = row;
      have_best = true;
      best = snapshot(model.params());
      res.best_epoch = row.epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
  };

  const Tensor y_train = one_hot(gather_labels(d.labels, split.train), K);
  const std::vector<int> y_val = gather_labels(d.labels, split.val);
  const BatchInput full = cfg.full_batch() ? make_full_batch(d, N) : BatchInput{};

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    HistoryRow row;
    row.epoch = epoch;
    if (cfg.full_batch()) {
      model.params().zero_grad();
      Tape tape;
      const ForwardOutput out = model.forward(tape, full);
      const Var loss = binary_cross_entropy_sum(gather_rows(out.probs, split.train), y_train);
      row.train_loss = loss.value().item();
      detail::check_finite(row.train_loss, epoch);
      if (!split.val.empty()) {
        const Metrics m = f1_scores(y_val, argmax_rows(gather_rows(out.probs, split.val).value()), K);
        row.val_macro = m.macro_f1;
        row.val_micro = m.micro_f1;
      }
      record(row);
      if (since_best >= cfg.patience && cfg.patience > 0) {
        res.stopped_early = true;
        break;
      }
      tape.backward(loss);
      opt.step(model.params());
    } else {
      std::vector<std::size_t> order = split.train;
      std::mt19937_64 rng(stream_seed(cfg.seed, 0x0e90c4, epoch));
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0, chunk = 0; start < order.size(); start += cfg.batch_size, ++chunk) {
        const std::vector<std::size_t> targets(
            order.begin() + static_cast<std::ptrdiff_t>(start),
            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
        const auto nb = sample_batch(d.ops, targets, d.dist, d.cent, cfg.sampler, (epoch << 20) + chunk);
        const IncidenceOperators sub = d.ops.induced(nb.edges);
        model.params().zero_grad();
        Tape tape;
        const ForwardOutput out = model.forward(tape, make_batch(d, nb.edges, &sub, N));
        std::vector<std::size_t> rows(targets.size());
        for (std::size_t j = 0; j < rows.size(); ++j) rows[j] = j;
        const Var loss =
            binary_cross_entropy_sum(gather_rows(out.probs, rows), one_hot(gather_labels(d.labels, targets), K));
        detail::check_finite(loss.value().item(), epoch);
        row.train_loss += loss.value().item();
        tape.backward(loss);
        opt.step(model.params());
      }
      if (!split.val.empty()) {
        const Metrics m = evaluate(model, d, cfg, split.val);
        row.val_macro = m.macro_f1;
        row.val_micro = m.micro_f1;
      }
      record(row);
      if (since_best >= cfg.patience && cfg.patience > 0) {
        res.stopped_early = true;
        break;
      }
    }
  }
  restore(model.params(), best);
  return res;
}

// ---------------------------------------------------------------------------
// History and checkpoint files

inline std::string format_history_row(const HistoryRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g", r.epoch, r.train_loss, r.val_macro, r.val_micro);
  return buf;
}

inline void write_history(const std::string& path, const std::vector<HistoryRow>& h) {
  std::ofstream f(path);
  if (!f) throw IngestError("cannot write " + path);
  f << "# epoch\ttrain_loss\tval_macro_f1\tval_micro_f1\n";
  for (const auto& r : h) f << format_history_row(r) << '\n';
}

inline std::vector<HistoryRow> read_history(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IngestError("cannot open " + path);
  std::vector<HistoryRow> h;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    HistoryRow r;
    if (!(is >> r.epoch >> r.train_loss >> r.val_macro >> r.val_micro)) throw IngestError("bad history line: " + line);
    h.push_back(r);
  }
  return h;
}

inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'F', 'T', 'C', 'K', 'P', '1'};

struct Checkpoint {
  TrainConfig cfg;
  std::size_t num_users = 0, num_items = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

namespace detail {

inline std::uint64_t fnv1a64_bytes(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get_le<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw IngestError("corrupt checkpoint string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw IngestError("truncated checkpoint");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const SaftModel& model, const TrainConfig& cfg) {
  std::ostringstream body;
  body.write(kCheckpointMagic, 8);
  TrainConfig c = cfg;
  c.enc = model.config();
  std::string header = to_config_text(c);
  header += "classes = " + std::to_string(model.config().K) + "\n";
  header += "users = " + std::to_string(model.num_users()) + "\n";
  header += "items = " + std::to_string(model.num_items()) + "\n";
  detail::put_string(body, header);
  detail::put_le<std::uint64_t>(body, model.params().all().size());
  for (const auto& p : model.params().all()) {
    detail::put_string(body, p.name);
    detail::put_le<std::uint64_t>(body, p.value.rows());
    detail::put_le<std::uint64_t>(body, p.value.cols());
    for (double v : p.value.data()) detail::put_le<double>(body, v);
  }
  const std::string bytes = body.str();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IngestError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  detail::put_le<std::uint64_t>(f, detail::fnv1a64_bytes(bytes));
  if (!f) throw IngestError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IngestError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw IngestError(path + ": not a checkpoint");
  const std::string body = bytes.substr(0, bytes.size() - 8);
  std::istringstream tail(bytes.substr(bytes.size() - 8));
  if (detail::get_le<std::uint64_t>(tail) != detail::fnv1a64_bytes(body))
    throw IngestError(path + ": checksum mismatch");

  std::istringstream is(body);
  is.ignore(8);
  Checkpoint ck;
  std::string header = detail::get_string(is);
  std::string rest;
  {
    std::istringstream hs(header);
    std::string line;
    while (std::getline(hs, line)) {
      const auto eq = line.find('=');
      const std::string key = eq == std::string::npos ? "" : detail::trim(line.substr(0, eq));
      const std::string value = eq == std::string::npos ? "" : detail::trim(line.substr(eq + 1));
      if (key == "classes") ck.cfg.enc.K = detail::parse_number<std::size_t>(key, value);
      else if (key == "users") ck.num_users = detail::parse_number<std::size_t>(key, value);
      else if (key == "items") ck.num_items = detail::parse_number<std::size_t>(key, value);
      else rest += line + "\n";
    }
  }
  const std::size_t K = ck.cfg.enc.K;
  ck.cfg = parse_config(rest);
  ck.cfg.enc.K = K;
  const auto n = detail::get_le<std::uint64_t>(is);
  for (std::uint64_t k = 0; k < n; ++k) {
    std::string name = detail::get_string(is);
    const auto r = detail::get_le<std::uint64_t>(is);
    const auto c = detail::get_le<std::uint64_t>(is);
    Tensor t = Tensor::zeros(r, c);
    for (double& v : t.data()) v = detail::get_le<double>(is);
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

/// Rebuild the model described by a checkpoint and load its tensors.
inline std::unique_ptr<SaftModel> model_from_checkpoint(const Checkpoint& ck) {
  auto m = std::make_unique<SaftModel>(ck.cfg.enc, ck.cfg.mp, ck.num_users, ck.num_items, ck.cfg.seed);
  if (m->params().all().size() != ck.tensors.size()) throw IngestError("checkpoint does not match its config");
  for (const auto& [name, t] : ck.tensors) {
    Parameter& p = m->params().at(name);
    if (!p.value.same_shape(t)) throw IngestError("checkpoint tensor has wrong shape: " + name);
    p.value = t;
  }
  return m;
}

}  // namespace saft
