// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. argv[1] is the path of the command-line tool.

#include <unistd.h>

#include <algorithm>
#include <cstdarg>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "saft/saft.hpp"

using namespace saft;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

constexpr std::size_t kInstances = 50;

std::vector<IncidenceOperators> instances() {
  std::vector<IncidenceOperators> v;
  for (std::size_t s = 0; s < kInstances; ++s) v.push_back(synth::random_incidence(s, 10, 25));
  return v;
}

// 1 -----------------------------------------------------------------------------
Outcome resistance_suite() {
  const auto t0 = Clock::now();
  double dev = 0.0;
  for (std::size_t s = 0; s < kInstances; ++s) {
    const auto ops = synth::random_incidence(s, 10, 25);
    const oracle::DenseOracle orc(ops);
    const Tensor z = distance_embeddings(ops, kFullRank, s).z;
    const Tensor gram = matmul_nt(z, z);
    for (std::size_t i = 0; i < ops.num_edges(); ++i)
      for (std::size_t j = 0; j < ops.num_edges(); ++j)
        dev = std::max(dev, std::abs(gram(i, i) + gram(j, j) - 2 * gram(i, j) - orc.resistance_distance(i, j)));
  }
  const double t = seconds_since(t0);
  return {dev <= 1e-6 && t < 5.0, fmt("max |dist^2 - RD| = %.3e (tol 1e-6), %.2f s (limit 5 s)", dev, t)};
}

// 2 -----------------------------------------------------------------------------
Outcome gram_identity() {
  double dev = 0.0;
  std::size_t s = 0;
  for (const auto& ops : instances()) {
    const oracle::DenseOracle orc(ops);
    const Tensor z = distance_embeddings(ops, kFullRank, s++).z;
    dev = std::max(dev, max_abs_diff(matmul_nt(z, z), orc.line_laplacian_pinv()));
  }
  return {dev <= 1e-6, fmt("max |Zd Zd^T - (I-P)^+| = %.3e (tol 1e-6)", dev)};
}

// 3 -----------------------------------------------------------------------------
Outcome centrality_suite() {
  double vs_pinv = 0.0, vs_enum = 0.0, agree = 0.0, sum_rule = 0.0;
  std::size_t enumerated = 0, s = 0;
  for (const auto& ops : instances()) {
    const oracle::DenseOracle orc(ops);
    const Tensor z = centrality_embeddings(ops, kFullRank, s++).z;
    std::vector<double> n(ops.num_edges(), 0.0);
    double total = 0.0;
    for (std::size_t e = 0; e < ops.num_edges(); ++e) {
      for (double v : z.row(e)) n[e] += v * v;
      total += n[e];
      vs_pinv = std::max(vs_pinv, std::abs(n[e] - orc.spanning_centrality(e)));
    }
    std::size_t comps = 0;
    node_components(ops, &comps);
    sum_rule = std::max(sum_rule, std::abs(total - static_cast<double>(ops.num_nodes() - comps)));
    if (ops.num_edges() <= 8) {
      ++enumerated;
      const auto en = orc.spanning_centrality_by_enumeration();
      for (std::size_t e = 0; e < ops.num_edges(); ++e) {
        vs_enum = std::max(vs_enum, std::abs(n[e] - en[e]));
        agree = std::max(agree, std::abs(en[e] - orc.spanning_centrality(e)));
      }
    }
  }
  const bool pass = vs_pinv <= 1e-8 && vs_enum <= 1e-8 && agree <= 1e-12 && sum_rule <= 1e-8 && enumerated > 0;
  return {pass, fmt("vs pinv %.3e, vs enumeration %.3e on %zu instances, oracles agree %.3e, sum rule %.3e", vs_pinv,
                    vs_enum, enumerated, agree, sum_rule)};
}

// 4 -----------------------------------------------------------------------------
Outcome ssoftmax_identity() {
  double literal = 0.0, rescaled = 0.0;
  for (const auto& ops : instances()) {
    literal = std::max(literal, ssoftmax_identity_deviation(ops));
    rescaled = std::max(rescaled, rescaled_ssoftmax_deviation(ops));
  }
  return {literal <= 1e-12,
          fmt("max |ssoftmax(E_s E_s^T / sqrt(n_s)) - P_s| = %.3e (tol 1e-12); "
              "with rows scaled by d/(d+1): %.3e",
              literal, rescaled)};
}

// 5 -----------------------------------------------------------------------------
Outcome line_transition() {
  StochasticDeviation worst;
  for (const auto& ops : instances()) {
    const auto d = line_transition_deviation(ops);
    worst.rows = std::max(worst.rows, d.rows);
    worst.cols = std::max(worst.cols, d.cols);
    worst.laplacian = std::max(worst.laplacian, d.laplacian);
  }
  return {worst.rows <= 1e-12 && worst.cols <= 1e-12 && worst.laplacian <= 1e-12,
          fmt("row sums %.3e, column sums %.3e, |I - P - L_line| %.3e (tol 1e-12)", worst.rows, worst.cols,
              worst.laplacian)};
}

// 6 -----------------------------------------------------------------------------
IncidenceOperators scaling_graph(std::size_t edges, std::uint64_t seed) {
  const std::size_t per_user = 10, nu = edges / per_user, ni = edges / 20;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> item(0, ni - 1);
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t u = 0; u < nu; ++u) {
    std::vector<std::size_t> chosen;
    while (chosen.size() < per_user) {
      const std::size_t i = item(rng);
      if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) chosen.push_back(i);
    }
    for (std::size_t i : chosen) e.emplace_back(u, i);
  }
  return IncidenceOperators::from_edges(nu, ni, e);
}

double step_seconds(const IncidenceOperators& ops, MpVariant v, std::size_t d) {
  const std::size_t m = ops.num_edges();
  ParamStore store;
  std::mt19937_64 rng(1);
  const MpLayerParams p = make_mp_layer(store, "mp", d, v, rng);
  const Tensor x = detail::seeded_matrix(m, d, 2);
  std::vector<double> times;
  for (int rep = 0; rep < 7; ++rep) {
    Tape tape;
    Binding bind(tape);
    const Var c = tape.constant(x);
    MpState s = init_embeddings(c, c, c, c, 2.0);
    GauGates g;
    if (v == MpVariant::Gau) g = gau_gates(bind, p, s);
    const auto t0 = Clock::now();
    s = v == MpVariant::Lga ? lga_step(s, ops, 2.0) : gau_step(bind, s, g, p, ops, 2.0);
    times.push_back(seconds_since(t0));
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

Outcome reordered_message_passing() {
  double dev = 0.0;
  std::size_t s = 0;
  for (const auto& ops : instances())
    for (MpVariant v : {MpVariant::Lga, MpVariant::Gau})
      for (std::size_t R = 1; R <= 5; ++R) dev = std::max(dev, trajectory_deviation(ops, v, R, 4, s++));
  std::string timing;
  bool linear = true;
  for (MpVariant v : {MpVariant::Lga, MpVariant::Gau}) {
    std::vector<double> t;
    for (std::size_t e : {10000, 20000, 40000}) t.push_back(step_seconds(scaling_graph(e, 3), v, 32));
    const double r1 = t[1] / t[0], r2 = t[2] / t[1];
    linear = linear && r1 <= 3.0 && r2 <= 3.0;
    timing += fmt("; %s step %.2f/%.2f/%.2f ms, ratios %.2f %.2f", to_string(v), 1e3 * t[0], 1e3 * t[1], 1e3 * t[2],
                  r1, r2);
  }
  return {dev <= 1e-10 && linear, fmt("max trajectory deviation %.3e (tol 1e-10)", dev) + timing + " (limit 3x)"};
}

// 7 -----------------------------------------------------------------------------
Outcome gradient_integrity() {
  TinGraph g(2, 1, 3);
  g.add(0, 0, 2, "quiet and sturdy");
  g.add(1, 0, 0, "loud fan broke quickly");
  double worst = 0.0;
  std::string worst_name;
  std::size_t groups = 0;
  for (MpVariant v : {MpVariant::Lga, MpVariant::Gau}) {
    TrainConfig cfg;
    cfg.enc.d = 4;
    cfg.enc.H = 2;
    cfg.enc.N = 4;
    cfg.enc.vocab_buckets = 16;
    cfg.enc.struct_dim = 2;
    cfg.enc.K = 3;
    cfg.mp.variant = v;
    cfg.mp.R = 2;
    const auto emb = compute_struct_embeddings(build_incidence(g), cfg.enc.struct_dim, 0);
    const PreparedData d = prepare(g, cfg.enc, emb);
    SaftModel m(cfg.enc, cfg.mp, 2, 1, 17);
    const BatchInput in = make_full_batch(d, cfg.enc.N);
    const Tensor y = one_hot(d.labels, 3);
    auto loss_value = [&] {
      Tape t;
      return binary_cross_entropy_sum(m.forward(t, in).probs, y).value().item();
    };
    m.params().zero_grad();
    Tape t;
    t.backward(binary_cross_entropy_sum(m.forward(t, in).probs, y));
    const double h = 1e-4;
    for (Parameter& p : m.params().all()) {
      if (!p.trainable) continue;
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double keep = p.value[k];
        p.value[k] = keep + h;
        const double up = loss_value();
        p.value[k] = keep - h;
        const double down = loss_value();
        p.value[k] = keep;
        const double fd = (up - down) / (2 * h);
        num = std::max(num, std::abs(p.grad[k] - fd));
        den = std::max(den, std::abs(fd));
      }
      const double rel = den > 0 ? num / den : num;
      ++groups;
      if (rel > worst) {
        worst = rel;
        worst_name = std::string(to_string(v)) + ":" + p.name;
      }
    }
  }
  return {worst <= 1e-4, fmt("%zu parameter groups, worst relative error %.3e at %s (tol 1e-4)", groups, worst,
                             worst_name.c_str())};
}

// 8 -----------------------------------------------------------------------------
Outcome sampler_distributions() {
  constexpr std::size_t kDraws = 100000;
  const auto ops = IncidenceOperators::from_edges(3, 14, synth::random_edges(3, 14, 36, 8));
  const auto emb = compute_struct_embeddings(ops, 16, 8);
  double worst_tv = 0.0;
  for (SamplerKind kind : {SamplerKind::Distance, SamplerKind::Centrality, SamplerKind::Random}) {
    for (Side side : {Side::User, Side::Item}) {
      for (std::size_t anchor : {std::size_t{0}, std::size_t{7}}) {
        const std::size_t node = side == Side::User ? ops.edge_user(anchor) : ops.edge_item(anchor);
        std::vector<double> w(ops.num_edges(), 0.0);
        double total = 0.0;
        for (std::size_t e : ops.incident_edges(side, node)) {
          if (e == anchor) continue;
          double v = 1.0;
          if (kind == SamplerKind::Distance) {
            v = 0.0;
            for (std::size_t j = 0; j < emb.distance.cols(); ++j) v += emb.distance(anchor, j) * emb.distance(e, j);
            v = std::max(0.0, v);
          } else if (kind == SamplerKind::Centrality) {
            v = 0.0;
            for (double x : emb.centrality.row(e)) v += x * x;
          }
          w[e] = v;
          total += v;
        }
        if (ops.incident_edges(side, node).size() <= 2) continue;
        SamplerConfig cfg;
        cfg.kind = kind;
        cfg.b = 1;
        std::vector<double> f(ops.num_edges(), 0.0);
        for (std::size_t s = 0; s < kDraws; ++s)
          f[sample_neighbors(ops, node, anchor, side, emb.distance, emb.centrality, cfg, s).edges.at(0)] += 1.0;
        double tv = 0.0;
        for (std::size_t e = 0; e < f.size(); ++e) tv += std::abs(f[e] / kDraws - w[e] / total);
        worst_tv = std::max(worst_tv, 0.5 * tv);
      }
    }
  }
  bool exact = true;
  std::size_t short_circuits = 0;
  for (std::size_t b : {3, 5, 13}) {
    SamplerConfig cfg;
    cfg.b = b;
    for (SamplerKind kind : {SamplerKind::Distance, SamplerKind::Centrality, SamplerKind::Random}) {
      cfg.kind = kind;
      for (std::size_t e = 0; e < ops.num_edges(); ++e)
        for (Side side : {Side::User, Side::Item}) {
          const std::size_t node = side == Side::User ? ops.edge_user(e) : ops.edge_item(e);
          std::vector<std::size_t> cand;
          for (std::size_t x : ops.incident_edges(side, node))
            if (x != e) cand.push_back(x);
          if (cand.size() > b) continue;
          ++short_circuits;
          exact = exact && sample_neighbors(ops, node, e, side, emb.distance, emb.centrality, cfg, e).edges == cand;
        }
    }
  }
  return {worst_tv <= 0.02 && exact && short_circuits > 0,
          fmt("worst total variation %.4f over 1e5 draws (tol 0.02); short-circuit exact on %zu neighborhoods: %s",
              worst_tv, short_circuits, exact ? "yes" : "no")};
}

// 9 -----------------------------------------------------------------------------
double test_micro(const TinGraph& g, TrainConfig cfg, std::size_t* best_epoch) {
  const auto emb = compute_struct_embeddings(build_incidence(g), cfg.enc.struct_dim, cfg.seed);
  const PreparedData d = prepare(g, cfg.enc, emb);
  const Split split = stratified_split(d.labels, cfg.seed);
  SaftModel m(cfg.enc, cfg.mp, g.num_users(), g.num_items(), cfg.seed);
  const auto r = train(m, d, cfg, split);
  *best_epoch = r.best_epoch;
  return evaluate(m, d, cfg, split.test).micro_f1;
}

Outcome planted_benchmark() {
  const auto t0 = Clock::now();
  const TinGraph g = synth::planted_signal(synth::PlantedConfig{});
  TrainConfig cfg;  // optimizer and schedule defaults for small graphs
  cfg.epochs = 200;
  cfg.seed = 1;
  cfg.sampler.seed = 1;
  cfg.enc.K = 4;
  cfg.enc.d = 24;
  cfg.enc.N = 8;
  std::size_t full_best = 0, text_best = 0;
  const double full = test_micro(g, cfg, &full_best);
  TrainConfig text = cfg;
  text.enc.message_passing = text.enc.structural_tokens = text.enc.node_tokens = false;
  const double text_only = test_micro(g, text, &text_best);
  const double t = seconds_since(t0);
  return {full >= 0.90 && full - text_only >= 0.05 && t < 300.0,
          fmt("|E| = %zu; full model test micro-F1 %.4f (best epoch %zu, need >= 0.90); text-only %.4f (best epoch "
              "%zu); margin %.1f points (need >= 5); %.1f s (limit 300 s)",
              g.num_edges(), full, full_best, text_only, text_best, 100 * (full - text_only), t)};
}

// 10 ----------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int run(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

Outcome determinism(const std::string& tool) {
  if (tool.empty() || !fs::exists(tool)) return {false, "command-line tool path not given"};
  const fs::path dir = fs::temp_directory_path() / ("saft_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string q = "\"" + tool + "\"";
  const std::string data = (dir / "data.tsv").string(), conf = (dir / "run.conf").string();
  {
    std::ofstream c(conf);
    c << "epochs = 15\nearly_stop = 0\nhidden = 8\nseq_len = 6\nsvd_dim = 16\nvariant = gau\n";
  }
  bool ok = run(q + " generate --out " + data + " --seed 11") == 0;
  for (const char* tag : {"a", "b"}) {
    ok = ok && run(q + " embed " + data + " --dim 16 --seed 5 --out " + (dir / tag).string()) == 0;
    ok = ok && run(q + " train " + data + " --config " + conf + " --seed 5 --out " + (dir / ("run_" + std::string(tag))).string()) == 0;
  }
  const std::string files[] = {"a.dist.emb", "a.cent.emb", "run_a/history.tsv", "run_a/model.ckpt"};
  std::string detail = ok ? "" : "a command failed; ";
  bool same = ok;
  for (const std::string& f : files) {
    std::string other = f;
    other.replace(other.find('a'), 1, "b");
    const std::string x = slurp(dir / f), y = slurp(dir / other);
    const bool eq = !x.empty() && x == y;
    same = same && eq;
    detail += fmt("%s %s (%zu bytes); ", f.c_str(), eq ? "identical" : "DIFFERS", x.size());
  }
  fs::remove_all(dir);
  return {same, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string tool = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"resistance distances from distance embeddings", resistance_suite},
      {"distance embedding Gram equals line Laplacian pseudoinverse", gram_identity},
      {"spanning centrality from centrality embeddings", centrality_suite},
      {"sparse softmax of side incidence products equals side transitions", ssoftmax_identity},
      {"line transition doubly stochastic, I - P is the line Laplacian", line_transition},
      {"implicit message passing matches dense recurrences, linear step cost", reordered_message_passing},
      {"backward gradients match central differences", gradient_integrity},
      {"sampler single-draw distributions and short-circuit", sampler_distributions},
      {"planted-signal benchmark beats text-only ablation", planted_benchmark},
      {"train and embed reruns are byte-identical", [&] { return determinism(tool); }},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2zu %s  %s: %s\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
