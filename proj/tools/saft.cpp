#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "saft/saft.hpp"

using namespace saft;

namespace {

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string variant, sampler;
  std::optional<std::size_t> b;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config, "key = value run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "overrides the config seed");
  cmd->add_option("--variant", f.variant, "message passing variant")->check(CLI::IsMember({"lga", "gau"}));
  cmd->add_option("--sampler", f.sampler, "mini-batch neighbor sampler")
      ->check(CLI::IsMember({"distance", "centrality", "random"}));
  cmd->add_option("--b", f.b, "sampled neighbors per node");
}

TrainConfig resolve_config(const RunFlags& f, int num_classes) {
  TrainConfig c = f.config.empty() ? TrainConfig{} : load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.variant.empty()) c.mp.variant = parse_variant(f.variant);
  if (!f.sampler.empty()) c.sampler.kind = parse_sampler(f.sampler);
  if (f.b) c.sampler.b = *f.b;
  c.sampler.seed = c.seed;
  c.enc.K = static_cast<std::size_t>(std::max(num_classes, 2));
  c.validate();
  return c;
}

TinGraph load_checked(const std::string& path) {
  TinGraph g = load_dataset(path);
  g.validate();
  return g;
}

void print_metrics(const std::string& tag, const Metrics& m) {
  std::printf("%s\tmacro_f1\t%.17g\tmicro_f1\t%.17g\n", tag.c_str(), m.macro_f1, m.micro_f1);
}

std::vector<std::size_t> split_edges(const Split& s, const std::string& which, std::size_t num_edges) {
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  if (which == "test") return s.test;
  std::vector<std::size_t> all(num_edges);
  for (std::size_t e = 0; e < num_edges; ++e) all[e] = e;
  return all;
}

StructEmbeddings embeddings_for(const IncidenceOperators& ops, const TrainConfig& cfg, const std::string& prefix) {
  if (prefix.empty()) return compute_struct_embeddings(ops, cfg.enc.struct_dim, cfg.seed);
  StructEmbeddings e;
  e.distance = read_embedding(prefix + ".dist.emb").z;
  e.centrality = read_embedding(prefix + ".cent.emb").z;
  return e;
}

void print_report(const VerificationReport& rep) {
  std::printf("check\tmax_deviation\tthreshold\tresult\n");
  for (const auto& r : rep.rows)
    std::printf("%s\t%.3e\t%.1e\t%s\n", r.name.c_str(), r.deviation, r.threshold,
                r.informational ? "info" : (r.pass ? "PASS" : "FAIL"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure-aware interaction classification: embeddings, verification, training"};
  app.require_subcommand(1);
  int status = 0;

  // generate
  auto* gen = app.add_subcommand("generate", "write a planted-signal dataset");
  synth::PlantedConfig pc;
  std::string gen_out;
  gen->add_option("--out", gen_out, "dataset path")->required();
  gen->add_option("--seed", pc.seed);
  gen->add_option("--users", pc.num_users);
  gen->add_option("--items", pc.num_items);
  gen->add_option("--edges-per-user", pc.edges_per_user);
  gen->add_option("--cross", pc.cross_prob, "probability an edge leaves its community");
  gen->callback([&] {
    const TinGraph g = synth::planted_signal(pc);
    std::ofstream f(gen_out);
    if (!f) throw IngestError("cannot write " + gen_out);
    f << "# user\titem\tlabel\ttext\n";
    write_dataset(f, g);
    std::printf("wrote %zu interactions to %s\n", g.num_edges(), gen_out.c_str());
  });

  // ingest
  auto* ing = app.add_subcommand("ingest", "parse and validate a dataset");
  std::string data_path;
  ing->add_option("dataset", data_path)->required()->check(CLI::ExistingFile);
  ing->callback([&] {
    const TinGraph g = load_checked(data_path);
    const auto ops = build_incidence(g);
    std::size_t comps = 0;
    node_components(ops, &comps);
    std::vector<std::size_t> per_class(static_cast<std::size_t>(g.num_classes()), 0);
    for (int y : g.labels()) ++per_class[static_cast<std::size_t>(y)];
    std::printf("users\t%zu\nitems\t%zu\ninteractions\t%zu\nclasses\t%d\ncomponents\t%zu\n", g.num_users(),
                g.num_items(), g.num_edges(), g.num_classes(), comps);
    for (std::size_t k = 0; k < per_class.size(); ++k) std::printf("class_%zu\t%zu\n", k, per_class[k]);
  });

  // embed
  auto* emb = app.add_subcommand("embed", "compute distance and centrality embeddings");
  std::string emb_out;
  std::size_t emb_dim = 64;
  std::uint64_t emb_seed = 0;
  emb->add_option("dataset", data_path)->required()->check(CLI::ExistingFile);
  emb->add_option("--out", emb_out, "output prefix; writes <prefix>.dist.emb and <prefix>.cent.emb")->required();
  emb->add_option("--dim", emb_dim, "embedding columns");
  emb->add_option("--seed", emb_seed);
  emb->callback([&] {
    const TinGraph g = load_checked(data_path);
    const auto ops = build_incidence(g);
    const auto d = distance_embeddings(ops, emb_dim, emb_seed);
    const auto c = centrality_embeddings(ops, emb_dim, emb_seed);
    if (d.rank_deficit > 0)
      std::fprintf(stderr, "warning: distance embedding has %zu zero columns (rank below %zu)\n", d.rank_deficit,
                   emb_dim);
    if (c.rank_deficit > 0)
      std::fprintf(stderr, "warning: centrality embedding has %zu zero columns (rank below %zu)\n", c.rank_deficit,
                   emb_dim);
    if (const auto parent = std::filesystem::path(emb_out).parent_path(); !parent.empty())
      std::filesystem::create_directories(parent);
    write_embedding(emb_out + ".dist.emb", d.z, EmbeddingKind::Distance, emb_seed);
    write_embedding(emb_out + ".cent.emb", c.z, EmbeddingKind::Centrality, emb_seed);
    std::printf("wrote %s.dist.emb and %s.cent.emb (%zu x %zu)\n", emb_out.c_str(), emb_out.c_str(), d.z.rows(),
                d.z.cols());
  });

  // verify
  auto* ver = app.add_subcommand("verify", "check embeddings and operators against dense oracles");
  std::size_t ver_random = 0;
  double ver_tol = 1e-6;
  std::string ver_emb;
  std::uint64_t ver_seed = 0;
  ver->add_option("dataset", data_path)->check(CLI::ExistingFile);
  ver->add_option("--random", ver_random, "verify this many seeded random small graphs instead");
  ver->add_option("--tol", ver_tol);
  ver->add_option("--emb", ver_emb, "embedding prefix to check instead of recomputing");
  ver->add_option("--seed", ver_seed);
  ver->callback([&] {
    if (ver_random > 0) {
      std::size_t failed = 0;
      VerificationReport worst;
      for (std::size_t k = 0; k < ver_random; ++k) {
        const auto ops = synth::random_incidence(ver_seed + k);
        const auto rep = verify_all(ops, ver_tol, std::nullopt, std::nullopt, ver_seed + k);
        if (!rep.passed()) ++failed;
        for (const auto& r : rep.rows) {
          const std::string name = r.name.rfind("component", 0) == 0 ? "per_component_centrality_mass" : r.name;
          auto it = std::find_if(worst.rows.begin(), worst.rows.end(), [&](const CheckRow& w) { return w.name == name; });
          if (it == worst.rows.end()) {
            worst.rows.push_back(r);
            worst.rows.back().name = name;
          } else {
            it->deviation = std::max(it->deviation, r.deviation);
            it->pass = it->pass && r.pass;
          }
        }
      }
      print_report(worst);
      std::printf("graphs\t%zu\tfailed\t%zu\n", ver_random, failed);
      status = failed == 0 ? 0 : 1;
      return;
    }
    if (data_path.empty()) throw CLI::ValidationError("verify", "give a dataset or --random N");
    const TinGraph g = load_checked(data_path);
    const auto ops = build_incidence(g);
    std::optional<Tensor> zd, zc;
    if (!ver_emb.empty()) {
      zd = read_embedding(ver_emb + ".dist.emb").z;
      zc = read_embedding(ver_emb + ".cent.emb").z;
    }
    const auto rep = verify_all(ops, ver_tol, zd, zc, ver_seed);
    print_report(rep);
    status = rep.passed() ? 0 : 1;
  });

  // train
  auto* trn = app.add_subcommand("train", "train and keep the best validation epoch");
  RunFlags run;
  std::string out_dir = "run", emb_prefix;
  add_run_flags(trn, run);
  trn->add_option("dataset", data_path)->required()->check(CLI::ExistingFile);
  trn->add_option("--out", out_dir, "output directory for history.tsv and model.ckpt");
  trn->add_option("--emb", emb_prefix, "precomputed embedding prefix");
  trn->callback([&] {
    const TinGraph g = load_checked(data_path);
    const TrainConfig cfg = resolve_config(run, g.num_classes());
    const auto ops = build_incidence(g);
    const auto embs = embeddings_for(ops, cfg, emb_prefix);
    const PreparedData d = prepare(g, cfg.enc, embs);
    const Split split = stratified_split(d.labels, cfg.seed);
    SaftModel model(cfg.enc, cfg.mp, g.num_users(), g.num_items(), cfg.seed);
    const TrainResult r = train(model, d, cfg, split);
    std::filesystem::create_directories(out_dir);
    write_history(out_dir + "/history.tsv", r.history);
    save_checkpoint(out_dir + "/model.ckpt", model, cfg);
    std::printf("best_epoch\t%zu\tepochs_run\t%zu\n", r.best_epoch, r.history.size());
    std::printf("best\t%s\n", format_history_row(r.history[r.best_epoch - 1]).c_str());
    if (!split.test.empty()) print_metrics("test", evaluate(model, d, cfg, split.test));
  });

  // eval
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  std::string ckpt_path, which = "test";
  evl->add_option("dataset", data_path)->required()->check(CLI::ExistingFile);
  evl->add_option("--checkpoint", ckpt_path)->required()->check(CLI::ExistingFile);
  evl->add_option("--split", which)->check(CLI::IsMember({"train", "val", "test", "all"}));
  evl->add_option("--emb", emb_prefix, "precomputed embedding prefix");
  evl->callback([&] {
    const TinGraph g = load_checked(data_path);
    const Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.num_users != g.num_users() || ck.num_items != g.num_items())
      throw IngestError("checkpoint was trained on a different graph");
    auto model = model_from_checkpoint(ck);
    const auto ops = build_incidence(g);
    const auto embs = embeddings_for(ops, ck.cfg, emb_prefix);
    const PreparedData d = prepare(g, ck.cfg.enc, embs);
    const Split split = stratified_split(d.labels, ck.cfg.seed);
    print_metrics(which, evaluate(*model, d, ck.cfg, split_edges(split, which, g.num_edges())));
  });

  // sweep
  auto* swp = app.add_subcommand("sweep", "train once per value of one config key");
  std::string sweep_key, sweep_out;
  std::vector<std::string> sweep_values;
  add_run_flags(swp, run);
  swp->add_option("dataset", data_path)->required()->check(CLI::ExistingFile);
  swp->add_option("--key", sweep_key, "config key to vary")->required();
  swp->add_option("--values", sweep_values, "comma-separated values")->required()->delimiter(',');
  swp->add_option("--out", sweep_out, "TSV path (stdout when absent)");
  swp->callback([&] {
    const TinGraph g = load_checked(data_path);
    const TrainConfig base = resolve_config(run, g.num_classes());
    const auto ops = build_incidence(g);
    std::ostringstream tsv;
    tsv << sweep_key << "\tbest_epoch\tval_macro_f1\tval_micro_f1\ttest_macro_f1\ttest_micro_f1\n";
    std::optional<StructEmbeddings> shared;
    for (const auto& v : sweep_values) {
      TrainConfig cfg = base;
      set_config_value(cfg, sweep_key, v);
      cfg.sampler.seed = cfg.seed;
      cfg.validate();
      const bool reuse = shared && shared->k == cfg.enc.struct_dim && shared->seed == cfg.seed;
      if (!reuse) shared = compute_struct_embeddings(ops, cfg.enc.struct_dim, cfg.seed);
      const PreparedData d = prepare(g, cfg.enc, *shared);
      const Split split = stratified_split(d.labels, cfg.seed);
      SaftModel model(cfg.enc, cfg.mp, g.num_users(), g.num_items(), cfg.seed);
      const TrainResult r = train(model, d, cfg, split);
      const auto& best = r.history[r.best_epoch - 1];
      const Metrics t = evaluate(model, d, cfg, split.test);
      char line[256];
      std::snprintf(line, sizeof line, "%s\t%zu\t%.17g\t%.17g\t%.17g\t%.17g\n", v.c_str(), r.best_epoch,
                    best.val_macro, best.val_micro, t.macro_f1, t.micro_f1);
      tsv << line;
    }
    if (sweep_out.empty()) {
      std::fputs(tsv.str().c_str(), stdout);
    } else {
      std::ofstream f(sweep_out);
      if (!f) throw IngestError("cannot write " + sweep_out);
      f << tsv.str();
    }
  });

  // sample
  auto* smp = app.add_subcommand("sample", "draw sampled neighborhoods for one interaction");
  std::size_t smp_edge = 0, smp_draws = 1;
  std::string smp_side = "user";
  add_run_flags(smp, run);
  smp->add_option("dataset", data_path)->required()->check(CLI::ExistingFile);
  smp->add_option("--edge", smp_edge, "anchor interaction index")->required();
  smp->add_option("--side", smp_side)->check(CLI::IsMember({"user", "item"}));
  smp->add_option("--draws", smp_draws, "repeat with fresh salts and report frequencies");
  smp->add_option("--emb", emb_prefix, "precomputed embedding prefix");
  smp->callback([&] {
    const TinGraph g = load_checked(data_path);
    const TrainConfig cfg = resolve_config(run, g.num_classes());
    const auto ops = build_incidence(g);
    if (smp_edge >= ops.num_edges()) throw ContractError("--edge out of range");
    const auto embs = embeddings_for(ops, cfg, emb_prefix);
    const Side side = smp_side == "user" ? Side::User : Side::Item;
    const std::size_t node = side == Side::User ? ops.edge_user(smp_edge) : ops.edge_item(smp_edge);
    if (smp_draws <= 1) {
      const auto s = sample_neighbors(ops, node, smp_edge, side, embs.distance, embs.centrality, cfg.sampler);
      std::printf("node\t%zu\tcandidates\t%zu\tsampled", node, ops.incident_edges(side, node).size() - 1);
      for (std::size_t e : s.edges) std::printf("\t%zu", e);
      std::printf("\n");
      return;
    }
    std::vector<double> freq(ops.num_edges(), 0.0);
    for (std::size_t k = 0; k < smp_draws; ++k)
      for (std::size_t e :
           sample_neighbors(ops, node, smp_edge, side, embs.distance, embs.centrality, cfg.sampler, k).edges)
        freq[e] += 1.0 / static_cast<double>(smp_draws);
    std::printf("edge\tinclusion_frequency\n");
    for (std::size_t e : ops.incident_edges(side, node))
      if (e != smp_edge) std::printf("%zu\t%.6f\n", e, freq[e]);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return status;
}
