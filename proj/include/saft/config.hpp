#pragma once

// Run configuration: `key = value` lines, '#' comments, unknown keys rejected.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "saft/encoder.hpp"
#include "saft/message_passing.hpp"
#include "saft/sampling.hpp"

namespace saft {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double eps = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t epochs = 300;
  std::size_t patience = 30;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  EncoderConfig enc;
  MpConfig mp;
  SamplerConfig sampler;

  bool full_batch() const { return batch_size == 0; }

  /// Settings for large networks trained with sampled mini-batches.
  static TrainConfig minibatch_defaults() {
    TrainConfig c;
    c.lr = 1e-5;
    c.weight_decay = 1e-3;
    c.eps = 1e-8;
    c.epochs = 100;
    c.patience = 3;
    c.batch_size = 25;
    return c;
  }

  void validate() const {
    if (!(lr > 0) || !(eps > 0) || !(weight_decay >= 0)) throw ConfigError("rates must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (patience > epochs) throw ConfigError("early_stop must not exceed epochs");
    enc.validate();
    mp.validate();
    sampler.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw ConfigError("bad value for " + key + ": " + v);
  if constexpr (std::is_unsigned_v<T>)
    if (!v.empty() && v[0] == '-') throw ConfigError("negative value for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean for " + key + ": " + v);
}

}  // namespace detail

inline void set_config_value(TrainConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  if (key == "lr") c.lr = parse_number<double>(key, v);
  else if (key == "weight_decay") c.weight_decay = parse_number<double>(key, v);
  else if (key == "epsilon") c.eps = parse_number<double>(key, v);
  else if (key == "beta1") c.beta1 = parse_number<double>(key, v);
  else if (key == "beta2") c.beta2 = parse_number<double>(key, v);
  else if (key == "epochs") c.epochs = parse_number<std::size_t>(key, v);
  else if (key == "early_stop") c.patience = parse_number<std::size_t>(key, v);
  else if (key == "batch_size") c.batch_size = v == "full" ? 0 : parse_number<std::size_t>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "layers") c.enc.L = parse_number<std::size_t>(key, v);
  else if (key == "heads") c.enc.H = parse_number<std::size_t>(key, v);
  else if (key == "hidden") c.enc.d = parse_number<std::size_t>(key, v);
  else if (key == "seq_len") c.enc.N = parse_number<std::size_t>(key, v);
  else if (key == "vocab_buckets") c.enc.vocab_buckets = parse_number<std::size_t>(key, v);
  else if (key == "svd_dim") c.enc.struct_dim = parse_number<std::size_t>(key, v);
  else if (key == "node_tokens") c.enc.node_tokens = detail::parse_bool(key, v);
  else if (key == "structural_tokens") c.enc.structural_tokens = detail::parse_bool(key, v);
  else if (key == "message_passing") c.enc.message_passing = detail::parse_bool(key, v);
  else if (key == "variant") c.mp.variant = parse_variant(v);
  else if (key == "mp_layers") c.mp.R = parse_number<std::size_t>(key, v);
  else if (key == "delta") c.mp.delta = parse_number<double>(key, v);
  else if (key == "lambda") c.mp.lambda = parse_number<double>(key, v);
  else if (key == "sampler") c.sampler.kind = parse_sampler(v);
  else if (key == "b") c.sampler.b = parse_number<std::size_t>(key, v);
  else throw ConfigError("unknown config key: " + key);
}

/// Parse config text on top of `base` (defaults for absent keys).
inline TrainConfig parse_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ContractError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.sampler.seed = base.seed;
  return base;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  TrainConfig base;
  // A batch size in the file selects the mini-batch defaults for unset keys.
  if (ss.str().find("batch_size") != std::string::npos) {
    const TrainConfig probe = parse_config(ss.str());
    if (!probe.full_batch()) base = TrainConfig::minibatch_defaults();
  }
  return parse_config(ss.str(), base);
}

inline std::string to_config_text(const TrainConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "lr = " << fmt_double(c.lr) << "\n"
     << "weight_decay = " << fmt_double(c.weight_decay) << "\n"
     << "epsilon = " << fmt_double(c.eps) << "\n"
     << "beta1 = " << fmt_double(c.beta1) << "\n"
     << "beta2 = " << fmt_double(c.beta2) << "\n"
     << "epochs = " << c.epochs << "\n"
     << "early_stop = " << c.patience << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "seed = " << c.seed << "\n"
     << "layers = " << c.enc.L << "\n"
     << "heads = " << c.enc.H << "\n"
     << "hidden = " << c.enc.d << "\n"
     << "seq_len = " << c.enc.N << "\n"
     << "vocab_buckets = " << c.enc.vocab_buckets << "\n"
     << "svd_dim = " << c.enc.struct_dim << "\n"
     << "node_tokens = " << (c.enc.node_tokens ? "true" : "false") << "\n"
     << "structural_tokens = " << (c.enc.structural_tokens ? "true" : "false") << "\n"
     << "message_passing = " << (c.enc.message_passing ? "true" : "false") << "\n"
     << "variant = " << to_string(c.mp.variant) << "\n"
     << "mp_layers = " << c.mp.R << "\n"
     << "delta = " << fmt_double(c.mp.delta) << "\n"
     << "lambda = " << fmt_double(c.mp.lambda) << "\n"
     << "sampler = " << to_string(c.sampler.kind) << "\n"
     << "b = " << c.sampler.b << "\n";
  return os.str();
}

}  // namespace saft
