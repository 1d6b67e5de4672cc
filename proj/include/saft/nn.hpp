#pragma once

// Parameter storage and the small layers shared by the encoder and message
// passing: affine maps and layer normalization.

#include <cmath>
#include <deque>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "saft/autodiff.hpp"

namespace saft {

/// Owns parameters with stable addresses, in creation order.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value, bool trainable = true) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.emplace_back(std::move(name), std::move(value), trainable);
    return params_.back();
  }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t num_scalars(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable || !trainable_only) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Binds each parameter to one leaf per tape.
class Binding {
 public:
  explicit Binding(Tape& tape) : tape_(tape) {}
  Var operator()(Parameter& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return it->second;
    Var v = tape_.param(p);
    bound_.emplace(&p, v);
    return v;
  }
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  std::unordered_map<const Parameter*, Var> bound_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor uniform_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t = Tensor::zeros(fan_in, fan_out);
  for (double& x : t.data()) x = u(rng);
  return t;
}

inline Tensor normal_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t = Tensor::zeros(rows, cols);
  for (double& x : t.data()) x = n(rng);
  return t;
}

/// y = x W + b with W: in x out, b: 1 x out.
struct Linear {
  Parameter* w = nullptr;
  Parameter* b = nullptr;

  static Linear make(ParamStore& s, const std::string& name, std::size_t in, std::size_t out,
                     std::mt19937_64& rng) {
    Linear l;
    l.w = &s.add(name + ".w", uniform_init(in, out, rng));
    l.b = &s.add(name + ".b", Tensor::zeros(1, out));
    return l;
  }

  Var operator()(Binding& bind, const Var& x) const { return linear(x, bind(*w), bind(*b)); }
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  static LayerNorm make(ParamStore& s, const std::string& name, std::size_t dim) {
    LayerNorm n;
    n.gain = &s.add(name + ".gain", Tensor::filled(1, dim, 1.0));
    n.bias = &s.add(name + ".bias", Tensor::zeros(1, dim));
    return n;
  }

  Var operator()(Binding& bind, const Var& x) const { return layer_norm(x, bind(*gain), bind(*bias)); }
};

}  // namespace saft
