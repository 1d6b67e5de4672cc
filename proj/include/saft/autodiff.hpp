#pragma once

// Tape-based reverse-mode automatic differentiation over 2-D tensors.
//
// A Tape records every operation executed on its Vars in execution order, so
// the record is topologically sorted by construction. backward() walks it once
// in reverse. A tape supports a single backward pass; build a new tape for the
// next forward pass.

#include <cassert>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "saft/tensor.hpp"

namespace saft {

/// A learnable (or frozen) tensor that outlives individual tapes.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Untracked input; receives no gradient.
  Var constant(Tensor value) { return push(std::move(value), false, {}, nullptr); }

  /// Tracked input whose gradient can be read with grad() after backward().
  Var input(Tensor value) { return push(std::move(value), true, {}, nullptr); }

  /// Leaf bound to a Parameter; backward() accumulates into param.grad.
  Var param(Parameter& p) {
    Var v = push(p.value, p.trainable, {}, nullptr);
    if (p.trainable) nodes_[v.id()].param = &p;
    return v;
  }

  /// Record the result of a custom operation. The backward function receives
  /// the output gradient and must call accumulate() for each parent.
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    return push(std::move(value), needs, std::move(parents), needs ? std::move(backward) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  /// Add g into the gradient buffer of v (no-op for untracked values).
  void accumulate(const Var& v, const Tensor& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
    n.grad += g;
  }

  /// Gradient of the last backward pass with respect to v (zeros if unreached).
  Tensor grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    return n.grad.size() ? n.grad : Tensor(n.value.shape());
  }

  void backward(const Var& loss) {
    if (nodes_.empty()) throw ContractError("backward on an empty tape");
    if (backward_done_) throw ContractError("backward called twice on the same tape");
    if (loss.value().size() != 1) throw ContractError("backward requires a scalar loss");
    backward_done_ = true;
    accumulate(loss, Tensor(loss.value().shape(), 1.0));
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) {
        // Copy: the callback may append to grads of earlier nodes only.
        const Tensor g = n.grad;
        n.backward(*this, g);
      }
      if (n.param) n.param->grad += n.grad;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Tensor value, bool requires_grad, std::vector<Var> parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.parents = std::move(parents);
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------------------
// Differentiable operations

inline Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.accumulate(a, matmul_nt(g, b.value()));
    if (t.requires_grad(b)) t.accumulate(b, matmul_tn(a.value(), g));
  });
}

inline Var add(const Var& a, const Var& b) {
  a.value().check_same(b.value(), "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  a.value().check_same(b.value(), "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, -1.0 * g);
  });
}

/// Elementwise product.
inline Var hadamard(const Var& a, const Var& b) {
  a.value().check_same(b.value(), "hadamard");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
      t.accumulate(b, gb);
    }
  });
}

inline Var scale(const Var& a, double s) {
  return a.tape().record(a.value() * s, {a},
                         [a, s](Tape& t, const Tensor& g) { t.accumulate(a, g * s); });
}

/// x + 1*bias, where bias is a 1 x cols row broadcast over all rows.
inline Var add_row(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) throw DimensionError("add_row: bias must be 1 x cols");
  Tensor out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv(0, j);
  return x.tape().record(std::move(out), {x, bias}, [x, bias](Tape& t, const Tensor& g) {
    t.accumulate(x, g);
    if (t.requires_grad(bias)) {
      Tensor gb = Tensor::zeros(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      t.accumulate(bias, gb);
    }
  });
}

inline Var relu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(x.value()[i] > 0.0)) gx[i] = 0.0;
    t.accumulate(x, gx);
  });
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// x * sigmoid(x)
inline Var silu(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v * sigmoid(v);
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double v = x.value()[i];
      const double s = sigmoid(v);
      gx[i] *= s * (1.0 + v * (1.0 - s));
    }
    t.accumulate(x, gx);
  });
}

/// Plain row softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& x) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double& v : r) s += (v = std::exp(v - m));
    for (double& v : r) v /= s;
  }
  return out;
}

inline Var softmax_rows(const Var& x) {
  if (x.value().ndim() != 2) throw DimensionError("softmax_rows expects a 2-D tensor");
  Tensor out = softmax_rows(x.value());
  Tensor saved = out;
  return x.tape().record(std::move(out), {x}, [x, saved](Tape& t, const Tensor& g) {
    Tensor gx = g;
    for (std::size_t i = 0; i < gx.rows(); ++i) {
      auto s = saved.row(i);
      auto gi = gx.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < s.size(); ++j) dot += s[j] * gi[j];
      for (std::size_t j = 0; j < s.size(); ++j) gi[j] = s[j] * (gi[j] - dot);
    }
    t.accumulate(x, gx);
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalize each row to zero mean / unit variance, then gain * xhat + bias.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gain.value().size() != c || bias.value().size() != c)
    throw DimensionError("layer_norm: gain/bias width must match last dimension");
  Tensor xhat = Tensor::zeros(n, c);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xv(i, j);
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < c; ++j) xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
  }
  Tensor out = xhat;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out(i, j) = gain.value()[j] * xhat(i, j) + bias.value()[j];
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, n, c](Tape& t, const Tensor& g) {
        if (t.requires_grad(gain) || t.requires_grad(bias)) {
          Tensor gg(gain.value().shape()), gb(bias.value().shape());
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              gg[j] += g(i, j) * xhat(i, j);
              gb[j] += g(i, j);
            }
          t.accumulate(gain, gg);
          t.accumulate(bias, gb);
        }
        if (t.requires_grad(x)) {
          Tensor gx = Tensor::zeros(n, c);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < n; ++i) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g(i, j) * gain.value()[j];
              sum_d += d;
              sum_dx += d * xhat(i, j);
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g(i, j) * gain.value()[j];
              gx(i, j) = inv_std[i] * (d - inv_c * sum_d - xhat(i, j) * inv_c * sum_dx);
            }
          }
          t.accumulate(x, gx);
        }
      });
}

/// Vertical concatenation.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) throw DimensionError("concat_rows: column counts differ");
    r += p.rows();
  }
  Tensor out = Tensor::zeros(r, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(off * c));
    off += p.rows();
  }
  return parts.front().tape().record(std::move(out), parts, [parts, c](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p)) {
        Tensor gp = Tensor::zeros(p.rows(), c);
        std::copy(g.data().begin() + static_cast<std::ptrdiff_t>(off * c),
                  g.data().begin() + static_cast<std::ptrdiff_t>((off + p.rows()) * c),
                  gp.data().begin());
        t.accumulate(p, gp);
      }
      off += p.rows();
    }
  });
}

/// Horizontal concatenation.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    c += p.cols();
  }
  Tensor out = Tensor::zeros(r, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  return parts.front().tape().record(std::move(out), parts, [parts, r](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : parts) {
      if (t.requires_grad(p)) {
        Tensor gp = Tensor::zeros(r, p.cols());
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < p.cols(); ++j) gp(i, j) = g(i, off + j);
        t.accumulate(p, gp);
      }
      off += p.cols();
    }
  });
}

/// out[k] = x[index[k]]; repeated indices accumulate in backward.
inline Var gather_rows(const Var& x, std::vector<std::size_t> index) {
  const std::size_t c = x.cols();
  Tensor out = Tensor::zeros(index.size(), c);
  for (std::size_t k = 0; k < index.size(); ++k) {
    if (index[k] >= x.rows()) throw DimensionError("gather_rows: index out of range");
    auto src = x.value().row(index[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return x.tape().record(std::move(out), {x}, [x, index = std::move(index), c](Tape& t, const Tensor& g) {
    Tensor gx = Tensor::zeros(x.rows(), c);
    for (std::size_t k = 0; k < index.size(); ++k) {
      auto dst = gx.row(index[k]);
      auto src = g.row(k);
      for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
    }
    t.accumulate(x, gx);
  });
}

/// Per-block Q_b K_b^T: q, k are [B*T, c], result is [B*T, T].
inline Var block_matmul_nt(const Var& q, const Var& k, std::size_t block) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  if (!qv.same_shape(kv) || block == 0 || qv.rows() % block != 0)
    throw DimensionError("block_matmul_nt: incompatible operands");
  const std::size_t nb = qv.rows() / block, c = qv.cols();
  Tensor out = Tensor::zeros(qv.rows(), block);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < block; ++i) {
      const double* qi = &qv.data()[(b * block + i) * c];
      for (std::size_t j = 0; j < block; ++j) {
        const double* kj = &kv.data()[(b * block + j) * c];
        double s = 0.0;
        for (std::size_t l = 0; l < c; ++l) s += qi[l] * kj[l];
        out(b * block + i, j) = s;
      }
    }
  return q.tape().record(std::move(out), {q, k}, [q, k, block, nb, c](Tape& t, const Tensor& g) {
    Tensor gq = Tensor::zeros(q.rows(), c), gk = Tensor::zeros(k.rows(), c);
    const Tensor& qv = q.value();
    const Tensor& kv = k.value();
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < block; ++i)
        for (std::size_t j = 0; j < block; ++j) {
          const double gij = g(b * block + i, j);
          if (gij == 0.0) continue;
          const std::size_t ri = b * block + i, rj = b * block + j;
          for (std::size_t l = 0; l < c; ++l) {
            gq(ri, l) += gij * kv(rj, l);
            gk(rj, l) += gij * qv(ri, l);
          }
        }
    t.accumulate(q, gq);
    t.accumulate(k, gk);
  });
}

/// Per-block S_b V_b: s is [B*T, T], v is [B*T, c], result [B*T, c].
inline Var block_matmul(const Var& s, const Var& v, std::size_t block) {
  const Tensor& sv = s.value();
  const Tensor& vv = v.value();
  if (sv.cols() != block || sv.rows() != vv.rows() || sv.rows() % block != 0)
    throw DimensionError("block_matmul: incompatible operands");
  const std::size_t nb = sv.rows() / block, c = vv.cols();
  Tensor out = Tensor::zeros(vv.rows(), c);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < block; ++i) {
      double* oi = &out.data()[(b * block + i) * c];
      for (std::size_t j = 0; j < block; ++j) {
        const double w = sv(b * block + i, j);
        const double* vj = &vv.data()[(b * block + j) * c];
        for (std::size_t l = 0; l < c; ++l) oi[l] += w * vj[l];
      }
    }
  return s.tape().record(std::move(out), {s, v}, [s, v, block, nb, c](Tape& t, const Tensor& g) {
    const Tensor& sv = s.value();
    const Tensor& vv = v.value();
    Tensor gs = Tensor::zeros(sv.rows(), block), gv = Tensor::zeros(vv.rows(), c);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < block; ++i) {
        const std::size_t ri = b * block + i;
        for (std::size_t j = 0; j < block; ++j) {
          const std::size_t rj = b * block + j;
          double d = 0.0;
          for (std::size_t l = 0; l < c; ++l) {
            d += g(ri, l) * vv(rj, l);
            gv(rj, l) += sv(ri, j) * g(ri, l);
          }
          gs(ri, j) = d;
        }
      }
    t.accumulate(s, gs);
    t.accumulate(v, gv);
  });
}

/// Mean over each consecutive block of rows: [B*T, c] -> [B, c].
inline Var block_mean_rows(const Var& x, std::size_t block) {
  const Tensor& xv = x.value();
  if (block == 0 || xv.rows() % block != 0) throw DimensionError("block_mean_rows: bad block size");
  const std::size_t nb = xv.rows() / block, c = xv.cols();
  Tensor out = Tensor::zeros(nb, c);
  const double inv = 1.0 / static_cast<double>(block);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < block; ++i)
      for (std::size_t j = 0; j < c; ++j) out(b, j) += xv(b * block + i, j) * inv;
  return x.tape().record(std::move(out), {x}, [x, block, nb, c, inv](Tape& t, const Tensor& g) {
    Tensor gx = Tensor::zeros(x.rows(), c);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < block; ++i)
        for (std::size_t j = 0; j < c; ++j) gx(b * block + i, j) = g(b, j) * inv;
    t.accumulate(x, gx);
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().record(Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, Tensor(x.value().shape(), g.item()));
  });
}

/// x * W + b with b a 1 x out row.
inline Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace saft
