#pragma once

// Matrix-level reverse-mode differentiation.
//
// A Tape records every operation of one forward computation. Each node owns its value and a
// backward closure that pushes the node's output gradient to its inputs. Parameters live outside
// the tape; their nodes alias the parameter storage so backward() accumulates straight into
// Parameter::grad.

#include "predgen/core/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace predgen {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Named parameters with stable addresses, kept in insertion order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other) { *this = other; }
  ParameterSet& operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p.name, p.value);
    return *this;
  }
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(const std::string& name, Matrix value) {
    if (index_.count(name) != 0) throw std::invalid_argument("duplicate parameter " + name);
    params_.push_back(Parameter{name, std::move(value), {}});
    params_.back().zero_grad();
    index_[name] = params_.size() - 1;
    return params_.back();
  }

  Parameter& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return params_[it->second];
  }
  const Parameter& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  /// With gradients disabled, parameters enter as constants and no closures are kept.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, {}, false});
    return Var{this, nodes_.size() - 1};
  }

  /// Leaf that collects its own gradient; read it with grad() after backward().
  Var variable(Matrix value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, {}, grad_enabled_});
    return Var{this, nodes_.size() - 1};
  }

  /// Gradient collected by a leaf variable (zeros if the loss does not depend on it).
  Matrix grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Matrix::Zero(value(v.id).rows(), value(v.id).cols());
    return n.grad;
  }

  Var param(Parameter& p) {
    nodes_.push_back(Node{{}, {}, &p, {}, grad_enabled_});
    return Var{this, nodes_.size() - 1};
  }

  /// Records an operation result. `backward` runs only if some input needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, nullptr, needs ? std::move(backward) : Backward{},
                          needs});
    return Var{this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param != nullptr ? n.param->value : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  void accumulate(std::size_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    Matrix& target = n.param != nullptr ? n.param->grad : n.grad;
    if (target.size() == 0) {
      target = g;
    } else {
      target += g;
    }
  }
  template <typename Expr>
  void accumulate_expr(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    Matrix& target = n.param != nullptr ? n.param->grad : n.grad;
    if (target.size() == 0) {
      target = g;
    } else {
      target += g;
    }
  }

  /// Seeds d(loss)/d(loss) = 1 and runs closures in reverse recording order.
  void backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: variable from another tape");
    const Matrix& v = value(loss.id);
    if (v.rows() != 1 || v.cols() != 1) {
      throw DimensionError("backward: loss must be 1x1, got " + shape_string(v));
    }
    if (!grad_enabled_) throw std::logic_error("backward: tape recorded without gradients");
    accumulate(loss.id, Matrix::Ones(1, 1));
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      const Matrix g = std::move(n.grad);
      n.backward(*this, g);
    }
  }

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Parameter* param;
    Backward backward;
    bool requires_grad;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace ad {

namespace detail {
inline void same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes differ, " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Matrix out = predgen::matmul(a.value(), b.value());
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate_expr(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate_expr(ib, t.value(ia).transpose() * g);
  });
}

/// a · bᵀ
inline Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: lhs " + shape_string(a.value()) + " rhs^T of " +
                         shape_string(b.value()));
  }
  Matrix out = a.value() * b.value().transpose();
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate_expr(ia, g * t.value(ib));
    if (t.requires_grad(ib)) t.accumulate_expr(ib, g.transpose() * t.value(ia));
  });
}

inline Var add(Var a, Var b) {
  detail::same_shape("add", a.value(), b.value());
  Matrix out = a.value() + b.value();
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape("sub", a.value(), b.value());
  Matrix out = a.value() - b.value();
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate_expr(ib, -g);
  });
}

/// Adds a 1×c row to every row of a.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: " + shape_string(a.value()) + " + " + shape_string(row.value()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape->record(std::move(out), {a, row},
                        [ia = a.id, ir = row.id](Tape& t, const Matrix& g) {
                          t.accumulate(ia, g);
                          if (t.requires_grad(ir)) t.accumulate_expr(ir, g.colwise().sum());
                        });
}

inline Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return a.tape->record(std::move(out), {a},
                        [ia = a.id, s](Tape& t, const Matrix& g) { t.accumulate_expr(ia, g * s); });
}

inline Var hadamard(Var a, Var b) {
  detail::same_shape("hadamard", a.value(), b.value());
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [ia = a.id, ib = b.id](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate_expr(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate_expr(ib, g.cwiseProduct(t.value(ia)));
  });
}

/// tanh-approximated GELU.
inline Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
  }
  return a.tape->record(std::move(out), {a}, [ia = a.id](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    Matrix dx(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x.data()[i];
      const double u = c * (v + 0.044715 * v * v * v);
      const double th = std::tanh(u);
      const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
      dx.data()[i] = g.data()[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
    t.accumulate(ia, dx);
  });
}

/// log(1 + e^x), evaluated without overflow.
inline Var softplus(Var a) {
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); });
  return a.tape->record(std::move(out), {a}, [ia = a.id](Tape& t, const Matrix& g) {
    const Matrix sig = t.value(ia).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
    t.accumulate_expr(ia, g.cwiseProduct(sig));
  });
}

/// Row-wise layer normalisation with gain and bias rows.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  if (gain.cols() != d || bias.cols() != d || gain.rows() != 1 || bias.rows() != 1) {
    throw DimensionError("layer_norm: gain/bias must be 1x" + std::to_string(d));
  }
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std[r];
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               bias.value().row(0).array();
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [ix = x.id, ig = gain.id, ib = bias.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
        if (t.requires_grad(ig)) t.accumulate_expr(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ib)) t.accumulate_expr(ib, g.colwise().sum());
        if (!t.requires_grad(ix)) return;
        const Matrix gx = g.array().rowwise() * t.value(ig).row(0).array();
        const double d = static_cast<double>(gx.cols());
        Matrix dx(gx.rows(), gx.cols());
        for (Eigen::Index r = 0; r < gx.rows(); ++r) {
          const double mean_g = gx.row(r).sum() / d;
          const double mean_gx = gx.row(r).dot(xhat.row(r)) / d;
          dx.row(r) = (gx.row(r).array() - mean_g - xhat.row(r).array() * mean_gx) * inv_std[r];
        }
        t.accumulate(ix, dx);
      });
}

/// Multi-head causal self-attention over a fused [Q | K | V] projection (L × 3d).
inline Var causal_attention(Var qkv, int n_heads) {
  const Matrix& in = qkv.value();
  const Eigen::Index len = in.rows();
  if (in.cols() % (3 * n_heads) != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(in.cols()) +
                         " not divisible into 3 x " + std::to_string(n_heads) + " heads");
  }
  const Eigen::Index d = in.cols() / 3;
  const Eigen::Index hd = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix out = Matrix::Zero(len, d);
  std::vector<Matrix> probs(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    const auto q = in.block(0, h * hd, len, hd);
    const auto k = in.block(0, d + h * hd, len, hd);
    const auto v = in.block(0, 2 * d + h * hd, len, hd);
    Matrix s = (q * k.transpose()) * inv_sqrt;
    Matrix& p = probs[static_cast<std::size_t>(h)];
    p = Matrix::Zero(len, len);
    for (Eigen::Index r = 0; r < len; ++r) {
      const double mx = s.row(r).head(r + 1).maxCoeff();
      double z = 0.0;
      for (Eigen::Index c = 0; c <= r; ++c) {
        p(r, c) = std::exp(s(r, c) - mx);
        z += p(r, c);
      }
      p.row(r).head(r + 1) /= z;
    }
    out.block(0, h * hd, len, hd).noalias() = p * v;
  }
  return qkv.tape->record(
      std::move(out), {qkv},
      [iq = qkv.id, n_heads, d, hd, inv_sqrt, probs = std::move(probs)](Tape& t, const Matrix& g) {
        const Matrix& in = t.value(iq);
        const Eigen::Index len = in.rows();
        Matrix dqkv = Matrix::Zero(len, 3 * d);
        for (int h = 0; h < n_heads; ++h) {
          const Matrix& p = probs[static_cast<std::size_t>(h)];
          const auto q = in.block(0, h * hd, len, hd);
          const auto k = in.block(0, d + h * hd, len, hd);
          const auto v = in.block(0, 2 * d + h * hd, len, hd);
          const auto go = g.block(0, h * hd, len, hd);
          Matrix dp = go * v.transpose();
          dqkv.block(0, 2 * d + h * hd, len, hd).noalias() = p.transpose() * go;
          Matrix ds(len, len);
          for (Eigen::Index r = 0; r < len; ++r) {
            const double dot = p.row(r).dot(dp.row(r));
            ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
          }
          ds *= inv_sqrt;
          dqkv.block(0, h * hd, len, hd).noalias() = ds * k;
          dqkv.block(0, d + h * hd, len, hd).noalias() = ds.transpose() * q;
        }
        t.accumulate(iq, dqkv);
      });
}

/// Gathers rows of `table` at `ids`.
inline Var embedding(Var table, std::span<const int> ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(tv.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table},
                            [it = table.id, idx = std::move(idx)](Tape& t, const Matrix& g) {
                              const Matrix& tv = t.value(it);
                              Matrix dt = Matrix::Zero(tv.rows(), tv.cols());
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                dt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                              }
                              t.accumulate(it, dt);
                            });
}

inline Var slice_rows(Var a, Eigen::Index begin, Eigen::Index count) {
  const Matrix& av = a.value();
  if (begin < 0 || count < 0 || begin + count > av.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + shape_string(av));
  }
  Matrix out = av.middleRows(begin, count);
  return a.tape->record(std::move(out), {a}, [ia = a.id, begin](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(ia);
    Matrix d = Matrix::Zero(av.rows(), av.cols());
    d.middleRows(begin, g.rows()) = g;
    t.accumulate(ia, d);
  });
}

inline Var mean_rows(Var a) {
  const Matrix& av = a.value();
  if (av.rows() == 0) throw DimensionError("mean_rows: no rows");
  Matrix out = av.colwise().mean();
  return a.tape->record(std::move(out), {a}, [ia = a.id](Tape& t, const Matrix& g) {
    const Eigen::Index n = t.value(ia).rows();
    Matrix d = g.replicate(n, 1) / static_cast<double>(n);
    t.accumulate(ia, d);
  });
}

inline Var concat_cols(Var a, Var b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: " + shape_string(a.value()) + " | " +
                         shape_string(b.value()));
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index ca = a.cols();
  return a.tape->record(std::move(out), {a, b},
                        [ia = a.id, ib = b.id, ca](Tape& t, const Matrix& g) {
                          if (t.requires_grad(ia)) t.accumulate_expr(ia, g.leftCols(ca));
                          if (t.requires_grad(ib)) t.accumulate_expr(ib, g.rightCols(g.cols() - ca));
                        });
}

inline Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape->record(std::move(out), {a}, [ia = a.id](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(ia);
    t.accumulate_expr(ia, Matrix::Constant(av.rows(), av.cols(), g(0, 0)));
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// log(mean(exp(a))) over all entries, max-shifted.
inline Var log_mean_exp(Var a) {
  const Matrix& av = a.value();
  const double mx = av.maxCoeff();
  const Matrix w = (av.array() - mx).exp().matrix();
  const double total = w.sum();
  Matrix out(1, 1);
  out(0, 0) = mx + std::log(total / static_cast<double>(av.size()));
  Matrix soft = w / total;
  return a.tape->record(std::move(out), {a},
                        [ia = a.id, soft = std::move(soft)](Tape& t, const Matrix& g) {
                          t.accumulate_expr(ia, soft * g(0, 0));
                        });
}

/// Σ_r weights[r] · (−log softmax(logits_r)[targets_r]); rows with weight 0 are skipped.
inline Var weighted_cross_entropy(Var logits, std::span<const int> targets,
                                  std::span<const double> weights) {
  const Matrix& lv = logits.value();
  if (static_cast<std::size_t>(lv.rows()) != targets.size() || targets.size() != weights.size()) {
    throw DimensionError("weighted_cross_entropy: " + std::to_string(lv.rows()) + " rows, " +
                         std::to_string(targets.size()) + " targets, " +
                         std::to_string(weights.size()) + " weights");
  }
  Matrix probs = Matrix::Zero(lv.rows(), lv.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    const double w = weights[static_cast<std::size_t>(r)];
    if (w == 0.0) continue;
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= lv.cols()) throw std::out_of_range("weighted_cross_entropy: target id");
    const double mx = lv.row(r).maxCoeff();
    probs.row(r) = (lv.row(r).array() - mx).exp();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    total += w * (std::log(z) + mx - lv(r, tgt));
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> wt(weights.begin(), weights.end());
  return logits.tape->record(
      std::move(out), {logits},
      [il = logits.id, probs = std::move(probs), tg = std::move(tg), wt = std::move(wt)](
          Tape& t, const Matrix& g) {
        Matrix d = probs;
        for (Eigen::Index r = 0; r < d.rows(); ++r) {
          const double w = wt[static_cast<std::size_t>(r)];
          if (w == 0.0) continue;
          d(r, tg[static_cast<std::size_t>(r)]) -= 1.0;
          d.row(r) *= w * g(0, 0);
        }
        t.accumulate(il, d);
      });
}

/// Generic scalar function of scalar inputs with a caller-supplied gradient.
inline Var scalar_fn(std::initializer_list<Var> inputs, double value,
                     std::vector<double> partials) {
  if (inputs.size() != partials.size()) throw std::invalid_argument("scalar_fn: arity");
  std::vector<std::size_t> ids;
  for (const Var& v : inputs) {
    if (v.value().size() != 1) throw DimensionError("scalar_fn: inputs must be 1x1");
    ids.push_back(v.id);
  }
  Matrix out(1, 1);
  out(0, 0) = value;
  return inputs.begin()->tape->record(
      std::move(out), inputs,
      [ids = std::move(ids), partials = std::move(partials)](Tape& t, const Matrix& g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          t.accumulate(ids[i], Matrix::Constant(1, 1, partials[i] * g(0, 0)));
        }
      });
}

}  // namespace ad
}  // namespace predgen
