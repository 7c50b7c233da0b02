#pragma once

// Pre-norm decoder-only transformer over the character vocabulary.
//
// Layout per block: x += W_o · attn(LN1(x)); x += W_2 · gelu(W_1 · LN2(x)). Positional embeddings
// are learned, the output head is untied from the token embedding, and the states exposed to
// callers are the final-LayerNorm outputs that feed the head.

#include "predgen/core/autodiff.hpp"
#include "predgen/core/rng.hpp"
#include "predgen/model/vocab.hpp"

#include <span>
#include <string>
#include <vector>

namespace predgen {

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int context_len = 32;
  int vocab_size = Vocab::size();
  std::uint64_t seed = 0;

  void validate() const {
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || context_len <= 0 || vocab_size <= 0) {
      throw std::invalid_argument("ModelConfig: all extents must be positive");
    }
    if (d_model % n_heads != 0) {
      throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (vocab_size < Vocab::size()) {
      throw std::invalid_argument("ModelConfig: vocab_size smaller than the alphabet");
    }
  }
  bool operator==(const ModelConfig&) const = default;
};

class ContextOverflowError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Per-token representations for a span starting at `span_offset` in the full sequence.
struct HiddenStates {
  Matrix values;
  std::size_t span_offset = 0;

  Eigen::Index length() const { return values.rows(); }
  bool empty() const { return values.rows() == 0; }
};

struct Model {
  ModelConfig config;
  ParameterSet params;
};

namespace detail {
inline std::string layer_name(int layer, const char* leaf) {
  return "layers." + std::to_string(layer) + "." + leaf;
}

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double std, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * standard_normal(rng);
  return m;
}
}  // namespace detail

/// Gaussian(0, 0.02) weights from config.seed; LayerNorm gains one, biases zero.
inline Model init_model(const ModelConfig& config) {
  config.validate();
  Model model{config, {}};
  Rng rng = make_rng(config.seed, /*stream=*/0x6d6f64656cULL);
  const int d = config.d_model;
  const int v = config.vocab_size;
  constexpr double std = 0.02;
  auto& p = model.params;
  p.add("tok_emb", detail::gaussian(v, d, std, rng));
  p.add("pos_emb", detail::gaussian(config.context_len, d, std, rng));
  for (int l = 0; l < config.n_layers; ++l) {
    p.add(detail::layer_name(l, "ln1.gain"), Matrix::Ones(1, d));
    p.add(detail::layer_name(l, "ln1.bias"), Matrix::Zero(1, d));
    p.add(detail::layer_name(l, "attn.w_qkv"), detail::gaussian(d, 3 * d, std, rng));
    p.add(detail::layer_name(l, "attn.b_qkv"), Matrix::Zero(1, 3 * d));
    p.add(detail::layer_name(l, "attn.w_out"), detail::gaussian(d, d, std, rng));
    p.add(detail::layer_name(l, "attn.b_out"), Matrix::Zero(1, d));
    p.add(detail::layer_name(l, "ln2.gain"), Matrix::Ones(1, d));
    p.add(detail::layer_name(l, "ln2.bias"), Matrix::Zero(1, d));
    p.add(detail::layer_name(l, "mlp.w_in"), detail::gaussian(d, 4 * d, std, rng));
    p.add(detail::layer_name(l, "mlp.b_in"), Matrix::Zero(1, 4 * d));
    p.add(detail::layer_name(l, "mlp.w_out"), detail::gaussian(4 * d, d, std, rng));
    p.add(detail::layer_name(l, "mlp.b_out"), Matrix::Zero(1, d));
  }
  p.add("ln_f.gain", Matrix::Ones(1, d));
  p.add("ln_f.bias", Matrix::Zero(1, d));
  p.add("head.w", detail::gaussian(d, v, std, rng));
  p.add("head.b", Matrix::Zero(1, v));
  return model;
}

/// Tape outputs of one forward pass: logits L×|V| and final states L×d.
struct ForwardVars {
  Var logits;
  Var states;
};

inline ForwardVars forward(Tape& tape, Model& model, std::span<const int> ids) {
  const ModelConfig& cfg = model.config;
  if (ids.empty()) throw std::invalid_argument("forward: empty input");
  if (static_cast<int>(ids.size()) > cfg.context_len) {
    throw ContextOverflowError("forward: " + std::to_string(ids.size()) +
                               " tokens exceed context_len " + std::to_string(cfg.context_len));
  }
  auto& p = model.params;
  const auto len = static_cast<Eigen::Index>(ids.size());
  Var x = ad::add(ad::embedding(tape.param(p.at("tok_emb")), ids),
                  ad::slice_rows(tape.param(p.at("pos_emb")), 0, len));
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto P = [&](const char* leaf) { return tape.param(p.at(detail::layer_name(l, leaf))); };
    Var h = ad::layer_norm(x, P("ln1.gain"), P("ln1.bias"));
    Var qkv = ad::add_row(ad::matmul(h, P("attn.w_qkv")), P("attn.b_qkv"));
    Var att = ad::causal_attention(qkv, cfg.n_heads);
    x = ad::add(x, ad::add_row(ad::matmul(att, P("attn.w_out")), P("attn.b_out")));
    Var h2 = ad::layer_norm(x, P("ln2.gain"), P("ln2.bias"));
    Var mid = ad::gelu(ad::add_row(ad::matmul(h2, P("mlp.w_in")), P("mlp.b_in")));
    x = ad::add(x, ad::add_row(ad::matmul(mid, P("mlp.w_out")), P("mlp.b_out")));
  }
  Var states = ad::layer_norm(x, tape.param(p.at("ln_f.gain")), tape.param(p.at("ln_f.bias")));
  Var logits = ad::add_row(ad::matmul(states, tape.param(p.at("head.w"))),
                           tape.param(p.at("head.b")));
  return {logits, states};
}

struct ForwardResult {
  Matrix logits;
  HiddenStates states;
};

/// Gradient-free forward pass.
inline ForwardResult forward(const Model& model, std::span<const int> ids) {
  Tape tape(/*grad_enabled=*/false);
  // Parameters are only read on a gradient-free tape.
  ForwardVars out = forward(tape, const_cast<Model&>(model), ids);
  return {out.logits.value(), HiddenStates{out.states.value(), 0}};
}

inline ForwardResult forward(const Model& model, const TokenSequence& ids) {
  return forward(model, std::span<const int>(ids.ids));
}

/// Index of the largest entry; ties resolve to the lowest index.
inline int argmax_row(const Matrix& m, Eigen::Index row) {
  int best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c) {
    if (m(row, c) > m(row, best)) best = static_cast<int>(c);
  }
  return best;
}

struct Generation {
  TokenSequence tokens;   // generated ids, EOS included when produced
  HiddenStates states;    // one row per generated token, offset = prefix length
};

struct GenerateOptions {
  int max_new = 0;
  bool stop_at_eos = true;
  bool want_states = true;
};

/// Greedy decoding after `prefix`. States are the rows of the generated tokens in one final
/// forward pass over prefix + generated.
inline Generation generate(const Model& model, const TokenSequence& prefix,
                           const GenerateOptions& opts) {
  if (opts.max_new < 0) throw std::invalid_argument("generate: max_new must be >= 0");
  if (static_cast<int>(prefix.size()) + opts.max_new > model.config.context_len) {
    throw ContextOverflowError("generate: prefix " + std::to_string(prefix.size()) + " + " +
                               std::to_string(opts.max_new) + " new tokens exceed context_len " +
                               std::to_string(model.config.context_len));
  }
  Generation out;
  out.tokens.role = TokenSequence::Role::generated;
  out.states.span_offset = prefix.size();
  out.states.values = Matrix(0, model.config.d_model);
  if (opts.max_new == 0) return out;
  if (prefix.empty()) throw std::invalid_argument("generate: empty prefix");

  std::vector<int> seq = prefix.ids;
  for (int step = 0; step < opts.max_new; ++step) {
    const ForwardResult fr = forward(model, std::span<const int>(seq));
    const int next = argmax_row(fr.logits, fr.logits.rows() - 1);
    seq.push_back(next);
    out.tokens.ids.push_back(next);
    if (opts.stop_at_eos && next == Vocab::kEos) break;
  }
  if (opts.want_states) {
    const ForwardResult fr = forward(model, std::span<const int>(seq));
    const auto m = static_cast<Eigen::Index>(out.tokens.size());
    out.states.values = fr.states.values.bottomRows(m);
  }
  return out;
}

inline Generation generate(const Model& model, const TokenSequence& prefix, int max_new) {
  return generate(model, prefix, GenerateOptions{max_new, true, true});
}

enum class PoolSpec { last_token, mean };

/// Deterministic reduction of n×d states to a 1×d vector.
inline Matrix pool(const HiddenStates& states, PoolSpec spec) {
  if (states.empty()) throw std::invalid_argument("pool: empty states");
  if (spec == PoolSpec::last_token) {
    Matrix out = states.values.bottomRows(1);
    return out;
  }
  Matrix out = states.values.colwise().mean();
  return out;
}

/// Sum over target positions of log P(y_t | prefix) from a single teacher-forced pass.
/// `prefix` must be non-empty; the target is appended to it.
inline double sequence_log_prob(const Model& model, const std::vector<int>& prefix,
                                const std::vector<int>& target) {
  std::vector<int> seq = prefix;
  seq.insert(seq.end(), target.begin(), target.end());
  seq.pop_back();
  const ForwardResult fr = forward(model, std::span<const int>(seq));
  double total = 0.0;
  const auto start = static_cast<Eigen::Index>(prefix.size()) - 1;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const auto row = start + static_cast<Eigen::Index>(t);
    const double mx = fr.logits.row(row).maxCoeff();
    const double lse = mx + std::log((fr.logits.row(row).array() - mx).exp().sum());
    total += fr.logits(row, target[t]) - lse;
  }
  return total;
}

}  // namespace predgen
