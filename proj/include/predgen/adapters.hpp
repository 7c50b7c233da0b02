#pragma once

// Task adapters: map generated-token states to a class distribution, or generated digit tokens
// to a real number.

#include "predgen/core/rng.hpp"
#include "predgen/losses.hpp"
#include "predgen/model/transformer.hpp"

#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <variant>

namespace predgen {

enum class ClsSpec { last_generated_token, mean_of_generated };

inline std::string to_string(ClsSpec s) {
  return s == ClsSpec::last_generated_token ? "last_generated_token" : "mean_of_generated";
}

inline ClsSpec parse_cls_spec(const std::string& s) {
  if (s == "last_generated_token") return ClsSpec::last_generated_token;
  if (s == "mean_of_generated") return ClsSpec::mean_of_generated;
  throw std::invalid_argument("unknown cls_spec '" + s + "'");
}

/// Linear map W (classes × d) applied to the CLS embedding of the generated span, then softmax.
struct ClassifierHead {
  static constexpr const char* kWeightName = "adapter.w";

  ParameterSet params;
  ClsSpec cls_spec = ClsSpec::last_generated_token;

  ClassifierHead() = default;
  ClassifierHead(int num_classes, int d_model, ClsSpec spec, Rng& rng, double init_std = 0.02)
      : cls_spec(spec) {
    if (num_classes < 2) throw std::invalid_argument("ClassifierHead: num_classes must be >= 2");
    Matrix w(num_classes, d_model);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = init_std * standard_normal(rng);
    params.add(kWeightName, std::move(w));
  }

  Parameter& weight() { return params.at(kWeightName); }
  const Parameter& weight() const { return params.at(kWeightName); }
  int num_classes() const { return static_cast<int>(weight().value.rows()); }
};

struct Prediction {
  enum class Kind { class_distribution, real_value };
  Kind kind = Kind::real_value;
  Matrix distribution;  // 1×classes when kind == class_distribution
  double value = 0.0;

  int argmax() const { return argmax_row(distribution, 0); }
};

class EmptySpanError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Matrix cls_embedding(const Matrix& span, ClsSpec spec) {
  if (span.rows() == 0) {
    throw EmptySpanError("adapt_classify: generation produced no tokens to classify");
  }
  if (spec == ClsSpec::last_generated_token) return span.bottomRows(1);
  Matrix out = span.colwise().mean();
  return out;
}

inline Matrix softmax_row(const Matrix& logits) {
  Matrix out = (logits.array() - logits.maxCoeff()).exp().matrix();
  out /= out.sum();
  return out;
}

inline Prediction adapt_classify(const HiddenStates& states, const ClassifierHead& head) {
  const Matrix cls = cls_embedding(states.values, head.cls_spec);
  Prediction p;
  p.kind = Prediction::Kind::class_distribution;
  p.distribution = softmax_row(cls * head.weight().value.transpose());
  return p;
}

/// Tape version: 1×classes logits from the generated-span states.
inline Var adapter_logits(Var span_states, Var weight, ClsSpec spec) {
  if (span_states.rows() == 0) {
    throw EmptySpanError("adapt_classify: generation produced no tokens to classify");
  }
  Var cls = spec == ClsSpec::last_generated_token
                ? ad::slice_rows(span_states, span_states.rows() - 1, 1)
                : ad::mean_rows(span_states);
  return ad::matmul_nt(cls, weight);
}

/// Cross-entropy of the adapter's class distribution against the gold class.
inline Var classification_director_loss(Var span_states, Var weight, ClsSpec spec, int gold) {
  Var logits = adapter_logits(span_states, weight, spec);
  const int target[1] = {gold};
  const double w[1] = {1.0};
  return ad::weighted_cross_entropy(logits, target, w);
}

// ----------------------------------------------------------------------------- numbers

class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

/// Parses ['-'] digits ['.' digits] up to the first EOS (or the end). The integer digits may be
/// omitted when a fraction follows (".5"). Error positions index the token sequence.
inline double decode_number(const TokenSequence& tokens, const Vocab& vocab = Vocab{}) {
  std::string text;
  std::size_t pos = 0;
  for (; pos < tokens.size(); ++pos) {
    const int id = tokens.ids[pos];
    if (id == Vocab::kEos) break;
    if (Vocab::is_special(id)) throw DecodeError("decode_number: special token", pos);
    const char c = vocab.symbol(id);
    if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-')) {
      throw DecodeError(std::string("decode_number: stray symbol '") + c + "'", pos);
    }
    text += c;
  }

  std::size_t i = 0;
  bool negative = false;
  if (i < text.size() && text[i] == '-') {
    negative = true;
    ++i;
  }
  const std::size_t int_begin = i;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
  if (i == int_begin && (i == text.size() || text[i] != '.')) {
    throw DecodeError("decode_number: expected digit", i);
  }
  double value = 0.0;
  for (std::size_t k = int_begin; k < i; ++k) value = value * 10.0 + (text[k] - '0');
  if (i < text.size()) {
    if (text[i] != '.') throw DecodeError("decode_number: expected '.'", i);
    ++i;
    const std::size_t frac_begin = i;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
    if (i == frac_begin) throw DecodeError("decode_number: expected digit after '.'", i);
    if (i < text.size()) throw DecodeError("decode_number: trailing symbol", i);
    // Parse the whole literal once so fractional digits round correctly.
    value = std::stod("0" + text.substr(int_begin, i - int_begin));
  }
  return negative ? -value : value;
}

inline Prediction decode_prediction(const TokenSequence& tokens) {
  Prediction p;
  p.kind = Prediction::Kind::real_value;
  p.value = decode_number(tokens);
  return p;
}

/// Fixed-point rendering with exactly `decimals` fractional digits, half away from zero.
/// No EOS is appended.
inline TokenSequence encode_number(double x, int decimals, const Vocab& vocab = Vocab{}) {
  if (decimals < 0 || decimals > 6) {
    throw std::invalid_argument("encode_number: decimals must lie in [0, 6]");
  }
  if (!std::isfinite(x) || std::abs(x) >= 1e6) {
    throw std::out_of_range("encode_number: |x| must be below 1e6");
  }
  const double scale = std::pow(10.0, decimals);
  const auto scaled = static_cast<long long>(std::round(std::abs(x) * scale));
  std::string digits = std::to_string(scaled);
  if (static_cast<int>(digits.size()) <= decimals) {
    digits.insert(0, static_cast<std::size_t>(decimals + 1) - digits.size(), '0');
  }
  std::string text;
  if (x < 0 && scaled != 0) text += '-';
  text += digits.substr(0, digits.size() - static_cast<std::size_t>(decimals));
  if (decimals > 0) {
    text += '.';
    text += digits.substr(digits.size() - static_cast<std::size_t>(decimals));
  }
  TokenSequence out;
  out.role = TokenSequence::Role::gold;
  out.ids = vocab.encode(text);
  return out;
}

/// Ordered-penalty director loss over the target span (same logits as the writer loss).
inline Var regression_director_loss(Var span_logits, const TokenSequence& gold,
                                    const OrderedPenalty& alpha) {
  return ordered_ce(span_logits, gold, alpha);
}

inline double regression_director_loss(const Matrix& span_logits, const TokenSequence& gold,
                                       const OrderedPenalty& alpha) {
  return ordered_ce(span_logits, gold, alpha);
}

}  // namespace predgen
