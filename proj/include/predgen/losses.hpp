#pragma once

// Writer / director losses and the ways of combining them.
//
// The WDAL combiner is evaluated in its max/exp form,
//   max(L_W², L_D²) · exp(−|log L_W − log L_D|),
// after clamping both inputs below at eps. For positive inputs this equals L_W · L_D.

#include "predgen/core/autodiff.hpp"
#include "predgen/model/vocab.hpp"

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace predgen {

inline constexpr double kDefaultEpsClamp = 1e-8;

enum class Combiner { wdal, multiplicative, adaptive, director_only };

inline std::string to_string(Combiner c) {
  switch (c) {
    case Combiner::wdal: return "wdal";
    case Combiner::multiplicative: return "multiplicative";
    case Combiner::adaptive: return "adaptive";
    case Combiner::director_only: return "director_only";
  }
  return "?";
}

inline Combiner parse_combiner(const std::string& s) {
  if (s == "wdal") return Combiner::wdal;
  if (s == "multiplicative") return Combiner::multiplicative;
  if (s == "adaptive") return Combiner::adaptive;
  if (s == "director_only") return Combiner::director_only;
  throw std::invalid_argument("unknown loss combiner '" + s + "'");
}

struct LossBreakdown {
  double writer = 0.0;
  double director = 0.0;
  double combined = 0.0;
  Combiner combiner = Combiner::wdal;
};

/// Position weights α₁ ≥ α₂ ≥ … > 0 for the ordered cross-entropy.
struct OrderedPenalty {
  std::vector<double> alpha;

  void validate() const {
    for (std::size_t i = 0; i < alpha.size(); ++i) {
      if (!(alpha[i] > 0.0) || !std::isfinite(alpha[i])) {
        throw std::invalid_argument("ordered_alpha[" + std::to_string(i) + "] must be positive");
      }
      if (i > 0 && alpha[i] > alpha[i - 1]) {
        throw std::invalid_argument("ordered_alpha must be non-increasing (index " +
                                    std::to_string(i) + ")");
      }
    }
  }

  static OrderedPenalty uniform(std::size_t m) { return {std::vector<double>(m, 1.0)}; }
};

namespace detail {

inline void check_target_length(const char* op, Eigen::Index rows, const TokenSequence& gold) {
  if (rows < 1) throw std::invalid_argument(std::string(op) + ": no positions");
  if (static_cast<std::size_t>(rows) != gold.size()) {
    throw DimensionError(std::string(op) + ": logits have " + std::to_string(rows) +
                         " positions, gold has " + std::to_string(gold.size()));
  }
}

inline double row_ce(const Matrix& logits, Eigen::Index row, int target) {
  const double mx = logits.row(row).maxCoeff();
  const double lse = mx + std::log((logits.row(row).array() - mx).exp().sum());
  return lse - logits(row, target);
}

inline std::vector<double> writer_weights(const TokenSequence& gold) {
  std::vector<double> w(gold.size(), 0.0);
  std::size_t live = 0;
  for (int id : gold.ids) live += id != Vocab::kPad ? 1 : 0;
  if (live == 0) throw std::invalid_argument("writer_ce: every gold position is PAD");
  for (std::size_t t = 0; t < gold.size(); ++t) {
    if (gold.ids[t] != Vocab::kPad) w[t] = 1.0 / static_cast<double>(live);
  }
  return w;
}

inline std::vector<double> ordered_weights(const TokenSequence& gold, const OrderedPenalty& pen) {
  if (pen.alpha.size() < gold.size()) {
    throw std::invalid_argument("ordered_ce: alpha has " + std::to_string(pen.alpha.size()) +
                                " weights for " + std::to_string(gold.size()) + " positions");
  }
  pen.validate();
  std::vector<double> w(gold.size());
  for (std::size_t t = 0; t < gold.size(); ++t) {
    w[t] = gold.ids[t] == Vocab::kPad ? 0.0 : pen.alpha[t];
  }
  return w;
}

inline double weighted_ce(const Matrix& logits, const TokenSequence& gold,
                          const std::vector<double>& w) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double wr = w[static_cast<std::size_t>(r)];
    if (wr != 0.0) total += wr * row_ce(logits, r, gold.ids[static_cast<std::size_t>(r)]);
  }
  return total;
}

}  // namespace detail

/// Mean token cross-entropy over non-PAD positions.
inline double writer_ce(const Matrix& logits, const TokenSequence& gold) {
  detail::check_target_length("writer_ce", logits.rows(), gold);
  return detail::weighted_ce(logits, gold, detail::writer_weights(gold));
}

inline Var writer_ce(Var logits, const TokenSequence& gold) {
  detail::check_target_length("writer_ce", logits.rows(), gold);
  const auto w = detail::writer_weights(gold);
  return ad::weighted_cross_entropy(logits, gold.ids, w);
}

/// Σ α_t · CE_t over the target positions.
inline double ordered_ce(const Matrix& logits, const TokenSequence& gold,
                         const OrderedPenalty& penalty) {
  detail::check_target_length("ordered_ce", logits.rows(), gold);
  return detail::weighted_ce(logits, gold, detail::ordered_weights(gold, penalty));
}

inline Var ordered_ce(Var logits, const TokenSequence& gold, const OrderedPenalty& penalty) {
  detail::check_target_length("ordered_ce", logits.rows(), gold);
  const auto w = detail::ordered_weights(gold, penalty);
  return ad::weighted_cross_entropy(logits, gold.ids, w);
}

namespace detail {
inline void check_finite_pair(const char* op, double lw, double ld) {
  if (!std::isfinite(lw) || !std::isfinite(ld)) {
    throw NumericError(std::string(op) + ": non-finite input (" + std::to_string(lw) + ", " +
                       std::to_string(ld) + ")");
  }
}
}  // namespace detail

inline double wdal(double lw, double ld, double eps = kDefaultEpsClamp) {
  detail::check_finite_pair("wdal", lw, ld);
  const double a = std::max(lw, eps);
  const double b = std::max(ld, eps);
  const double authority = std::max(a * a, b * b);
  const double penalty = std::exp(-std::abs(std::log(a) - std::log(b)));
  return authority * penalty;
}

/// Gradient of the max/exp form. At an exact tie the subgradient element with weight ½ is used
/// for the max term; the exponential term has zero derivative there. Clamped inputs get zero.
inline std::pair<double, double> wdal_grad(double lw, double ld, double eps = kDefaultEpsClamp) {
  detail::check_finite_pair("wdal_grad", lw, ld);
  const double a = std::max(lw, eps);
  const double b = std::max(ld, eps);
  const double authority = std::max(a * a, b * b);
  const double log_gap = std::log(a) - std::log(b);
  const double penalty = std::exp(-std::abs(log_gap));

  double d_auth_a = 0.0;
  double d_auth_b = 0.0;
  double d_pen_a = 0.0;
  double d_pen_b = 0.0;
  if (a == b) {
    constexpr double weight = 0.5;
    d_auth_a = weight * 2.0 * a;
    d_auth_b = (1.0 - weight) * 2.0 * b;
  } else {
    if (a > b) {
      d_auth_a = 2.0 * a;
    } else {
      d_auth_b = 2.0 * b;
    }
    // d|log a − log b|/da = ±1/a, and the penalty is exp(−|·|).
    const double sign = log_gap >= 0.0 ? 1.0 : -1.0;
    d_pen_a = -penalty * sign / a;
    d_pen_b = penalty * sign / b;
  }
  double ga = d_auth_a * penalty + authority * d_pen_a;
  double gb = d_auth_b * penalty + authority * d_pen_b;
  if (lw < eps) ga = 0.0;
  if (ld < eps) gb = 0.0;
  return {ga, gb};
}

inline double multiplicative(double lw, double ld) { return lw * ld; }

/// Running magnitudes for the adaptive combiner.
struct AdaptiveState {
  double ema_writer = 1.0;
  double ema_director = 1.0;
  double decay = 0.99;

  /// Weight on L_W: inverse to the writer's running magnitude.
  double writer_weight() const { return ema_director / (ema_writer + ema_director); }

  void update(double lw, double ld) {
    ema_writer = decay * ema_writer + (1.0 - decay) * std::abs(lw);
    ema_director = decay * ema_director + (1.0 - decay) * std::abs(ld);
  }
};

/// w·L_W + (1−w)·L_D with w from the state before this call; the state is then updated.
inline double adaptive(double lw, double ld, AdaptiveState& state) {
  const double w = state.writer_weight();
  state.update(lw, ld);
  return w * lw + (1.0 - w) * ld;
}

inline double combine(Combiner c, double lw, double ld, AdaptiveState& state,
                      double eps = kDefaultEpsClamp) {
  switch (c) {
    case Combiner::wdal: return wdal(lw, ld, eps);
    case Combiner::multiplicative: return multiplicative(lw, ld);
    case Combiner::adaptive: return adaptive(lw, ld, state);
    case Combiner::director_only: return ld;
  }
  throw std::logic_error("combine: bad combiner");
}

/// Tape version of combine(); the adaptive weight is a constant w.r.t. differentiation.
inline Var combine(Combiner c, Var lw, Var ld, AdaptiveState& state,
                   double eps = kDefaultEpsClamp) {
  const double a = lw.scalar();
  const double b = ld.scalar();
  switch (c) {
    case Combiner::wdal: {
      const auto [ga, gb] = wdal_grad(a, b, eps);
      return ad::scalar_fn({lw, ld}, wdal(a, b, eps), {ga, gb});
    }
    case Combiner::multiplicative:
      return ad::scalar_fn({lw, ld}, multiplicative(a, b), {b, a});
    case Combiner::adaptive: {
      const double w = state.writer_weight();
      const double value = adaptive(a, b, state);
      return ad::scalar_fn({lw, ld}, value, {w, 1.0 - w});
    }
    case Combiner::director_only:
      return ld;
  }
  throw std::logic_error("combine: bad combiner");
}

}  // namespace predgen
