#pragma once

// Scheduled sampling: the probability of conditioning on the model's own tokens ramps linearly
// from 0 at step 0 to 1 at max_steps_for_sampling, then stays at 1.

#include "predgen/core/rng.hpp"
#include "predgen/model/vocab.hpp"

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <string>

namespace predgen {

enum class SamplingGranularity { sequence, token };

inline std::string to_string(SamplingGranularity g) {
  return g == SamplingGranularity::sequence ? "sequence" : "token";
}

inline SamplingGranularity parse_granularity(const std::string& s) {
  if (s == "sequence") return SamplingGranularity::sequence;
  if (s == "token") return SamplingGranularity::token;
  throw std::invalid_argument("unknown sampling_granularity '" + s + "'");
}

struct SamplingSchedule {
  long max_steps_for_sampling = 1000;
  SamplingGranularity granularity = SamplingGranularity::sequence;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_steps_for_sampling <= 0) {
      throw std::invalid_argument("max_steps_for_sampling must be positive");
    }
  }
};

inline double mixing_prob(const SamplingSchedule& schedule, long step) {
  if (step < 0) throw std::invalid_argument("mixing_prob: negative step");
  return std::min(1.0, static_cast<double>(step) /
                           static_cast<double>(schedule.max_steps_for_sampling));
}

/// Bernoulli(p) from one uniform draw. p = 0 and p = 1 are exact.
inline bool bernoulli(double p, Rng& rng) { return uniform01(rng) < p; }

/// One draw for the whole sequence: the generated sequence with probability p, else gold.
inline TokenSequence mix_sequence(const TokenSequence& gold, const TokenSequence& generated,
                                  double p, Rng& rng) {
  TokenSequence out = bernoulli(p, rng) ? generated : gold;
  return out;
}

/// Model's greedy token for the next position given the mixed prefix built so far.
using NextTokenProvider = std::function<int(const std::vector<int>& mixed_prefix)>;

struct TokenMix {
  TokenSequence tokens;
  std::vector<bool> from_model;  // per position: true when the model's token was used
};

/// Per-position Bernoulli(p). The provider is only queried at positions that take the model's
/// token, and always sees the mixed prefix.
inline TokenMix mix_token(const TokenSequence& gold, const NextTokenProvider& provider, double p,
                          Rng& rng) {
  TokenMix out;
  out.tokens.role = TokenSequence::Role::generated;
  out.tokens.ids.reserve(gold.size());
  out.from_model.reserve(gold.size());
  for (std::size_t t = 0; t < gold.size(); ++t) {
    const bool use_model = bernoulli(p, rng);
    out.from_model.push_back(use_model);
    out.tokens.ids.push_back(use_model ? provider(out.tokens.ids) : gold.ids[t]);
  }
  return out;
}

}  // namespace predgen
