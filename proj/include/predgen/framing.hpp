#pragma once

// Sequence layout shared by every regime: X tokens, SEP, then the target region.

#include "predgen/adapters.hpp"
#include "predgen/data.hpp"

namespace predgen {

struct TargetFormat {
  TaskKind task = TaskKind::classification;
  int decimals = 2;
};

/// X followed by SEP.
inline TokenSequence frame_input(const std::string& text, const Vocab& vocab = Vocab{}) {
  TokenSequence seq;
  seq.role = TokenSequence::Role::input;
  seq.ids = vocab.encode(text);
  seq.ids.push_back(Vocab::kSep);
  return seq;
}

/// Gold target tokens, EOS-terminated: the class digit, or the fixed-point number.
inline TokenSequence gold_target(const Example& ex, const TargetFormat& fmt,
                                 const Vocab& vocab = Vocab{}) {
  TokenSequence out;
  out.role = TokenSequence::Role::gold;
  if (fmt.task == TaskKind::classification) {
    const int cls = ex.class_id();
    if (cls < 0 || cls > 9) throw std::out_of_range("class label must be a single digit 0-9");
    out.ids.push_back(vocab.id(static_cast<char>('0' + cls)));
  } else {
    out = encode_number(ex.value(), fmt.decimals, vocab);
  }
  out.ids.push_back(Vocab::kEos);
  return out;
}

/// Class id read from generated tokens ("3" then EOS); -1 when malformed.
inline int decode_class(const TokenSequence& generated, int num_classes) {
  try {
    const double v = decode_number(generated);
    if (v != std::floor(v) || v < 0 || v >= num_classes) return -1;
    return static_cast<int>(v);
  } catch (const DecodeError&) {
    return -1;
  }
}

/// Full teacher-forced sequence: [X, SEP, target...].
inline std::vector<int> concat(const TokenSequence& prefix, const TokenSequence& target) {
  std::vector<int> seq = prefix.ids;
  seq.insert(seq.end(), target.ids.begin(), target.ids.end());
  return seq;
}

}  // namespace predgen
