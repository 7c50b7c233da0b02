#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace predgen {

/// Token ids with the role they play in a training example.
struct TokenSequence {
  enum class Role { input, gold, generated };

  std::vector<int> ids;
  Role role = Role::input;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

class VocabError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Fixed character vocabulary. Specials occupy ids 0-3.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kSep = 2;
  static constexpr int kEos = 3;
  static constexpr std::string_view kAlphabet = "0123456789.-abcdefghijklmnopqrstuvwxyz +=";

  Vocab() {
    table_.fill(-1);
    for (std::size_t i = 0; i < kAlphabet.size(); ++i) {
      table_[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i) + kFirstSymbol;
    }
  }

  static constexpr int size() { return kFirstSymbol + static_cast<int>(kAlphabet.size()); }

  bool contains(char c) const { return table_[static_cast<unsigned char>(c)] >= 0; }

  int id(char c) const {
    const int v = table_[static_cast<unsigned char>(c)];
    if (v < 0) throw VocabError(std::string("symbol outside alphabet: '") + c + "'");
    return v;
  }

  /// Symbol for a non-special id.
  char symbol(int id) const {
    if (id < kFirstSymbol || id >= size()) {
      throw VocabError("id " + std::to_string(id) + " is not a printable symbol");
    }
    return kAlphabet[static_cast<std::size_t>(id - kFirstSymbol)];
  }

  static bool is_special(int id) { return id >= 0 && id < kFirstSymbol; }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(id(c));
    return out;
  }

  /// Decodes printable ids; specials render as <pad>, <bos>, <sep>, <eos>.
  std::string decode(const std::vector<int>& ids) const {
    static constexpr std::array<std::string_view, 4> names{"<pad>", "<bos>", "<sep>", "<eos>"};
    std::string out;
    for (int id : ids) {
      if (is_special(id)) {
        out += names[static_cast<std::size_t>(id)];
      } else {
        out += symbol(id);
      }
    }
    return out;
  }

 private:
  static constexpr int kFirstSymbol = 4;
  std::array<int, 256> table_{};
};

}  // namespace predgen
