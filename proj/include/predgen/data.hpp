#pragma once

// Seeded synthetic datasets sized for desk-scale runs, and CSV/JSONL ingestion.

#include "predgen/core/rng.hpp"
#include "predgen/model/vocab.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace predgen {

enum class TaskKind { classification, regression };
enum class Split { train, test };

inline std::string to_string(TaskKind k) {
  return k == TaskKind::classification ? "classification" : "regression";
}
inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct Example {
  std::string input_text;
  std::variant<int, double> target;
  Split split = Split::train;

  int class_id() const { return std::get<int>(target); }
  double value() const {
    return std::holds_alternative<int>(target) ? static_cast<double>(std::get<int>(target))
                                               : std::get<double>(target);
  }
};

enum class DatasetKind { toy_classification, toy_regression, arithmetic, file };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::toy_classification: return "toy_classification";
    case DatasetKind::toy_regression: return "toy_regression";
    case DatasetKind::arithmetic: return "arithmetic";
    case DatasetKind::file: return "file";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "toy_classification") return DatasetKind::toy_classification;
  if (s == "toy_regression") return DatasetKind::toy_regression;
  if (s == "arithmetic") return DatasetKind::arithmetic;
  if (s == "file") return DatasetKind::file;
  throw std::invalid_argument("unknown dataset kind '" + s + "'");
}

struct FileMapping {
  std::string format = "csv";  // csv | jsonl
  std::string text_field = "text";
  std::string target_field = "target";
  std::string split_field;     // optional; rows default to train
  TaskKind task = TaskKind::classification;
};

struct DatasetSpec {
  std::string name = "toy";
  DatasetKind kind = DatasetKind::toy_classification;
  int train_size = 800;
  int test_size = 200;
  std::uint64_t seed = 0;
  int classes = 4;
  int decimals = 2;
  double label_noise = 0.0;
  int max_operand = 9;
  std::string path;
  FileMapping mapping;

  TaskKind task() const {
    if (kind == DatasetKind::toy_classification) return TaskKind::classification;
    if (kind == DatasetKind::file) return mapping.task;
    return TaskKind::regression;
  }
};

// ------------------------------------------------------------------------------- toy words

namespace data_detail {

inline constexpr std::array<std::array<const char*, 3>, 8> kKeywords{{
    {"fun", "joy", "wow"},
    {"bad", "sad", "mad"},
    {"hot", "sun", "dry"},
    {"ice", "wet", "fog"},
    {"cat", "dog", "pet"},
    {"car", "bus", "van"},
    {"tea", "pie", "jam"},
    {"red", "tan", "ink"},
}};

inline constexpr std::array<const char*, 12> kFillers{"the", "a",   "it",   "was", "so",  "very",
                                                      "film", "day", "we", "saw", "one", "and"};

/// Draws `total` distinct texts from `make`, giving up after a generous number of attempts.
template <typename Make>
std::vector<std::pair<std::string, std::variant<int, double>>> distinct(int total, Make make) {
  std::vector<std::pair<std::string, std::variant<int, double>>> out;
  std::set<std::string> seen;
  const long budget = 200L * std::max(total, 1) + 10000;
  for (long attempt = 0; static_cast<int>(out.size()) < total; ++attempt) {
    if (attempt >= budget) {
      throw std::invalid_argument("dataset: cannot draw " + std::to_string(total) +
                                  " distinct examples from this generator");
    }
    auto item = make(static_cast<int>(out.size()));
    if (seen.insert(item.first).second) out.push_back(std::move(item));
  }
  return out;
}

inline std::vector<Example> split_examples(
    std::vector<std::pair<std::string, std::variant<int, double>>> items, int train_size,
    Rng& rng) {
  shuffle(items.begin(), items.end(), rng);
  std::vector<Example> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.push_back(Example{std::move(items[i].first), items[i].second,
                          static_cast<int>(i) < train_size ? Split::train : Split::test});
  }
  return out;
}

}  // namespace data_detail

/// Class given by which keyword appears; -1 when none does.
inline int keyword_rule(const std::string& text) {
  std::istringstream words(text);
  std::string w;
  while (words >> w) {
    for (std::size_t c = 0; c < data_detail::kKeywords.size(); ++c) {
      for (const char* k : data_detail::kKeywords[c]) {
        if (w == k) return static_cast<int>(c);
      }
    }
  }
  return -1;
}

/// Three filler words and one class keyword in random order. Classes are assigned round-robin
/// before shuffling, so the split is balanced to within one example per class.
inline std::vector<Example> gen_toy_classification(const DatasetSpec& spec) {
  if (spec.classes < 2 || spec.classes > 8) {
    throw std::invalid_argument("toy classification needs 2-8 classes");
  }
  if (spec.label_noise < 0.0 || spec.label_noise > 1.0) {
    throw std::invalid_argument("label_noise must lie in [0, 1]");
  }
  Rng rng = make_rng(spec.seed, 0x636c73ULL);
  const int total = spec.train_size + spec.test_size;
  auto items = data_detail::distinct(total, [&](int index) {
    const int cls = index % spec.classes;
    std::vector<std::string> words;
    for (int i = 0; i < 3; ++i) {
      words.emplace_back(data_detail::kFillers[uniform_index(rng, data_detail::kFillers.size())]);
    }
    const auto& bank = data_detail::kKeywords[static_cast<std::size_t>(cls)];
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(uniform_index(rng, 4)),
                 bank[uniform_index(rng, bank.size())]);
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    int label = cls;
    if (spec.label_noise > 0.0 && uniform01(rng) < spec.label_noise) {
      label = static_cast<int>((cls + 1 + static_cast<int>(uniform_index(
                                              rng, static_cast<std::uint64_t>(spec.classes - 1)))) %
                               spec.classes);
    }
    return std::make_pair(text, std::variant<int, double>(label));
  });
  return data_detail::split_examples(std::move(items), spec.train_size, rng);
}

/// Fraction of aligned positions holding the same token: |{i : a_i = b_i}| / max(|a|, |b|).
inline double overlap_score(const std::string& a, const std::string& b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) same += a[i] == b[i] ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(longest);
}

inline double round_to(double x, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(x * scale) / scale;
}

/// Pairs "abcd-abgh" of four letters from a-h. The number of matching positions is drawn
/// uniformly from 0-4, so every overlap level is equally common; the target is overlap_score.
inline std::vector<Example> gen_toy_regression(const DatasetSpec& spec) {
  if (spec.decimals < 1 || spec.decimals > 4) {
    throw std::invalid_argument("toy regression needs decimals in [1, 4]");
  }
  Rng rng = make_rng(spec.seed, 0x726567ULL);
  constexpr std::string_view pool = "abcdefgh";
  constexpr std::size_t width = 4;
  auto items = data_detail::distinct(spec.train_size + spec.test_size, [&](int) {
    std::string a(width, ' ');
    for (char& c : a) c = pool[uniform_index(rng, pool.size())];
    std::array<std::size_t, width> positions{0, 1, 2, 3};
    shuffle(positions.begin(), positions.end(), rng);
    const std::size_t matches = uniform_index(rng, width + 1);
    std::string b = a;
    for (std::size_t j = matches; j < width; ++j) {
      const std::size_t i = positions[j];
      // Any letter except a_i: offset by 1-7 within the pool.
      const std::size_t offset = 1 + uniform_index(rng, pool.size() - 1);
      b[i] = pool[(pool.find(a[i]) + offset) % pool.size()];
    }
    return std::make_pair(a + "-" + b,
                          std::variant<int, double>(round_to(overlap_score(a, b), spec.decimals)));
  });
  return data_detail::split_examples(std::move(items), spec.train_size, rng);
}

/// "a+b=" / "a-b=" with operands in [0, max_operand]; integer targets.
inline std::vector<Example> gen_arithmetic(const DatasetSpec& spec) {
  if (spec.max_operand < 1 || spec.max_operand > 99) {
    throw std::invalid_argument("arithmetic max_operand must lie in [1, 99]");
  }
  Rng rng = make_rng(spec.seed, 0x617269ULL);
  const auto range = static_cast<std::uint64_t>(spec.max_operand + 1);
  auto items = data_detail::distinct(spec.train_size + spec.test_size, [&](int) {
    const int a = static_cast<int>(uniform_index(rng, range));
    const int b = static_cast<int>(uniform_index(rng, range));
    const bool plus = uniform_index(rng, 2) == 0;
    const int result = plus ? a + b : a - b;
    return std::make_pair(std::to_string(a) + (plus ? "+" : "-") + std::to_string(b) + "=",
                          std::variant<int, double>(static_cast<double>(result)));
  });
  return data_detail::split_examples(std::move(items), spec.train_size, rng);
}

// ------------------------------------------------------------------------------- files

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RowError : public std::runtime_error {
 public:
  RowError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct LoadReport {
  std::vector<Example> examples;
  std::size_t replaced_symbols = 0;  // out-of-alphabet characters turned into spaces
  std::size_t affected_rows = 0;
};

namespace data_detail {

/// Splits one CSV record; quotes may wrap fields and "" escapes a quote.
inline std::vector<std::string> csv_fields(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw RowError("unterminated quoted field", line_no);
  out.push_back(std::move(cur));
  return out;
}

inline std::string sanitize(const std::string& text, LoadReport& report) {
  const Vocab vocab;
  std::string out = text;
  std::size_t replaced = 0;
  for (char& c : out) {
    if (!vocab.contains(c)) {
      c = ' ';
      ++replaced;
    }
  }
  report.replaced_symbols += replaced;
  report.affected_rows += replaced > 0 ? 1 : 0;
  return out;
}

inline std::variant<int, double> parse_target(const std::string& raw, TaskKind task,
                                              std::size_t line_no) {
  std::size_t used = 0;
  try {
    if (task == TaskKind::classification) {
      const int v = std::stoi(raw, &used);
      if (used != raw.size() || v < 0) throw std::invalid_argument(raw);
      return v;
    }
    const double v = std::stod(raw, &used);
    if (used != raw.size() || !std::isfinite(v)) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw RowError("unparseable target '" + raw + "'", line_no);
  }
}

inline Split parse_split(const std::string& raw, std::size_t line_no) {
  if (raw.empty() || raw == "train") return Split::train;
  if (raw == "test") return Split::test;
  throw RowError("split must be train or test, got '" + raw + "'", line_no);
}

}  // namespace data_detail

inline LoadReport load_file(const std::string& path, const FileMapping& mapping) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset file " + path);
  LoadReport report;

  if (mapping.format == "csv") {
    std::string header;
    if (!std::getline(in, header)) throw SchemaError(path + ": empty file, no header row");
    const auto columns = data_detail::csv_fields(header, 1);
    auto column = [&](const std::string& name, bool required) -> long {
      const auto it = std::find(columns.begin(), columns.end(), name);
      if (it == columns.end()) {
        if (required) throw SchemaError(path + ": missing column '" + name + "'");
        return -1;
      }
      return it - columns.begin();
    };
    const long text_col = column(mapping.text_field, true);
    const long target_col = column(mapping.target_field, true);
    const long split_col = mapping.split_field.empty() ? -1 : column(mapping.split_field, true);
    std::string line;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line == "\r") continue;
      const auto fields = data_detail::csv_fields(line, line_no);
      if (fields.size() != columns.size()) {
        throw RowError("expected " + std::to_string(columns.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
      }
      Example ex;
      ex.input_text = data_detail::sanitize(fields[static_cast<std::size_t>(text_col)], report);
      ex.target = data_detail::parse_target(fields[static_cast<std::size_t>(target_col)],
                                            mapping.task, line_no);
      if (split_col >= 0) {
        ex.split = data_detail::parse_split(fields[static_cast<std::size_t>(split_col)], line_no);
      }
      report.examples.push_back(std::move(ex));
    }
    return report;
  }

  if (mapping.format == "jsonl") {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json row;
      try {
        row = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw RowError(std::string("invalid JSON: ") + e.what(), line_no);
      }
      for (const std::string& f : {mapping.text_field, mapping.target_field}) {
        if (!row.contains(f)) throw SchemaError(path + ": missing field '" + f + "'");
      }
      if (!mapping.split_field.empty() && !row.contains(mapping.split_field)) {
        throw SchemaError(path + ": missing field '" + mapping.split_field + "'");
      }
      Example ex;
      ex.input_text = data_detail::sanitize(row.at(mapping.text_field).get<std::string>(), report);
      const auto& t = row.at(mapping.target_field);
      const std::string raw = t.is_string() ? t.get<std::string>() : t.dump();
      ex.target = data_detail::parse_target(raw, mapping.task, line_no);
      if (!mapping.split_field.empty()) {
        ex.split = data_detail::parse_split(row.at(mapping.split_field).get<std::string>(), line_no);
      }
      report.examples.push_back(std::move(ex));
    }
    return report;
  }
  throw std::invalid_argument("unknown dataset format '" + mapping.format + "'");
}

inline std::vector<Example> make_dataset(const DatasetSpec& spec) {
  switch (spec.kind) {
    case DatasetKind::toy_classification: return gen_toy_classification(spec);
    case DatasetKind::toy_regression: return gen_toy_regression(spec);
    case DatasetKind::arithmetic: return gen_arithmetic(spec);
    case DatasetKind::file: return load_file(spec.path, spec.mapping).examples;
  }
  throw std::logic_error("make_dataset: bad kind");
}

inline std::vector<Example> select(const std::vector<Example>& all, Split split) {
  std::vector<Example> out;
  std::copy_if(all.begin(), all.end(), std::back_inserter(out),
               [split](const Example& e) { return e.split == split; });
  return out;
}

}  // namespace predgen
