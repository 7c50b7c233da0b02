#pragma once

// Run configuration: a flat JSON document with a few nested sections, parsed under a strict
// schema (unknown keys and regime-inconsistent keys are rejected with the key's name).

#include "predgen/adapters.hpp"
#include "predgen/data.hpp"
#include "predgen/losses.hpp"
#include "predgen/mi.hpp"
#include "predgen/model/transformer.hpp"
#include "predgen/sampling.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

namespace predgen {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Regime { predictor, generator, predgen };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::predictor: return "predictor";
    case Regime::generator: return "generator";
    case Regime::predgen: return "predgen";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "predictor") return Regime::predictor;
  if (s == "generator") return Regime::generator;
  if (s == "predgen") return Regime::predgen;
  throw ConfigError("regime: unknown value '" + s + "' (expected predictor|generator|predgen)");
}

/// mean: writer loss averaged over target positions; sum: summed (matches all-ones ordered CE).
enum class WriterReduction { mean, sum };

struct OptimizerConfig {
  double learning_rate = 3e-4;
  int steps = 1500;
  int batch_size = 8;
};

struct RunConfig {
  Regime regime = Regime::predgen;
  std::uint64_t seed = 0;
  ModelConfig model;
  DatasetSpec dataset;
  bool dataset_seed_explicit = false;

  // task
  TaskKind task = TaskKind::classification;
  int num_classes = 4;
  int decimals = 2;
  ClsSpec cls_spec = ClsSpec::last_generated_token;

  // schedule
  SamplingSchedule schedule;
  std::optional<double> sampling_p;  // constant mixing probability overriding the ramp

  // losses
  Combiner combiner = Combiner::wdal;
  std::vector<double> ordered_alpha{1.67, 1.33, 1.01, 1.00};
  double eps_clamp = kDefaultEpsClamp;
  WriterReduction writer_reduction = WriterReduction::mean;

  OptimizerConfig optimizer;
  PredictorPool pooling = PredictorPool::last_token;
  int eval_every = 0;  // 0: evaluate once at the end
  MineConfig mine;

  /// Dataset with the run-level task settings applied.
  DatasetSpec effective_dataset() const {
    DatasetSpec d = dataset;
    d.classes = num_classes;
    d.decimals = decimals;
    if (!dataset_seed_explicit) d.seed = seed;
    if (d.kind == DatasetKind::file) d.mapping.task = task;
    return d;
  }

  ModelConfig effective_model() const {
    ModelConfig m = model;
    m.seed = seed;
    return m;
  }

  SamplingSchedule effective_schedule() const {
    SamplingSchedule s = schedule;
    s.seed = seed;
    return s;
  }

  /// α for `m` target positions: the configured prefix, continued with its last value.
  OrderedPenalty penalty(std::size_t m) const {
    OrderedPenalty p{ordered_alpha};
    while (p.alpha.size() < m) p.alpha.push_back(p.alpha.empty() ? 1.0 : p.alpha.back());
    return p;
  }
};

namespace config_detail {

using nlohmann::json;

inline void reject_unknown(const json& obj, const std::string& where,
                           std::initializer_list<const char*> allowed) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!ok.count(it.key())) {
      throw ConfigError("unknown key '" + where + it.key() + "'");
    }
  }
}

template <typename T>
T get(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + where + key + "' has the wrong type: " + obj.at(key).dump());
  }
}

inline std::uint64_t get_seed(const json& obj, const char* key, const std::string& where,
                              std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError("key '" + where + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline json object_section(const json& root, const char* key) {
  if (!root.contains(key)) return json::object();
  if (!root.at(key).is_object()) throw ConfigError("key '" + std::string(key) + "' must be an object");
  return root.at(key);
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

}  // namespace config_detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
  using namespace config_detail;
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(root, "",
                 {"regime", "seed", "model", "dataset", "task", "num_classes", "decimals",
                  "cls_spec", "max_steps_for_sampling", "sampling_granularity", "sampling_p",
                  "loss", "ordered_alpha", "eps_clamp", "writer_reduction", "optimizer",
                  "pooling", "eval_every", "mine"});
  if (!root.contains("regime")) throw ConfigError("missing required key 'regime'");

  RunConfig cfg;
  cfg.regime = parse_regime(get<std::string>(root, "regime", "", ""));
  cfg.seed = get_seed(root, "seed", "", 0);

  const json model = object_section(root, "model");
  reject_unknown(model, "model.", {"d_model", "n_layers", "n_heads", "context_len"});
  cfg.model.d_model = get<int>(model, "d_model", "model.", cfg.model.d_model);
  cfg.model.n_layers = get<int>(model, "n_layers", "model.", cfg.model.n_layers);
  cfg.model.n_heads = get<int>(model, "n_heads", "model.", cfg.model.n_heads);
  cfg.model.context_len = get<int>(model, "context_len", "model.", cfg.model.context_len);
  wrap("model", [&] { cfg.model.validate(); return 0; });

  const json ds = object_section(root, "dataset");
  reject_unknown(ds, "dataset.",
                 {"name", "kind", "train_size", "test_size", "seed", "label_noise", "max_operand",
                  "path", "format", "text_field", "target_field", "split_field"});
  if (ds.contains("kind")) {
    cfg.dataset.kind = wrap("dataset.kind", [&] {
      return parse_dataset_kind(get<std::string>(ds, "kind", "dataset.", ""));
    });
  }
  cfg.dataset.name = get<std::string>(ds, "name", "dataset.", to_string(cfg.dataset.kind));
  cfg.dataset.train_size = get<int>(ds, "train_size", "dataset.", cfg.dataset.train_size);
  cfg.dataset.test_size = get<int>(ds, "test_size", "dataset.", cfg.dataset.test_size);
  cfg.dataset_seed_explicit = ds.contains("seed");
  cfg.dataset.seed = get_seed(ds, "seed", "dataset.", 0);
  cfg.dataset.label_noise = get<double>(ds, "label_noise", "dataset.", 0.0);
  cfg.dataset.max_operand = get<int>(ds, "max_operand", "dataset.", cfg.dataset.max_operand);
  cfg.dataset.path = get<std::string>(ds, "path", "dataset.", "");
  cfg.dataset.mapping.format = get<std::string>(ds, "format", "dataset.", "csv");
  cfg.dataset.mapping.text_field = get<std::string>(ds, "text_field", "dataset.", "text");
  cfg.dataset.mapping.target_field = get<std::string>(ds, "target_field", "dataset.", "target");
  cfg.dataset.mapping.split_field = get<std::string>(ds, "split_field", "dataset.", "");
  if (cfg.dataset.train_size < 1 || cfg.dataset.test_size < 0) {
    throw ConfigError("key 'dataset.train_size' must be >= 1 and 'dataset.test_size' >= 0");
  }
  if (cfg.dataset.label_noise < 0.0 || cfg.dataset.label_noise > 1.0) {
    throw ConfigError("key 'dataset.label_noise' must lie in [0, 1]");
  }
  if (cfg.dataset.kind == DatasetKind::file && cfg.dataset.path.empty()) {
    throw ConfigError("key 'dataset.path' is required for kind=file");
  }
  if (cfg.dataset.max_operand < 0 || cfg.dataset.max_operand > 99) {
    throw ConfigError("key 'dataset.max_operand' must lie in [0, 99]");
  }

  // task
  if (cfg.dataset.kind == DatasetKind::file) {
    if (!root.contains("task")) throw ConfigError("key 'task' is required for file datasets");
  }
  cfg.task = cfg.dataset.task();
  if (root.contains("task")) {
    const std::string t = get<std::string>(root, "task", "", "");
    if (t != "classification" && t != "regression") {
      throw ConfigError("key 'task' must be classification|regression, got '" + t + "'");
    }
    const TaskKind declared = t == "classification" ? TaskKind::classification : TaskKind::regression;
    if (cfg.dataset.kind != DatasetKind::file && declared != cfg.task) {
      throw ConfigError("key 'task' (" + t + ") contradicts dataset.kind " +
                        to_string(cfg.dataset.kind));
    }
    cfg.task = declared;
  }
  cfg.num_classes = get<int>(root, "num_classes", "", cfg.num_classes);
  cfg.decimals = get<int>(root, "decimals", "",
                          cfg.dataset.kind == DatasetKind::arithmetic ? 0 : cfg.decimals);
  if (cfg.task == TaskKind::classification && (cfg.num_classes < 2 || cfg.num_classes > 8)) {
    throw ConfigError("key 'num_classes' must lie in [2, 8]");
  }
  if (cfg.decimals < 0 || cfg.decimals > 6) throw ConfigError("key 'decimals' must lie in [0, 6]");
  if (cfg.dataset.kind == DatasetKind::toy_regression && (cfg.decimals < 1 || cfg.decimals > 4)) {
    throw ConfigError("key 'decimals' must lie in [1, 4] for toy_regression");
  }

  auto forbid = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys) {
      if (root.contains(k)) {
        throw ConfigError("key '" + std::string(k) + "' is not allowed for regime " +
                          to_string(cfg.regime));
      }
    }
  };
  switch (cfg.regime) {
    case Regime::predictor:
      forbid({"max_steps_for_sampling", "sampling_granularity", "sampling_p", "cls_spec", "loss",
              "ordered_alpha", "eps_clamp", "writer_reduction"});
      break;
    case Regime::generator:
      forbid({"max_steps_for_sampling", "sampling_granularity", "sampling_p", "cls_spec", "loss",
              "ordered_alpha", "eps_clamp", "pooling"});
      break;
    case Regime::predgen:
      forbid({"pooling"});
      break;
  }

  if (root.contains("cls_spec")) {
    cfg.cls_spec = wrap("cls_spec", [&] { return parse_cls_spec(get<std::string>(root, "cls_spec", "", "")); });
    if (cfg.task != TaskKind::classification) {
      throw ConfigError("key 'cls_spec' only applies to classification");
    }
  }
  cfg.schedule.max_steps_for_sampling =
      get<long>(root, "max_steps_for_sampling", "", cfg.schedule.max_steps_for_sampling);
  wrap("max_steps_for_sampling", [&] { cfg.schedule.validate(); return 0; });
  if (root.contains("sampling_granularity")) {
    cfg.schedule.granularity = wrap("sampling_granularity", [&] {
      return parse_granularity(get<std::string>(root, "sampling_granularity", "", ""));
    });
  }
  if (root.contains("sampling_p")) {
    const double p = get<double>(root, "sampling_p", "", 0.0);
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("key 'sampling_p' must lie in [0, 1]");
    cfg.sampling_p = p;
  }
  if (root.contains("loss")) {
    cfg.combiner = wrap("loss", [&] { return parse_combiner(get<std::string>(root, "loss", "", "")); });
  }
  cfg.ordered_alpha = get<std::vector<double>>(root, "ordered_alpha", "", cfg.ordered_alpha);
  if (cfg.ordered_alpha.empty()) throw ConfigError("key 'ordered_alpha' must not be empty");
  wrap("ordered_alpha", [&] { OrderedPenalty{cfg.ordered_alpha}.validate(); return 0; });
  cfg.eps_clamp = get<double>(root, "eps_clamp", "", cfg.eps_clamp);
  if (!(cfg.eps_clamp > 0.0)) throw ConfigError("key 'eps_clamp' must be positive");
  if (root.contains("writer_reduction")) {
    const std::string r = get<std::string>(root, "writer_reduction", "", "");
    if (r != "mean" && r != "sum") throw ConfigError("key 'writer_reduction' must be mean|sum");
    cfg.writer_reduction = r == "mean" ? WriterReduction::mean : WriterReduction::sum;
  }

  const json opt = object_section(root, "optimizer");
  reject_unknown(opt, "optimizer.", {"learning_rate", "steps", "batch_size"});
  cfg.optimizer.learning_rate =
      get<double>(opt, "learning_rate", "optimizer.", cfg.optimizer.learning_rate);
  cfg.optimizer.steps = get<int>(opt, "steps", "optimizer.", cfg.optimizer.steps);
  cfg.optimizer.batch_size = get<int>(opt, "batch_size", "optimizer.", cfg.optimizer.batch_size);
  if (!(cfg.optimizer.learning_rate > 0.0)) throw ConfigError("key 'optimizer.learning_rate' must be positive");
  if (cfg.optimizer.steps < 0) throw ConfigError("key 'optimizer.steps' must be >= 0");
  if (cfg.optimizer.batch_size < 1) throw ConfigError("key 'optimizer.batch_size' must be >= 1");

  if (root.contains("pooling")) {
    cfg.pooling = wrap("pooling", [&] { return parse_predictor_pool(get<std::string>(root, "pooling", "", "")); });
  }
  cfg.eval_every = get<int>(root, "eval_every", "", 0);
  if (cfg.eval_every < 0) throw ConfigError("key 'eval_every' must be >= 0");

  const json mine = object_section(root, "mine");
  reject_unknown(mine, "mine.", {"hidden", "epochs", "batch_size", "learning_rate", "seed", "eval_batches"});
  cfg.mine.hidden = get<int>(mine, "hidden", "mine.", cfg.mine.hidden);
  cfg.mine.epochs = get<int>(mine, "epochs", "mine.", cfg.mine.epochs);
  cfg.mine.batch_size = get<int>(mine, "batch_size", "mine.", cfg.mine.batch_size);
  cfg.mine.learning_rate = get<double>(mine, "learning_rate", "mine.", cfg.mine.learning_rate);
  cfg.mine.seed = get_seed(mine, "seed", "mine.", 0);
  cfg.mine.eval_batches = get<int>(mine, "eval_batches", "mine.", cfg.mine.eval_batches);
  if (cfg.mine.hidden < 1 || cfg.mine.epochs < 0 || cfg.mine.batch_size < 2 ||
      cfg.mine.eval_batches < 1 || !(cfg.mine.learning_rate > 0.0)) {
    throw ConfigError("section 'mine' has an out-of-range value");
  }
  return cfg;
}

/// Canonical form with every default filled in; the run-directory hash is taken over this.
inline nlohmann::json to_json(const RunConfig& cfg) {
  using nlohmann::json;
  json ds = {{"name", cfg.dataset.name},
             {"kind", to_string(cfg.dataset.kind)},
             {"train_size", cfg.dataset.train_size},
             {"test_size", cfg.dataset.test_size},
             {"label_noise", cfg.dataset.label_noise},
             {"max_operand", cfg.dataset.max_operand}};
  if (cfg.dataset_seed_explicit) ds["seed"] = cfg.dataset.seed;
  if (cfg.dataset.kind == DatasetKind::file) {
    ds["path"] = cfg.dataset.path;
    ds["format"] = cfg.dataset.mapping.format;
    ds["text_field"] = cfg.dataset.mapping.text_field;
    ds["target_field"] = cfg.dataset.mapping.target_field;
    ds["split_field"] = cfg.dataset.mapping.split_field;
  }
  json j = {{"regime", to_string(cfg.regime)},
            {"seed", cfg.seed},
            {"model",
             {{"d_model", cfg.model.d_model},
              {"n_layers", cfg.model.n_layers},
              {"n_heads", cfg.model.n_heads},
              {"context_len", cfg.model.context_len}}},
            {"dataset", ds},
            {"task", to_string(cfg.task)},
            {"decimals", cfg.decimals},
            {"optimizer",
             {{"learning_rate", cfg.optimizer.learning_rate},
              {"steps", cfg.optimizer.steps},
              {"batch_size", cfg.optimizer.batch_size}}},
            {"eval_every", cfg.eval_every},
            {"mine",
             {{"hidden", cfg.mine.hidden},
              {"epochs", cfg.mine.epochs},
              {"batch_size", cfg.mine.batch_size},
              {"learning_rate", cfg.mine.learning_rate},
              {"seed", cfg.mine.seed},
              {"eval_batches", cfg.mine.eval_batches}}}};
  if (cfg.task == TaskKind::classification) j["num_classes"] = cfg.num_classes;
  if (cfg.regime == Regime::predictor) j["pooling"] = to_string(cfg.pooling);
  if (cfg.regime != Regime::predictor) {
    j["writer_reduction"] = cfg.writer_reduction == WriterReduction::mean ? "mean" : "sum";
  }
  if (cfg.regime == Regime::predgen) {
    j["max_steps_for_sampling"] = cfg.schedule.max_steps_for_sampling;
    j["sampling_granularity"] = to_string(cfg.schedule.granularity);
    if (cfg.sampling_p) j["sampling_p"] = *cfg.sampling_p;
    j["loss"] = to_string(cfg.combiner);
    j["ordered_alpha"] = cfg.ordered_alpha;
    j["eps_clamp"] = cfg.eps_clamp;
    if (cfg.task == TaskKind::classification) j["cls_spec"] = to_string(cfg.cls_spec);
  }
  return j;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& cfg) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << fnv1a(to_json(cfg).dump());
  return os.str();
}

inline std::string run_dir_name(const RunConfig& cfg) {
  return to_string(cfg.regime) + "-" + config_hash(cfg);
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": parse error at byte " + std::to_string(e.byte));
  }
}

}  // namespace predgen
