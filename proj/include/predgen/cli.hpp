#pragma once

// Command-line front end: train, evaluate, ablate and estimate-mi. Exit codes: 0 success,
// 1 runtime failure, 2 usage or configuration error.

#include "predgen/harness/ablate.hpp"
#include "predgen/mi.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace predgen::cli {

inline constexpr int kOk = 0;
inline constexpr int kRuntime = 1;
inline constexpr int kUsage = 2;

/// Usage-level failure: reported on stderr, exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "4", "1,2,8" or "1..8" (inclusive).
inline std::vector<int> parse_k_list(const std::string& text) {
  auto to_int = [&](const std::string& s) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw UsageError("--k: '" + text + "' is not N, a list, or A..B");
    return v;
  };
  std::vector<int> out;
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const int lo = to_int(text.substr(0, dots));
    const int hi = to_int(text.substr(dots + 2));
    if (lo > hi) throw UsageError("--k: empty range " + text);
    for (int k = lo; k <= hi; ++k) out.push_back(k);
  } else {
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto comma = text.find(',', start);
      out.push_back(to_int(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  for (int k : out) {
    if (k < 1) throw UsageError("--k: values must be >= 1");
  }
  return out;
}

inline std::vector<std::string> split_csv_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (item.empty()) throw UsageError("--values: empty item in '" + text + "'");
    out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  RunConfig cfg = parse_run_config(read_json_file(path));
  if (seed) cfg.seed = *seed;
  return cfg;
}

inline TrainedSystem load_checkpoint_system(const std::string& path) {
  if (!std::filesystem::exists(path)) throw UsageError("checkpoint not found: " + path);
  return load_system(read_checkpoint(path));
}

struct Args {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::string axis;
  std::string values;
  std::string k = "2";
  std::string predictor;
  std::string generative;
  std::string checkpoint;
  int target_position = 0;
  int verbosity = 0;
};

inline int cmd_train(const Args& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_config(a.config, a.seed);
  TrainOptions opts;
  if (a.verbosity > 0) {
    opts.on_eval = [&err](const Metrics& m) { err << m.to_json().dump() << '\n'; };
  }
  const RunResult r = execute_run(cfg, a.out, opts);
  out << r.dir.string() << '\n';
  return kOk;
}

inline int cmd_evaluate(const Args& a, std::ostream& out, std::ostream&) {
  TrainedSystem sys = load_checkpoint_system(a.checkpoint);
  if (!a.config.empty()) {
    // Evaluate on another dataset with the checkpoint's model and task settings.
    const RunConfig other = load_config(a.config, a.seed);
    sys.cfg.dataset = other.effective_dataset();
    sys.cfg.dataset_seed_explicit = true;
  }
  const auto data = prepare_task(sys.cfg);
  const long steps = sys.cfg.optimizer.steps;
  nlohmann::json j = {{"train", evaluate(sys, *data, Split::train, steps).to_json()},
                      {"test", evaluate(sys, *data, Split::test, steps).to_json()}};
  std::filesystem::create_directories(a.out);
  write_text(std::filesystem::path(a.out) / "evaluation.json", j.dump(2) + "\n");
  out << j.dump() << '\n';
  return kOk;
}

inline int cmd_ablate(const Args& a, std::ostream& out, std::ostream& err) {
  const AblationAxis axis = parse_axis(a.axis);
  const RunConfig base = load_config(a.config, a.seed);
  const std::vector<std::string> values =
      a.values.empty() ? default_axis_values(axis) : split_csv_list(a.values);
  for (const std::string& v : values) apply_axis(base, axis, v);  // validate before running
  if (a.verbosity > 0) err << "ablating " << to_string(axis) << " over " << values.size() << " values\n";
  const auto rows = ablate(base, axis, values, a.out);
  const std::string table = ablation_csv(rows);
  write_text(std::filesystem::path(a.out) / "ablation.csv", table);
  out << table;
  return kOk;
}

inline int cmd_estimate_mi(const Args& a, std::ostream& out, std::ostream& err) {
  const std::vector<int> ks = parse_k_list(a.k);
  if (a.predictor.empty() || a.generative.empty()) {
    throw UsageError("estimate-mi needs --predictor and --generative checkpoints");
  }
  const TrainedSystem pred = load_checkpoint_system(a.predictor);
  const TrainedSystem gen = load_checkpoint_system(a.generative);
  if (pred.cfg.regime != Regime::predictor) {
    throw UsageError("--predictor checkpoint was trained with regime " + to_string(pred.cfg.regime));
  }
  RunConfig cfg = a.config.empty() ? gen.cfg : load_config(a.config, std::nullopt);
  if (a.seed) cfg.mine.seed = *a.seed;
  const auto data = prepare_task(cfg);
  for (int k : ks) {
    if (k > gen.model.config.d_model) {
      throw UsageError("--k " + std::to_string(k) + " exceeds d_model " +
                       std::to_string(gen.model.config.d_model));
    }
  }

  DpiInputs in;
  in.task = cfg.task;
  in.num_classes = cfg.num_classes;
  in.max_new = data->max_target_len;
  in.pooling = pred.cfg.pooling;

  std::vector<Matrix> ys;
  std::vector<Matrix> pooled;
  std::vector<HiddenStates> states;
  for (const Example& ex : data->all) {
    ys.push_back(target_representation(ex, cfg.task, cfg.num_classes));
    pooled.push_back(pooled_representation(pred.model, ex.input_text, in.pooling));
    states.push_back(generative_states(gen.model, ex.input_text, in.max_new));
  }
  const Matrix y = stack_rows(ys);
  const std::string name = cfg.dataset.name;
  const std::string seed = std::to_string(cfg.mine.seed);

  std::string report = "dataset,representation,k,seed,nats\n";
  const MIEstimate ip = mine_estimate(y, stack_rows(pooled), cfg.mine);
  report += name + ",pooled,," + seed + ',' + format_double(ip.nats) + '\n';
  if (a.verbosity > 0) err << "pooled " << ip.nats << '\n';
  for (int k : ks) {
    std::vector<Matrix> reduced;
    for (const HiddenStates& s : states) reduced.push_back(flatten(reduce_states(s, k)));
    const MIEstimate ir = mine_estimate(y, stack_rows(reduced), cfg.mine);
    report += name + ",reduced," + std::to_string(k) + ',' + seed + ',' + format_double(ir.nats) + '\n';
    if (a.verbosity > 0) err << "reduced k=" << k << ' ' << ir.nats << '\n';
  }

  const Matrix token = token_mi_matrix(gen.model, data->all, a.target_position, in.max_new, cfg.mine);
  std::string token_csv = "position,nats\n";
  for (Eigen::Index i = 0; i < token.rows(); ++i) {
    token_csv += std::to_string(i) + ',' +
                 (std::isnan(token(i, 0)) ? std::string("nan") : format_double(token(i, 0))) + '\n';
  }
  std::filesystem::create_directories(a.out);
  write_text(std::filesystem::path(a.out) / "mi_report.csv", report);
  write_text(std::filesystem::path(a.out) / "token_mi.csv", token_csv);
  out << report;
  return kOk;
}

/// Parses argv and dispatches; never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"predgen: PredGen training, evaluation, ablation and MI estimation"};
  app.require_subcommand(1);
  Args a;
  auto seed_opt = [&](CLI::App* sub) {
    sub->add_option_function<std::uint64_t>("--seed", [&a](std::uint64_t s) { a.seed = s; },
                                            "Seed override (wins over the config file)");
  };
  auto verbose = [&](CLI::App* sub) { sub->add_flag("-v,--verbose", a.verbosity, "Progress on stderr"); };

  CLI::App* train = app.add_subcommand("train", "Train the configured regime");
  train->add_option("--config", a.config, "Run config (JSON)")->required();
  train->add_option("--out", a.out, "Output directory");
  seed_opt(train);
  verbose(train);

  CLI::App* eval = app.add_subcommand("evaluate", "Free-running evaluation of a checkpoint");
  eval->add_option("--checkpoint", a.checkpoint, "checkpoint.json from a run")->required();
  eval->add_option("--config", a.config, "Optional config supplying a different dataset");
  eval->add_option("--out", a.out, "Output directory");
  seed_opt(eval);
  verbose(eval);

  CLI::App* abl = app.add_subcommand("ablate", "Matched-seed PredGen runs along one axis");
  abl->add_option("--config", a.config, "Base PredGen config (JSON)")->required();
  abl->add_option("--out", a.out, "Output directory");
  abl->add_option("--axis", a.axis, "max_steps_for_sampling | granularity | loss_combiner")->required();
  abl->add_option("--values", a.values, "Comma-separated axis values");
  seed_opt(abl);
  verbose(abl);

  CLI::App* mi = app.add_subcommand("estimate-mi", "Pooled vs reduced mutual information");
  mi->add_option("--predictor", a.predictor, "Predictor checkpoint")->required();
  mi->add_option("--generative", a.generative, "Generator or PredGen checkpoint")->required();
  mi->add_option("--config", a.config, "Config supplying dataset and MINE settings");
  mi->add_option("--out", a.out, "Output directory");
  mi->add_option("--k", a.k, "Components: N, list A,B,C, or range A..B");
  mi->add_option("--target-position", a.target_position, "Generated position for token MI");
  seed_opt(mi);
  verbose(mi);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(a, out, err);
    if (eval->parsed()) return cmd_evaluate(a, out, err);
    if (abl->parsed()) return cmd_ablate(a, out, err);
    return cmd_estimate_mi(a, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace predgen::cli
