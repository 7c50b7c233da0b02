#pragma once

// Ablation driver: one PredGen run per axis value at matched seeds, run concurrently up to a
// thread cap, and a comparison table.

#include "predgen/harness/run.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace predgen {

enum class AblationAxis { sampling, granularity, loss_combiner };

inline std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::sampling: return "max_steps_for_sampling";
    case AblationAxis::granularity: return "granularity";
    case AblationAxis::loss_combiner: return "loss_combiner";
  }
  return "?";
}

inline AblationAxis parse_axis(const std::string& s) {
  if (s == "sampling" || s == "max_steps_for_sampling") return AblationAxis::sampling;
  if (s == "granularity" || s == "sampling_granularity") return AblationAxis::granularity;
  if (s == "loss_combiner" || s == "loss") return AblationAxis::loss_combiner;
  throw ConfigError("unknown ablation axis '" + s +
                    "' (expected max_steps_for_sampling|granularity|loss_combiner)");
}

inline std::vector<std::string> default_axis_values(AblationAxis a) {
  switch (a) {
    case AblationAxis::sampling: return {"50", "1000", "7000"};
    case AblationAxis::granularity: return {"sequence", "token"};
    case AblationAxis::loss_combiner: return {"wdal", "multiplicative", "adaptive", "director_only"};
  }
  return {};
}

/// The base config with one axis value applied.
inline RunConfig apply_axis(RunConfig cfg, AblationAxis axis, const std::string& value) {
  if (cfg.regime != Regime::predgen) throw ConfigError("ablate: base config must use regime predgen");
  switch (axis) {
    case AblationAxis::sampling: {
      std::size_t used = 0;
      long t = 0;
      try {
        t = std::stol(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != value.size() || t <= 0) {
        throw ConfigError("ablate: max_steps_for_sampling value '" + value + "' is not a positive integer");
      }
      cfg.schedule.max_steps_for_sampling = t;
      break;
    }
    case AblationAxis::granularity:
      try {
        cfg.schedule.granularity = parse_granularity(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("ablate: ") + e.what());
      }
      break;
    case AblationAxis::loss_combiner:
      try {
        cfg.combiner = parse_combiner(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("ablate: ") + e.what());
      }
      break;
  }
  return cfg;
}

struct AblationRow {
  std::string axis;
  std::string value;
  std::string dataset;
  std::uint64_t seed = 0;
  std::string run_dir;  // relative to the ablation output directory
  Metrics test;
  double final_loss = 0.0;
};

/// Worker cap from PREDGEN_THREADS (default: hardware concurrency, at least 1).
inline unsigned thread_cap() {
  unsigned cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PREDGEN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) cap = static_cast<unsigned>(v);
  }
  return cap;
}

inline std::vector<AblationRow> ablate(const RunConfig& base, AblationAxis axis,
                                       const std::vector<std::string>& values,
                                       const std::filesystem::path& out_root,
                                       unsigned threads = thread_cap()) {
  std::vector<RunConfig> cfgs;
  for (const std::string& v : values) cfgs.push_back(apply_axis(base, axis, v));
  std::vector<AblationRow> rows(cfgs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto worker = [&] {
    for (std::size_t i = next++; i < cfgs.size(); i = next++) {
      try {
        RunResult r = execute_run(cfgs[i], out_root);
        rows[i] = AblationRow{to_string(axis), values[i], cfgs[i].dataset.name, cfgs[i].seed,
                              r.dir.filename().string(), final_metrics(r.system, Split::test),
                              r.system.losses.empty() ? 0.0 : r.system.losses.back().combined};
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cfgs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string{}; };
  std::string out =
      "axis,value,dataset,seed,accuracy,mse,mae,exact_match,decode_failures,final_loss,run_dir\n";
  for (const AblationRow& r : rows) {
    out += r.axis + ',' + r.value + ',' + r.dataset + ',' + std::to_string(r.seed) + ',' +
           opt(r.test.accuracy) + ',' + opt(r.test.mse) + ',' + opt(r.test.mae) + ',' +
           opt(r.test.exact_match) + ',' + std::to_string(r.test.decode_failures) + ',' +
           format_double(r.final_loss) + ',' + r.run_dir + '\n';
  }
  return out;
}

}  // namespace predgen
