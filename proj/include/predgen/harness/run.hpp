#pragma once

// Run directories: <out>/<regime>-<config hash>/ holding metrics.jsonl, losses.csv,
// metrics.json and checkpoint.json. Contents carry no timestamps or absolute paths.

#include "predgen/harness/train.hpp"
#include "predgen/model/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace predgen {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string losses_csv(const std::vector<LossRecord>& losses) {
  std::string out = "step,L_W,L_D,combined\n";
  for (const LossRecord& r : losses) {
    out += std::to_string(r.step);
    out += ',';
    if (r.writer) out += format_double(*r.writer);
    out += ',';
    if (r.director) out += format_double(*r.director);
    out += ',';
    out += format_double(r.combined);
    out += '\n';
  }
  return out;
}

inline nlohmann::json metrics_summary(const TrainedSystem& sys) {
  nlohmann::json j = {{"regime", to_string(sys.cfg.regime)},
                      {"config_hash", config_hash(sys.cfg)},
                      {"seed", sys.cfg.seed},
                      {"steps", sys.cfg.optimizer.steps},
                      {"train", final_metrics(sys, Split::train).to_json()},
                      {"test", final_metrics(sys, Split::test).to_json()}};
  j["final_loss"] = sys.losses.empty() ? nlohmann::json(nullptr) : nlohmann::json(sys.losses.back().combined);
  return j;
}

inline Checkpoint make_checkpoint(const TrainedSystem& sys) {
  Checkpoint ckpt;
  ckpt.config = {{"model", to_json(sys.model.config)}, {"run", to_json(sys.cfg)}};
  ckpt.params = params_to_json(sys.model.params);
  const nlohmann::json head = params_to_json(sys.head);
  for (const auto& [k, v] : head.items()) ckpt.params[k] = v;
  return ckpt;
}

/// Rebuilds a trained system (model and head) from a checkpoint written by write_run().
inline TrainedSystem load_system(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("run")) throw CheckpointError("checkpoint has no run configuration");
  RunConfig cfg;
  try {
    cfg = parse_run_config(ckpt.config.at("run"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint run configuration: ") + e.what());
  }
  TrainedSystem sys = init_system(cfg);
  sys.model = load_model(ckpt);
  if (sys.head.size() > 0) {
    nlohmann::json head = nlohmann::json::object();
    for (const auto& p : sys.head) {
      if (!ckpt.params.contains(p.name)) throw CheckpointError("checkpoint lacks parameter " + p.name);
      head[p.name] = ckpt.params.at(p.name);
    }
    params_from_json(head, sys.head);
  }
  return sys;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Writes every artifact of a finished run into `dir` (created if needed).
inline void write_run(const TrainedSystem& sys, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string jsonl;
  for (const Metrics& m : sys.evals) jsonl += m.to_json().dump() + "\n";
  write_text(dir / "metrics.jsonl", jsonl);
  write_text(dir / "losses.csv", losses_csv(sys.losses));
  write_text(dir / "metrics.json", metrics_summary(sys).dump(2) + "\n");
  write_checkpoint((dir / "checkpoint.json").string(), make_checkpoint(sys));
}

struct RunResult {
  std::filesystem::path dir;
  TrainedSystem system;
};

/// Trains `cfg` and writes its run directory under `out_root`.
inline RunResult execute_run(const RunConfig& cfg, const std::filesystem::path& out_root,
                             const TrainOptions& opts = {}) {
  const auto data = prepare_task(cfg);
  TrainedSystem sys = train(cfg, *data, opts);
  const std::filesystem::path dir = out_root / run_dir_name(cfg);
  write_run(sys, dir);
  return {dir, std::move(sys)};
}

}  // namespace predgen
