#pragma once

// Versioned JSON checkpoints:
//   { "format_version": 1, "config": {...}, "rng_state": "...",
//     "params": { name: { "shape": [r, c], "values": [row-major...] } } }

#include "predgen/model/transformer.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace predgen {

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},       {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"context_len", c.context_len},
          {"vocab_size", c.vocab_size}, {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.context_len = j.at("context_len").get<int>();
  c.vocab_size = j.value("vocab_size", Vocab::size());
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

inline nlohmann::json params_to_json(const ParameterSet& params, const std::string& prefix = "") {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& p : params) {
    out[prefix + p.name] = {{"shape", {p.value.rows(), p.value.cols()}},
                            {"values", to_row_major(p.value)}};
  }
  return out;
}

/// Copies every parameter named `prefix + name` out of `j` into `params`; shapes must agree.
inline void params_from_json(const nlohmann::json& j, ParameterSet& params,
                             const std::string& prefix = "") {
  for (auto& p : params) {
    const std::string key = prefix + p.name;
    if (!j.contains(key)) throw CheckpointError("checkpoint is missing parameter " + key);
    const auto& entry = j.at(key);
    std::vector<std::size_t> shape;
    std::vector<double> values;
    try {
      shape = entry.at("shape").get<std::vector<std::size_t>>();
      values = entry.at("values").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError("malformed entry for " + key + ": " + e.what());
    }
    if (shape.size() != 2 || static_cast<Eigen::Index>(shape[0]) != p.value.rows() ||
        static_cast<Eigen::Index>(shape[1]) != p.value.cols()) {
      throw CheckpointError("checkpoint shape mismatch for " + key + ": expected " +
                            shape_string(p.value));
    }
    if (values.size() != shape[0] * shape[1]) {
      throw CheckpointError("checkpoint entry " + key + " has " + std::to_string(values.size()) +
                            " values for its shape");
    }
    p.value = from_rows(shape[0], shape[1], values);
    p.zero_grad();
  }
}

struct Checkpoint {
  nlohmann::json config;   // arbitrary; must hold "model"
  std::string rng_state;
  nlohmann::json params = nlohmann::json::object();
};

inline std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json doc = {{"format_version", kCheckpointFormatVersion},
                        {"config", ckpt.config},
                        {"rng_state", ckpt.rng_state},
                        {"params", ckpt.params}};
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out << doc.dump() << '\n';
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(path + ": parse error at byte " + std::to_string(e.byte) + ": " +
                          e.what());
  }
  try {
    const int version = doc.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw CheckpointError(path + ": unsupported format_version " + std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.config = doc.at("config");
    ckpt.rng_state = doc.value("rng_state", std::string{});
    ckpt.params = doc.at("params");
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": malformed checkpoint: " + e.what());
  }
}

/// Rebuilds a model from a checkpoint whose config carries a "model" section.
inline Model load_model(const Checkpoint& ckpt) {
  Model model = init_model(model_config_from_json(ckpt.config.at("model")));
  params_from_json(ckpt.params, model.params);
  return model;
}

}  // namespace predgen
