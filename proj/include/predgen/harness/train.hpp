#pragma once

// Training and evaluation for the three regimes.
//
// Every regime sees the sequence [X, SEP, target...]. With n = |X| the SEP token sits at row n,
// so logits rows [n, n+m) predict the m target tokens and state rows [n+1, n+1+m) belong to the
// target tokens themselves. The Predictor only reads the [X, SEP] prefix.

#include "predgen/core/optim.hpp"
#include "predgen/framing.hpp"
#include "predgen/harness/config.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace predgen {

inline constexpr std::uint64_t kDataStream = 0x64617461ULL;
inline constexpr std::uint64_t kSamplingStream = 0x73616d70ULL;
inline constexpr std::uint64_t kHeadStream = 0x68656164ULL;

struct LossRecord {
  long step = 0;
  std::optional<double> writer;
  std::optional<double> director;
  double combined = 0.0;
};

struct Metrics {
  long step = 0;
  Split split = Split::test;
  std::size_t n = 0;
  std::optional<double> accuracy;
  std::optional<double> mse;
  std::optional<double> mae;
  std::optional<double> exact_match;
  std::size_t decode_failures = 0;

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) {
      return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return {{"step", step},
            {"split", to_string(split)},
            {"n", n},
            {"accuracy", opt(accuracy)},
            {"mse", opt(mse)},
            {"mae", opt(mae)},
            {"exact_match", opt(exact_match)},
            {"decode_failures", decode_failures}};
  }
};

// ------------------------------------------------------------------------------ task data

struct Prepared {
  const Example* example = nullptr;
  TokenSequence input;  // X, SEP
  TokenSequence gold;   // target, EOS
};

struct TaskData {
  std::vector<Example> all;
  std::vector<Prepared> train;
  std::vector<Prepared> test;
  int max_target_len = 0;
  double range_lo = 0.0;  // declared target range, used for the worst-case decode penalty
  double range_hi = 1.0;

  TaskData() = default;
  TaskData(const TaskData&) = delete;
  TaskData& operator=(const TaskData&) = delete;
  TaskData(TaskData&&) = default;

  const std::vector<Prepared>& split(Split s) const { return s == Split::train ? train : test; }
};

inline std::unique_ptr<TaskData> prepare_task(const RunConfig& cfg) {
  auto data = std::make_unique<TaskData>();
  const DatasetSpec spec = cfg.effective_dataset();
  data->all = make_dataset(spec);
  const TargetFormat fmt{cfg.task, cfg.decimals};
  for (const Example& ex : data->all) {
    if (cfg.task == TaskKind::classification &&
        (ex.class_id() < 0 || ex.class_id() >= cfg.num_classes)) {
      throw ConfigError("dataset: class " + std::to_string(ex.class_id()) + " outside num_classes " +
                        std::to_string(cfg.num_classes));
    }
    Prepared p{&ex, frame_input(ex.input_text), gold_target(ex, fmt)};
    const int total = static_cast<int>(p.input.size() + p.gold.size());
    if (total > cfg.model.context_len) {
      throw ConfigError("example '" + ex.input_text + "' needs " + std::to_string(total) +
                        " positions, more than model.context_len " +
                        std::to_string(cfg.model.context_len));
    }
    data->max_target_len = std::max(data->max_target_len, static_cast<int>(p.gold.size()));
    (ex.split == Split::train ? data->train : data->test).push_back(std::move(p));
  }
  if (data->train.empty()) throw ConfigError("dataset has no training examples");

  switch (spec.kind) {
    case DatasetKind::toy_classification:
    case DatasetKind::toy_regression:
      data->range_lo = 0.0;
      data->range_hi = 1.0;
      break;
    case DatasetKind::arithmetic:
      data->range_lo = -spec.max_operand;
      data->range_hi = 2.0 * spec.max_operand;
      break;
    case DatasetKind::file:
      if (cfg.task == TaskKind::regression) {
        data->range_lo = data->range_hi = data->all.front().value();
        for (const Example& ex : data->all) {
          data->range_lo = std::min(data->range_lo, ex.value());
          data->range_hi = std::max(data->range_hi, ex.value());
        }
      }
      break;
  }
  return data;
}

// ------------------------------------------------------------------------------- system

/// Model plus the regime's head: predictor.w / predictor.b for the Predictor, adapter.w for
/// PredGen classification, nothing otherwise.
struct TrainedSystem {
  RunConfig cfg;
  Model model;
  ParameterSet head;
  std::vector<LossRecord> losses;
  std::vector<Metrics> evals;
  AdaptiveState adaptive;
};

inline TrainedSystem init_system(const RunConfig& cfg) {
  TrainedSystem sys{cfg, init_model(cfg.effective_model()), {}, {}, {}, {}};
  Rng rng = make_rng(cfg.seed, kHeadStream);
  const int d = cfg.model.d_model;
  if (cfg.regime == Regime::predictor) {
    const int out = cfg.task == TaskKind::classification ? cfg.num_classes : 1;
    sys.head.add("predictor.w", detail::gaussian(out, d, 0.02, rng));
    sys.head.add("predictor.b", Matrix::Zero(1, out));
  } else if (cfg.regime == Regime::predgen && cfg.task == TaskKind::classification) {
    ClassifierHead head(cfg.num_classes, d, cfg.cls_spec, rng);
    sys.head = head.params;
  }
  return sys;
}

/// Target prefix the model conditions on, for one example at one step.
inline TokenSequence conditioning_prefix(const Model& model, const Prepared& ex,
                                         SamplingGranularity granularity, double p, Rng& rng) {
  const auto m = static_cast<int>(ex.gold.size());
  if (granularity == SamplingGranularity::sequence) {
    if (!bernoulli(p, rng)) return ex.gold;
    TokenSequence gen = generate(model, ex.input, GenerateOptions{m, false, false}).tokens;
    return gen;
  }
  NextTokenProvider provider = [&](const std::vector<int>& mixed) {
    std::vector<int> seq = ex.input.ids;
    seq.insert(seq.end(), mixed.begin(), mixed.end());
    const ForwardResult fr = forward(model, std::span<const int>(seq));
    return argmax_row(fr.logits, fr.logits.rows() - 1);
  };
  return mix_token(ex.gold, provider, p, rng).tokens;
}

/// Per-example tape outputs of one forward pass.
struct ExampleForward {
  ForwardVars fwd;
  Var target_logits;  // m×|V|
  Var target_states;  // m×d
};

inline ExampleForward forward_example(Tape& tape, Model& model, const Prepared& ex,
                                      const TokenSequence& prefix) {
  const std::vector<int> seq = concat(ex.input, prefix);
  ExampleForward out;
  out.fwd = forward(tape, model, seq);
  const auto n = static_cast<Eigen::Index>(ex.input.size()) - 1;
  const auto m = static_cast<Eigen::Index>(ex.gold.size());
  out.target_logits = ad::slice_rows(out.fwd.logits, n, m);
  out.target_states = ad::slice_rows(out.fwd.states, n + 1, m);
  return out;
}

inline Var writer_loss(Var target_logits, const TokenSequence& gold, WriterReduction r) {
  if (r == WriterReduction::mean) return writer_ce(target_logits, gold);
  return ordered_ce(target_logits, gold, OrderedPenalty::uniform(gold.size()));
}

/// Batch losses as tape variables; `writer`/`director` are absent when the regime lacks them.
struct BatchLoss {
  std::optional<Var> writer;
  std::optional<Var> director;
  Var combined;
  /// Ids of the state buffers each director term read, one per example (consistency checks).
  std::vector<std::size_t> director_state_ids;
  std::vector<std::size_t> forward_state_ids;
};

inline Var batch_mean(const std::vector<Var>& terms) {
  Var total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return ad::scale(total, 1.0 / static_cast<double>(terms.size()));
}

inline Var predictor_pooled(Var states, Eigen::Index n, PredictorPool pool_spec) {
  switch (pool_spec) {
    case PredictorPool::last_token: return ad::slice_rows(states, n - 1, 1);
    case PredictorPool::mean: return ad::mean_rows(ad::slice_rows(states, 0, n));
    case PredictorPool::sep_token: return ad::slice_rows(states, n, 1);
  }
  throw std::logic_error("predictor_pooled: bad pooling");
}

/// Builds the loss of one batch on `tape` at training step `step`. Sampling decisions come from
/// the (seed, step) stream, so the same call is reproducible.
inline BatchLoss batch_loss(Tape& tape, TrainedSystem& sys, const std::vector<const Prepared*>& batch,
                            long step) {
  const RunConfig& cfg = sys.cfg;
  BatchLoss out;
  std::vector<Var> writers;
  std::vector<Var> directors;
  std::vector<Var> singles;

  if (cfg.regime == Regime::predictor) {
    for (const Prepared* ex : batch) {
      ForwardVars fv = forward(tape, sys.model, ex->input.ids);
      const auto n = static_cast<Eigen::Index>(ex->input.size()) - 1;
      Var pooled = predictor_pooled(fv.states, n, cfg.pooling);
      Var out_row = ad::add_row(ad::matmul_nt(pooled, tape.param(sys.head.at("predictor.w"))),
                                tape.param(sys.head.at("predictor.b")));
      if (cfg.task == TaskKind::classification) {
        const int target[1] = {ex->example->class_id()};
        const double w[1] = {1.0};
        singles.push_back(ad::weighted_cross_entropy(out_row, target, w));
      } else {
        Var diff = ad::sub(out_row, tape.constant(Matrix::Constant(1, 1, ex->example->value())));
        singles.push_back(ad::hadamard(diff, diff));
      }
    }
    out.combined = batch_mean(singles);
    return out;
  }

  const SamplingSchedule schedule = cfg.effective_schedule();
  const double p = cfg.regime == Regime::predgen
                       ? cfg.sampling_p.value_or(mixing_prob(schedule, step))
                       : 0.0;
  Rng rng = make_rng(cfg.seed, kSamplingStream, static_cast<std::uint64_t>(step));

  for (const Prepared* ex : batch) {
    const TokenSequence prefix =
        cfg.regime == Regime::predgen && p > 0.0
            ? conditioning_prefix(sys.model, *ex, schedule.granularity, p, rng)
            : ex->gold;
    ExampleForward ef = forward_example(tape, sys.model, *ex, prefix);
    out.forward_state_ids.push_back(ef.fwd.states.id);
    writers.push_back(writer_loss(ef.target_logits, ex->gold, cfg.writer_reduction));
    if (cfg.regime != Regime::predgen) continue;
    if (cfg.task == TaskKind::classification) {
      directors.push_back(classification_director_loss(
          ef.target_states, tape.param(sys.head.at(ClassifierHead::kWeightName)), cfg.cls_spec,
          ex->example->class_id()));
    } else {
      directors.push_back(
          regression_director_loss(ef.target_logits, ex->gold, cfg.penalty(ex->gold.size())));
    }
    out.director_state_ids.push_back(ef.fwd.states.id);
  }
  Var lw = batch_mean(writers);
  out.writer = lw;
  if (cfg.regime == Regime::generator) {
    out.combined = lw;
    return out;
  }
  Var ld = batch_mean(directors);
  out.director = ld;
  out.combined = combine(cfg.combiner, lw, ld, sys.adaptive, cfg.eps_clamp);
  return out;
}

/// Cycles through shuffled training indices, reshuffling after each pass.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : order_(n), batch_(std::min(batch_size, n)), rng_(make_rng(seed, kDataStream)) {
    std::iota(order_.begin(), order_.end(), 0);
    shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (cursor_ == order_.size()) {
        shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

// ------------------------------------------------------------------------------ evaluation

/// Prediction for one example under free-running greedy decoding.
struct ExamplePrediction {
  std::optional<int> class_id;
  std::optional<double> value;
  bool decode_failed = false;
};

inline ExamplePrediction predict(const TrainedSystem& sys, const Prepared& ex, int max_new) {
  const RunConfig& cfg = sys.cfg;
  ExamplePrediction out;
  if (cfg.regime == Regime::predictor) {
    const ForwardResult fr = forward(sys.model, ex.input);
    const auto n = static_cast<Eigen::Index>(ex.input.size()) - 1;
    Matrix pooled;
    switch (cfg.pooling) {
      case PredictorPool::last_token: pooled = fr.states.values.row(n - 1); break;
      case PredictorPool::mean: pooled = fr.states.values.topRows(n).colwise().mean(); break;
      case PredictorPool::sep_token: pooled = fr.states.values.row(n); break;
    }
    const Matrix logits = pooled * sys.head.at("predictor.w").value.transpose() +
                          sys.head.at("predictor.b").value;
    if (cfg.task == TaskKind::classification) {
      out.class_id = argmax_row(logits, 0);
    } else {
      out.value = logits(0, 0);
    }
    return out;
  }

  const bool adapter = cfg.regime == Regime::predgen && cfg.task == TaskKind::classification;
  const Generation gen = generate(sys.model, ex.input, GenerateOptions{max_new, true, adapter});
  if (adapter) {
    ClassifierHead head;
    head.cls_spec = cfg.cls_spec;
    head.params = sys.head;
    out.class_id = adapt_classify(gen.states, head).argmax();
    return out;
  }
  if (cfg.task == TaskKind::classification) {
    const int cls = decode_class(gen.tokens, cfg.num_classes);
    if (cls < 0) {
      out.decode_failed = true;
    } else {
      out.class_id = cls;
    }
    return out;
  }
  try {
    out.value = decode_number(gen.tokens);
  } catch (const DecodeError&) {
    out.decode_failed = true;
  }
  return out;
}

/// Exact-match rule for numeric answers.
inline bool is_exact_match(double predicted, double gold) { return std::abs(predicted - gold) < 1e-4; }

/// Free-running metrics on one split. A decode failure scores as a wrong class, or as the full
/// width of the target range (squared for MSE).
inline Metrics evaluate(const TrainedSystem& sys, const TaskData& data, Split split, long step = 0) {
  Metrics m;
  m.step = step;
  m.split = split;
  const auto& items = data.split(split);
  m.n = items.size();
  if (items.empty()) return m;
  const double width = data.range_hi - data.range_lo;
  std::size_t correct = 0;
  std::size_t exact = 0;
  double se = 0.0;
  double ae = 0.0;
  for (const Prepared& ex : items) {
    const ExamplePrediction pred = predict(sys, ex, data.max_target_len);
    if (pred.decode_failed) ++m.decode_failures;
    if (sys.cfg.task == TaskKind::classification) {
      correct += pred.class_id && *pred.class_id == ex.example->class_id() ? 1 : 0;
      continue;
    }
    const double gold = ex.example->value();
    if (pred.decode_failed) {
      se += width * width;
      ae += width;
      continue;
    }
    const double err = *pred.value - gold;
    se += err * err;
    ae += std::abs(err);
    exact += is_exact_match(*pred.value, gold) ? 1 : 0;
  }
  const auto n = static_cast<double>(items.size());
  if (sys.cfg.task == TaskKind::classification) {
    m.accuracy = static_cast<double>(correct) / n;
  } else {
    m.mse = se / n;
    m.mae = ae / n;
    m.exact_match = static_cast<double>(exact) / n;
  }
  return m;
}

// ------------------------------------------------------------------------------- training

struct TrainOptions {
  /// Called after every evaluation (intermediate and final).
  std::function<void(const Metrics&)> on_eval;
  std::function<void(const LossRecord&)> on_step;
};

inline LossRecord record_of(const BatchLoss& bl, long step) {
  LossRecord r;
  r.step = step;
  if (bl.writer) r.writer = bl.writer->scalar();
  if (bl.director) r.director = bl.director->scalar();
  r.combined = bl.combined.scalar();
  if (!std::isfinite(r.combined)) {
    throw NumericError("training diverged: non-finite loss at step " + std::to_string(step));
  }
  return r;
}

/// Runs cfg.optimizer.steps updates, evaluating on the test split every eval_every steps and on
/// both splits at the end.
inline TrainedSystem train(const RunConfig& cfg, const TaskData& data, const TrainOptions& opts = {}) {
  TrainedSystem sys = init_system(cfg);
  Adam model_opt(Adam::Options{cfg.optimizer.learning_rate, 0.9, 0.999, 1e-8});
  Adam head_opt(Adam::Options{cfg.optimizer.learning_rate, 0.9, 0.999, 1e-8});
  BatchSampler sampler(data.train.size(), static_cast<std::size_t>(cfg.optimizer.batch_size),
                       cfg.seed);

  auto run_eval = [&](Split split, long step) {
    Metrics m = evaluate(sys, data, split, step);
    sys.evals.push_back(m);
    if (opts.on_eval) opts.on_eval(m);
  };

  for (long step = 0; step < cfg.optimizer.steps; ++step) {
    std::vector<const Prepared*> batch;
    for (std::size_t i : sampler.next()) batch.push_back(&data.train[i]);
    sys.model.params.zero_grad();
    sys.head.zero_grad();
    Tape tape;
    BatchLoss bl = batch_loss(tape, sys, batch, step);
    const LossRecord rec = record_of(bl, step);
    tape.backward(bl.combined);
    model_opt.step(sys.model.params);
    if (sys.head.size() > 0) head_opt.step(sys.head);
    sys.losses.push_back(rec);
    if (opts.on_step) opts.on_step(rec);
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.optimizer.steps) {
      run_eval(Split::test, step + 1);
    }
  }
  run_eval(Split::train, cfg.optimizer.steps);
  run_eval(Split::test, cfg.optimizer.steps);
  return sys;
}

inline TrainedSystem train_predictor(const RunConfig& cfg, const TaskData& data) {
  if (cfg.regime != Regime::predictor) throw ConfigError("train_predictor: regime is " + to_string(cfg.regime));
  return train(cfg, data);
}

inline TrainedSystem train_generator(const RunConfig& cfg, const TaskData& data) {
  if (cfg.regime != Regime::generator) throw ConfigError("train_generator: regime is " + to_string(cfg.regime));
  return train(cfg, data);
}

inline TrainedSystem train_predgen(const RunConfig& cfg, const TaskData& data) {
  if (cfg.regime != Regime::predgen) throw ConfigError("train_predgen: regime is " + to_string(cfg.regime));
  return train(cfg, data);
}

/// Last metrics recorded for a split.
inline const Metrics& final_metrics(const TrainedSystem& sys, Split split) {
  for (auto it = sys.evals.rbegin(); it != sys.evals.rend(); ++it) {
    if (it->split == split) return *it;
  }
  throw std::logic_error("final_metrics: no evaluation recorded for " + to_string(split));
}

}  // namespace predgen
