#pragma once

// Mutual-information estimation with MINE (Donsker–Varadhan bound) and the representation
// pipeline used to compare pooled against per-token states.
//
// The statistics network is T(y, z) = w2 · softplus(W1 [y; z] + b1) + b2. Each step ascends
//   mean_joint T(y_i, z_i) − log mean_marginal exp T(y_i, z_π(i)),
// with π a fresh within-batch permutation.

#include "predgen/core/autodiff.hpp"
#include "predgen/core/optim.hpp"
#include "predgen/core/rng.hpp"
#include "predgen/core/svd.hpp"
#include "predgen/framing.hpp"
#include "predgen/model/transformer.hpp"

#include <cmath>
#include <numeric>
#include <vector>

namespace predgen {

struct MineConfig {
  int hidden = 128;
  int epochs = 200;
  int batch_size = 256;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  int eval_batches = 10;
};

struct MIEstimate {
  double nats = 0.0;
  std::size_t n_samples = 0;
  int epochs = 0;
  std::uint64_t seed = 0;
};

namespace mi_detail {

/// Per-column z-scoring; constant columns become zero. Invertible on the non-constant part, so
/// it leaves mutual information unchanged.
inline Matrix standardize(const Matrix& x) {
  Matrix out = x;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double mean = x.col(c).mean();
    const double var = (x.col(c).array() - mean).square().mean();
    if (var <= 1e-24 * std::max(1.0, mean * mean)) {
      out.col(c).setZero();
    } else {
      out.col(c) = (x.col(c).array() - mean) / std::sqrt(var);
    }
  }
  return out;
}

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

struct StatisticsNetwork {
  ParameterSet params;

  StatisticsNetwork(Eigen::Index in, int hidden, Rng& rng) {
    const double s1 = std::sqrt(1.0 / static_cast<double>(std::max<Eigen::Index>(in, 1)));
    const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
    Matrix w1(in, hidden);
    for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = s1 * standard_normal(rng);
    Matrix w2(hidden, 1);
    for (Eigen::Index i = 0; i < w2.size(); ++i) w2.data()[i] = s2 * standard_normal(rng);
    params.add("w1", std::move(w1));
    params.add("b1", Matrix::Zero(1, hidden));
    params.add("w2", std::move(w2));
    params.add("b2", Matrix::Zero(1, 1));
  }

  Var apply(Tape& tape, Var input) {
    Var h = ad::softplus(
        ad::add_row(ad::matmul(input, tape.param(params.at("w1"))), tape.param(params.at("b1"))));
    return ad::add_row(ad::matmul(h, tape.param(params.at("w2"))), tape.param(params.at("b2")));
  }

  /// DV objective on one batch; marginal pairs use `perm` over the batch.
  Var objective(Tape& tape, const Matrix& y, const Matrix& z, std::span<const std::size_t> perm) {
    Matrix joint_in(y.rows(), y.cols() + z.cols());
    joint_in << y, z;
    Matrix marg_in(y.rows(), y.cols() + z.cols());
    marg_in << y, gather_rows(z, perm);
    Var t_joint = apply(tape, tape.constant(std::move(joint_in)));
    Var t_marg = apply(tape, tape.constant(std::move(marg_in)));
    return ad::sub(ad::mean(t_joint), ad::log_mean_exp(t_marg));
  }
};

}  // namespace mi_detail

/// Trains a fresh statistics network on (y_i, z_i) rows and returns the DV lower bound averaged
/// over `eval_batches` batches drawn after the last epoch.
inline MIEstimate mine_estimate(const Matrix& y, const Matrix& z, const MineConfig& cfg) {
  if (y.rows() != z.rows()) {
    throw DimensionError("mine_estimate: " + std::to_string(y.rows()) + " y rows vs " +
                         std::to_string(z.rows()) + " z rows");
  }
  if (cfg.batch_size < 2) throw std::invalid_argument("mine_estimate: batch_size must be >= 2");
  const auto n = static_cast<std::size_t>(y.rows());
  if (n < static_cast<std::size_t>(cfg.batch_size)) {
    throw std::invalid_argument("mine_estimate: " + std::to_string(n) +
                                " pairs is fewer than batch size " +
                                std::to_string(cfg.batch_size));
  }
  if (!y.allFinite() || !z.allFinite()) throw NumericError("mine_estimate: non-finite input");

  const Matrix ys = mi_detail::standardize(y);
  const Matrix zs = mi_detail::standardize(z);
  Rng rng = make_rng(cfg.seed, 0x6d696e65ULL);
  mi_detail::StatisticsNetwork net(ys.cols() + zs.cols(), cfg.hidden, rng);
  Adam opt(Adam::Options{cfg.learning_rate, 0.9, 0.999, 1e-8});

  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> perm(batch);

  auto run_batch = [&](std::span<const std::size_t> idx, bool train) {
    const Matrix yb = mi_detail::gather_rows(ys, idx);
    const Matrix zb = mi_detail::gather_rows(zs, idx);
    std::iota(perm.begin(), perm.end(), 0);
    shuffle(perm.begin(), perm.end(), rng);
    Tape tape(train);
    Var obj = net.objective(tape, yb, zb, perm);
    const double value = obj.scalar();
    if (train) {
      net.params.zero_grad();
      tape.backward(ad::scale(obj, -1.0));
      opt.step(net.params);
    }
    return value;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + batch <= n; start += batch) {
      run_batch(std::span<const std::size_t>(order).subspan(start, batch), true);
    }
  }

  double total = 0.0;
  int done = 0;
  while (done < cfg.eval_batches) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start + batch <= n && done < cfg.eval_batches; start += batch) {
      total += run_batch(std::span<const std::size_t>(order).subspan(start, batch), false);
      ++done;
    }
  }
  return MIEstimate{total / static_cast<double>(cfg.eval_batches), n, cfg.epochs, cfg.seed};
}

inline MIEstimate mine_estimate(const std::vector<std::pair<Matrix, Matrix>>& pairs,
                                const MineConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("mine_estimate: no pairs");
  Matrix y(static_cast<Eigen::Index>(pairs.size()), pairs.front().first.size());
  Matrix z(static_cast<Eigen::Index>(pairs.size()), pairs.front().second.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (pairs[i].first.size() != y.cols() || pairs[i].second.size() != z.cols()) {
      throw DimensionError("mine_estimate: pair " + std::to_string(i) + " has a different width");
    }
    y.row(r) = pairs[i].first.reshaped<Eigen::RowMajor>().transpose();
    z.row(r) = pairs[i].second.reshaped<Eigen::RowMajor>().transpose();
  }
  return mine_estimate(y, z, cfg);
}

// ------------------------------------------------------------------------- representations

/// Per-sequence top-k scores (k×d). Sequences shorter than k are zero-padded to k rows first.
inline Matrix reduce_states(const HiddenStates& states, int k) {
  if (states.empty()) throw std::invalid_argument("reduce_states: empty states");
  if (k < 1 || k > states.values.cols()) {
    throw InvalidRankError("reduce_states: k=" + std::to_string(k) + " outside [1, d=" +
                           std::to_string(states.values.cols()) + "]");
  }
  if (states.values.rows() >= k) return truncated_svd(states.values, k);
  Matrix padded = Matrix::Zero(k, states.values.cols());
  padded.topRows(states.values.rows()) = states.values;
  return truncated_svd(padded, k);
}

inline Matrix flatten(const Matrix& m) {
  Matrix out = m.reshaped<Eigen::RowMajor>().transpose();
  return out;
}

enum class PredictorPool { last_token, mean, sep_token };

inline std::string to_string(PredictorPool p) {
  switch (p) {
    case PredictorPool::last_token: return "last_token";
    case PredictorPool::mean: return "mean";
    case PredictorPool::sep_token: return "sep_token";
  }
  return "?";
}

inline PredictorPool parse_predictor_pool(const std::string& s) {
  if (s == "last_token") return PredictorPool::last_token;
  if (s == "mean") return PredictorPool::mean;
  if (s == "sep_token") return PredictorPool::sep_token;
  throw std::invalid_argument("unknown pooling '" + s + "'");
}

/// Pooled 1×d representation: last input token, mean over input tokens, or the SEP state.
inline Matrix pooled_representation(const Model& model, const std::string& text,
                                    PredictorPool pool_spec) {
  const TokenSequence in = frame_input(text);
  const ForwardResult fr = forward(model, in);
  const auto n = static_cast<Eigen::Index>(in.size()) - 1;  // X tokens, SEP excluded
  if (pool_spec == PredictorPool::sep_token) {
    Matrix out = fr.states.values.bottomRows(1);
    return out;
  }
  if (n < 1) throw std::invalid_argument("pooled_representation: empty input text");
  HiddenStates span{fr.states.values.topRows(n), 0};
  return pool(span, pool_spec == PredictorPool::last_token ? PoolSpec::last_token : PoolSpec::mean);
}

/// States of the whole free-running sequence [X, SEP, generated].
inline HiddenStates generative_states(const Model& model, const std::string& text, int max_new) {
  const TokenSequence in = frame_input(text);
  const int room = model.config.context_len - static_cast<int>(in.size());
  const Generation gen =
      generate(model, in, GenerateOptions{std::min(max_new, room), true, false});
  std::vector<int> seq = concat(in, gen.tokens);
  const ForwardResult fr = forward(model, std::span<const int>(seq));
  return fr.states;
}

/// One-hot class or the scalar target.
inline Matrix target_representation(const Example& ex, TaskKind task, int num_classes) {
  if (task == TaskKind::classification) {
    Matrix out = Matrix::Zero(1, num_classes);
    out(0, ex.class_id()) = 1.0;
    return out;
  }
  return Matrix::Constant(1, 1, ex.value());
}

inline Matrix stack_rows(const std::vector<Matrix>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: nothing to stack");
  Matrix out(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = rows[i].reshaped<Eigen::RowMajor>().transpose();
  }
  return out;
}

struct DpiResult {
  MIEstimate pooled;
  MIEstimate full;
};

/// Same estimator configuration on both sides.
inline DpiResult dpi_compare_representations(const Matrix& y, const Matrix& pooled,
                                             const Matrix& reduced, const MineConfig& cfg) {
  return DpiResult{mine_estimate(y, pooled, cfg), mine_estimate(y, reduced, cfg)};
}

struct DpiInputs {
  TaskKind task = TaskKind::classification;
  int num_classes = 2;
  int k = 2;
  int max_new = 8;
  PredictorPool pooling = PredictorPool::last_token;
};

/// I(Y; Z_p) from the predictor's pooled states against I(Y; Z_r) from the generative model's
/// reduced per-sequence states, over every example given.
inline DpiResult dpi_compare(const Model& predictor, const Model& generative,
                             const std::vector<Example>& examples, const DpiInputs& in,
                             const MineConfig& cfg) {
  std::vector<Matrix> ys;
  std::vector<Matrix> pooled;
  std::vector<Matrix> reduced;
  for (const Example& ex : examples) {
    ys.push_back(target_representation(ex, in.task, in.num_classes));
    pooled.push_back(pooled_representation(predictor, ex.input_text, in.pooling));
    reduced.push_back(flatten(reduce_states(generative_states(generative, ex.input_text, in.max_new),
                                            in.k)));
  }
  return dpi_compare_representations(stack_rows(ys), stack_rows(pooled), stack_rows(reduced), cfg);
}

/// For each input position i, MINE between state Z_i and the state of the generated token at
/// `target_position` (0 = first generated token). Examples whose input is shorter than i + 1
/// are skipped for that position; positions with fewer usable examples than one batch are NaN.
inline Matrix token_mi_matrix(const Model& model, const std::vector<Example>& examples,
                              int target_position, int max_new, const MineConfig& cfg) {
  if (target_position < 0 || target_position >= max_new) {
    throw std::invalid_argument("token_mi_matrix: target_position outside generated span");
  }
  struct Item {
    Matrix states;
    std::size_t input_len;
  };
  std::vector<Item> items;
  std::size_t longest = 0;
  for (const Example& ex : examples) {
    const HiddenStates st = generative_states(model, ex.input_text, max_new);
    const std::size_t n = ex.input_text.size();
    const auto target_row = static_cast<Eigen::Index>(n + 1 + static_cast<std::size_t>(target_position));
    if (target_row >= st.values.rows()) continue;  // generation stopped early
    items.push_back({st.values, n});
    longest = std::max(longest, n);
  }
  Matrix out(static_cast<Eigen::Index>(longest), 1);
  for (std::size_t i = 0; i < longest; ++i) {
    std::vector<Matrix> zi;
    std::vector<Matrix> zt;
    for (const Item& it : items) {
      if (it.input_len <= i) continue;
      zi.push_back(it.states.row(static_cast<Eigen::Index>(i)));
      zt.push_back(it.states.row(static_cast<Eigen::Index>(it.input_len + 1 +
                                                           static_cast<std::size_t>(target_position))));
    }
    if (zi.size() < static_cast<std::size_t>(cfg.batch_size)) {
      out(static_cast<Eigen::Index>(i), 0) = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    out(static_cast<Eigen::Index>(i), 0) = mine_estimate(stack_rows(zt), stack_rows(zi), cfg).nats;
  }
  return out;
}

}  // namespace predgen
