#include "predgen/harness/ablate.hpp"
#include "predgen/harness/run.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace predgen;
using nlohmann::json;

namespace {

json tiny(const std::string& regime, const std::string& kind = "toy_classification") {
  return {{"regime", regime},
          {"seed", 3},
          {"model", {{"d_model", 16}, {"n_layers", 1}, {"n_heads", 2}, {"context_len", 32}}},
          {"dataset", {{"kind", kind}, {"train_size", 40}, {"test_size", 20}}},
          {"optimizer", {{"learning_rate", 1e-3}, {"steps", 6}, {"batch_size", 4}}}};
}

std::string config_error(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::vector<const Prepared*> first_batch(const TaskData& data, std::size_t n) {
  std::vector<const Prepared*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(&data.train[i]);
  return out;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("predgen_test_harness_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Config, UnknownKeysAreNamed) {
  json j = tiny("generator");
  j["learning_rate"] = 1.0;
  EXPECT_NE(config_error(j).find("unknown key 'learning_rate'"), std::string::npos);
  j = tiny("generator");
  j["model"]["width"] = 3;
  EXPECT_NE(config_error(j).find("model.width"), std::string::npos);
}

TEST(Config, RegimeForbidsForeignKeys) {
  json j = tiny("predictor");
  j["loss"] = "wdal";
  EXPECT_NE(config_error(j).find("'loss' is not allowed"), std::string::npos);
  j = tiny("predgen");
  j["pooling"] = "mean";
  EXPECT_NE(config_error(j).find("'pooling'"), std::string::npos);
  j = tiny("generator");
  j["max_steps_for_sampling"] = 10;
  EXPECT_FALSE(config_error(j).empty());
}

TEST(Config, ValueErrors) {
  json j = tiny("predgen");
  j["sampling_p"] = 1.5;
  EXPECT_FALSE(config_error(j).empty());
  j = tiny("predgen");
  j["ordered_alpha"] = {1.0, 1.5};
  EXPECT_FALSE(config_error(j).empty());
  j = tiny("predgen");
  j["task"] = "regression";
  EXPECT_NE(config_error(j).find("contradicts"), std::string::npos);
  EXPECT_NE(config_error(json{{"seed", 1}}).find("regime"), std::string::npos);
}

TEST(Config, CanonicalFormRoundTripsAndHashes) {
  const RunConfig a = parse_run_config(tiny("predgen"));
  const RunConfig b = parse_run_config(to_json(a));
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  json other = tiny("predgen");
  other["seed"] = 4;
  EXPECT_NE(config_hash(a), config_hash(parse_run_config(other)));
  EXPECT_EQ(run_dir_name(a).rfind("predgen-", 0), 0u);
}

TEST(Config, DatasetSeedFollowsRunSeedUnlessGiven) {
  json j = tiny("generator");
  EXPECT_EQ(parse_run_config(j).effective_dataset().seed, 3u);
  j["dataset"]["seed"] = 9;
  EXPECT_EQ(parse_run_config(j).effective_dataset().seed, 9u);
}

TEST(Config, PenaltyExtendsWithLastCoefficient) {
  const RunConfig c = parse_run_config(tiny("predgen"));
  const OrderedPenalty p = c.penalty(6);
  ASSERT_EQ(p.alpha.size(), 6u);
  EXPECT_EQ(p.alpha[0], 1.67);
  EXPECT_EQ(p.alpha[5], 1.00);
}

TEST(Training, SameSeedGivesIdenticalLosses) {
  for (const char* regime : {"predictor", "generator", "predgen"}) {
    json j = tiny(regime);
    if (std::string(regime) == "predgen") j["max_steps_for_sampling"] = 3;
    const RunConfig cfg = parse_run_config(j);
    const auto data = prepare_task(cfg);
    EXPECT_EQ(losses_csv(train(cfg, *data).losses), losses_csv(train(cfg, *data).losses)) << regime;
  }
}

TEST(Training, LossesAreFiniteAndRecorded) {
  json j = tiny("predgen", "toy_regression");
  j["max_steps_for_sampling"] = 2;
  const RunConfig cfg = parse_run_config(j);
  const auto data = prepare_task(cfg);
  const TrainedSystem sys = train_predgen(cfg, *data);
  ASSERT_EQ(sys.losses.size(), 6u);
  for (const LossRecord& r : sys.losses) {
    ASSERT_TRUE(r.writer && r.director);
    EXPECT_TRUE(std::isfinite(r.combined));
  }
  EXPECT_THROW(train_generator(cfg, *data), ConfigError);
}

TEST(Evaluation, UntrainedClassifierNearChance) {
  json j = tiny("predictor");
  j["dataset"]["test_size"] = 400;
  const RunConfig cfg = parse_run_config(j);
  const auto data = prepare_task(cfg);
  const Metrics m = evaluate(init_system(cfg), *data, Split::test);
  ASSERT_TRUE(m.accuracy);
  EXPECT_NEAR(*m.accuracy, 1.0 / cfg.num_classes, 0.1);
}

TEST(Evaluation, ConstantRegressionOutputScoresDatasetVariance) {
  const RunConfig cfg = parse_run_config(tiny("predictor", "toy_regression"));
  const auto data = prepare_task(cfg);
  TrainedSystem sys = init_system(cfg);
  const double c = 0.3;
  sys.head.at("predictor.w").value.setZero();
  sys.head.at("predictor.b").value.setConstant(c);
  double oracle = 0.0;
  for (const Prepared& p : data->test) oracle += (p.example->value() - c) * (p.example->value() - c);
  oracle /= static_cast<double>(data->test.size());
  EXPECT_NEAR(*evaluate(sys, *data, Split::test).mse, oracle, 1e-12);
}

TEST(Evaluation, DecodeFailureScoresWorstCase) {
  const RunConfig cfg = parse_run_config(tiny("generator", "toy_regression"));
  const auto data = prepare_task(cfg);
  TrainedSystem sys = init_system(cfg);
  sys.model.params.at("head.b").value(0, Vocab{}.id('a')) = 1e3;  // always emits letters
  const Metrics m = evaluate(sys, *data, Split::test);
  EXPECT_EQ(m.decode_failures, data->test.size());
  EXPECT_DOUBLE_EQ(*m.mse, 1.0);
  EXPECT_DOUBLE_EQ(*m.exact_match, 0.0);
}

TEST(Evaluation, ExactMatchOnArithmeticUsesIntegerTolerance) {
  const RunConfig cfg = parse_run_config(tiny("generator", "arithmetic"));
  const auto data = prepare_task(cfg);
  const Metrics m = evaluate(init_system(cfg), *data, Split::test);
  EXPECT_TRUE(m.exact_match);
  EXPECT_LE(*m.exact_match, 1.0);
}

TEST(PredGen, DirectorAndWriterShareOneForward) {
  for (const char* kind : {"toy_classification", "toy_regression"}) {
    json j = tiny("predgen", kind);
    j["sampling_p"] = 0.5;
    const RunConfig cfg = parse_run_config(j);
    const auto data = prepare_task(cfg);
    TrainedSystem sys = init_system(cfg);
    Tape tape;
    const BatchLoss bl = batch_loss(tape, sys, first_batch(*data, 4), 0);
    EXPECT_EQ(bl.director_state_ids, bl.forward_state_ids) << kind;
    EXPECT_EQ(bl.forward_state_ids.size(), 4u);
  }
}

TEST(PredGen, ZeroMixingWriterLossEqualsGenerator) {
  json pj = tiny("predgen");
  pj["sampling_p"] = 0.0;
  const RunConfig pc = parse_run_config(pj);
  const RunConfig gc = parse_run_config(tiny("generator"));
  const auto data = prepare_task(pc);
  TrainedSystem ps = init_system(pc);
  TrainedSystem gs = init_system(gc);
  const auto batch = first_batch(*data, 8);
  Tape t1;
  Tape t2;
  EXPECT_EQ(batch_loss(t1, ps, batch, 5).writer->scalar(), batch_loss(t2, gs, batch, 5).writer->scalar());
}

TEST(PredGen, DegenerateRegressionTraceEqualsWeightedGenerator) {
  json pj = tiny("predgen", "toy_regression");
  pj["sampling_p"] = 0.0;
  pj["loss"] = "director_only";
  pj["ordered_alpha"] = {1.0};
  json gj = tiny("generator", "toy_regression");
  gj["writer_reduction"] = "sum";
  const RunConfig pc = parse_run_config(pj);
  const RunConfig gc = parse_run_config(gj);
  const auto data = prepare_task(pc);
  const TrainedSystem ps = train(pc, *data);
  const TrainedSystem gs = train(gc, *data);
  ASSERT_EQ(ps.losses.size(), gs.losses.size());
  for (std::size_t i = 0; i < ps.losses.size(); ++i) {
    EXPECT_EQ(ps.losses[i].combined, gs.losses[i].combined) << "step " << i;
  }
}

TEST(Run, WritesArtifactsAndReloads) {
  const auto root = fresh_dir("run");
  const RunConfig cfg = parse_run_config(tiny("predgen"));
  const RunResult r = execute_run(cfg, root);
  EXPECT_EQ(r.dir, root / run_dir_name(cfg));
  for (const char* f : {"metrics.jsonl", "losses.csv", "metrics.json", "checkpoint.json"}) {
    EXPECT_TRUE(std::filesystem::exists(r.dir / f)) << f;
  }
  const TrainedSystem back = load_system(read_checkpoint((r.dir / "checkpoint.json").string()));
  const auto data = prepare_task(cfg);
  EXPECT_EQ(evaluate(back, *data, Split::test).accuracy, evaluate(r.system, *data, Split::test).accuracy);
  std::filesystem::remove_all(root);
}

TEST(Ablation, OneRowPerValue) {
  const auto root = fresh_dir("ablate");
  const RunConfig base = parse_run_config(tiny("predgen"));
  const auto rows = ablate(base, AblationAxis::loss_combiner, default_axis_values(AblationAxis::loss_combiner), root, 2);
  ASSERT_EQ(rows.size(), 4u);
  for (const AblationRow& row : rows) EXPECT_TRUE(std::filesystem::exists(root / row.run_dir));
  const std::string csv = ablation_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  std::filesystem::remove_all(root);
}

TEST(Ablation, AxisErrors) {
  EXPECT_THROW(parse_axis("width"), ConfigError);
  EXPECT_EQ(parse_axis("max_steps_for_sampling"), AblationAxis::sampling);
  EXPECT_THROW(apply_axis(parse_run_config(tiny("predictor")), AblationAxis::sampling, "50"), ConfigError);
  EXPECT_THROW(apply_axis(parse_run_config(tiny("predgen")), AblationAxis::sampling, "x"), ConfigError);
}

TEST(Samples, EveryShippedConfigParsesAndFitsItsModel) {
  std::size_t seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(PREDGEN_SAMPLES_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const RunConfig cfg = parse_run_config(read_json_file(entry.path().string()));
    EXPECT_NO_THROW(prepare_task(cfg)) << entry.path();
    ++seen;
  }
  EXPECT_EQ(seen, 9u);
}
