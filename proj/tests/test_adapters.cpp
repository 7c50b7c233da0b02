#include "oracles.hpp"
#include "predgen/adapters.hpp"
#include "predgen/core/gradcheck.hpp"
#include "predgen/framing.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace predgen;

namespace {

TokenSequence text_tokens(const std::string& s, bool eos = true) {
  Vocab v;
  TokenSequence t;
  t.ids = v.encode(s);
  if (eos) t.ids.push_back(Vocab::kEos);
  return t;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST(AdaptClassify, ZeroWeightsGiveUniform) {
  Rng rng = make_rng(1);
  ClassifierHead head(5, 4, ClsSpec::last_generated_token, rng);
  head.weight().value.setZero();
  HiddenStates s{Matrix::Random(3, 4), 7};
  const Prediction p = adapt_classify(s, head);
  for (Eigen::Index c = 0; c < 5; ++c) EXPECT_NEAR(p.distribution(0, c), 0.2, 1e-15);
}

TEST(AdaptClassify, TwoClassAnalyticSoftmax) {
  Rng rng = make_rng(2);
  ClassifierHead head(2, 3, ClsSpec::last_generated_token, rng);
  Matrix states(2, 3);
  states << 0.3, -1.0, 2.0, 0.5, 0.25, -0.75;
  const Matrix v = states.row(1);
  head.weight().value << v, -v;
  const Prediction p = adapt_classify(HiddenStates{states, 0}, head);
  const double n2 = v.squaredNorm();
  EXPECT_NEAR(p.distribution(0, 0), sigmoid(2 * n2), 1e-14);
  EXPECT_NEAR(p.distribution(0, 1), 1 - sigmoid(2 * n2), 1e-14);
}

TEST(AdaptClassify, DistributionSumsToOne) {
  std::mt19937_64 rng(3);
  Rng hr = make_rng(3);
  for (ClsSpec spec : {ClsSpec::last_generated_token, ClsSpec::mean_of_generated}) {
    for (int trial = 0; trial < 100; ++trial) {
      ClassifierHead head(6, 8, spec, hr, 3.0);
      const Prediction p = adapt_classify(HiddenStates{oracle::random_matrix(4, 8, rng, 2.0), 0}, head);
      EXPECT_NEAR(p.distribution.sum(), 1.0, 1e-9);
      EXPECT_GE(p.distribution.minCoeff(), 0.0);
    }
  }
}

TEST(AdaptClassify, EmptySpanIsAnError) {
  Rng rng = make_rng(4);
  ClassifierHead head(3, 4, ClsSpec::mean_of_generated, rng);
  EXPECT_THROW(adapt_classify(HiddenStates{Matrix(0, 4), 0}, head), EmptySpanError);
}

TEST(AdaptClassify, MeanSpecAveragesRows) {
  Rng rng = make_rng(5);
  ClassifierHead head(3, 2, ClsSpec::mean_of_generated, rng);
  Matrix states(2, 2);
  states << 1, 3, 5, 7;
  const Matrix logits = (Matrix(1, 2) << 3, 5).finished() * head.weight().value.transpose();
  EXPECT_LT((adapt_classify(HiddenStates{states, 0}, head).distribution - softmax_row(logits)).norm(), 1e-15);
}

TEST(AdaptClassify, TapeLossGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  const Matrix states = oracle::random_matrix(3, 5, rng);
  const Matrix w = oracle::random_matrix(4, 5, rng);
  for (ClsSpec spec : {ClsSpec::last_generated_token, ClsSpec::mean_of_generated}) {
    Tape tape;
    Var sv = tape.variable(states);
    Var wv = tape.variable(w);
    tape.backward(classification_director_loss(sv, wv, spec, 2));
    auto f = [&](const Matrix& s, const Matrix& wm) {
      const Matrix cls = cls_embedding(s, spec);
      const Matrix logits = cls * wm.transpose();
      return -std::log(softmax_row(logits)(0, 2));
    };
    EXPECT_LT(max_relative_error(tape.grad(sv), finite_diff_grad([&](const Matrix& x) { return f(x, w); }, states, 1e-6)), 1e-7);
    EXPECT_LT(max_relative_error(tape.grad(wv), finite_diff_grad([&](const Matrix& x) { return f(states, x); }, w, 1e-6)), 1e-7);
  }
}

TEST(DecodeNumber, PaperExamples) {
  EXPECT_DOUBLE_EQ(decode_number(text_tokens("13.4")), 13.4);
  EXPECT_DOUBLE_EQ(decode_number(text_tokens("0.75")), 0.75);
  EXPECT_DOUBLE_EQ(decode_number(text_tokens("-007")), -7.0);
  EXPECT_DOUBLE_EQ(decode_number(text_tokens("42", false)), 42.0);
}

TEST(DecodeNumber, MalformedReportsPosition) {
  auto pos = [](const std::string& s) {
    try {
      decode_number(text_tokens(s));
    } catch (const DecodeError& e) {
      return static_cast<long>(e.position());
    }
    return -1L;
  };
  EXPECT_EQ(pos("..1"), 1);
  EXPECT_EQ(pos("1.2.3"), 3);
  EXPECT_EQ(pos("12a"), 2);
  EXPECT_EQ(pos("-"), 1);
  EXPECT_EQ(pos("4."), 2);
  EXPECT_EQ(pos(""), 0);
}

TEST(DecodeNumber, StopsAtFirstEos) {
  TokenSequence t = text_tokens("5");
  t.ids.push_back(Vocab{}.id('x'));
  EXPECT_EQ(decode_number(t), 5.0);
}

TEST(EncodeNumber, Examples) {
  Vocab v;
  EXPECT_EQ(v.decode(encode_number(0.75, 2).ids), "0.75");
  EXPECT_EQ(v.decode(encode_number(-1.5, 1).ids), "-1.5");
  EXPECT_EQ(v.decode(encode_number(0.005, 2).ids), "0.01");
  EXPECT_EQ(v.decode(encode_number(-0.004, 2).ids), "0.00");
  EXPECT_EQ(v.decode(encode_number(12, 0).ids), "12");
}

TEST(EncodeNumber, RejectsOverflowAndBadDecimals) {
  EXPECT_THROW(encode_number(1e6, 2), std::out_of_range);
  EXPECT_THROW(encode_number(1.0, 7), std::invalid_argument);
}

TEST(EncodeNumber, RoundTripWithinHalfUlpOfDecimals) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-999.0, 999.0);
  for (int decimals = 0; decimals <= 6; ++decimals) {
    const double tol = 0.5 * std::pow(10.0, -decimals) * (1 + 1e-9);
    for (int i = 0; i < 10000; ++i) {
      const double x = u(rng);
      TokenSequence t = encode_number(x, decimals);
      t.ids.push_back(Vocab::kEos);
      ASSERT_LE(std::abs(decode_number(t) - x), tol) << x << " @" << decimals;
    }
  }
}

TEST(RegressionDirector, EarlyMismatchCostsMore) {
  // Target "0.75"; candidates "0.76" (wrong at position 4) and "1.75" (wrong at position 1).
  const TokenSequence target = text_tokens("0.75", false);
  const OrderedPenalty alpha{{1.67, 1.33, 1.01, 1.00}};
  auto logits_for = [&](const std::string& predicted) {
    const TokenSequence p = text_tokens(predicted, false);
    Matrix l = Matrix::Zero(4, Vocab::size());
    for (Eigen::Index r = 0; r < 4; ++r) l(r, p.ids[static_cast<std::size_t>(r)]) = 3.0;
    return l;
  };
  const double near = regression_director_loss(logits_for("0.76"), target, alpha);
  const double far = regression_director_loss(logits_for("1.75"), target, alpha);
  EXPECT_GT(far, near);
}

TEST(Framing, InputAndGoldLayout) {
  Vocab v;
  const TokenSequence in = frame_input("2+3=");
  EXPECT_EQ(in.ids.back(), Vocab::kSep);
  EXPECT_EQ(in.size(), 5u);
  const Example cls{"x", 3, Split::train};
  EXPECT_EQ(gold_target(cls, {TaskKind::classification, 2}).ids,
            (std::vector<int>{v.id('3'), Vocab::kEos}));
  const Example reg{"x", 0.5, Split::train};
  EXPECT_EQ(v.decode(gold_target(reg, {TaskKind::regression, 2}).ids), "0.50<eos>");
}

TEST(Framing, DecodeClassRejectsMalformed) {
  EXPECT_EQ(decode_class(text_tokens("2"), 4), 2);
  EXPECT_EQ(decode_class(text_tokens("7"), 4), -1);
  EXPECT_EQ(decode_class(text_tokens("1.5"), 4), -1);
  EXPECT_EQ(decode_class(text_tokens("a"), 4), -1);
}
