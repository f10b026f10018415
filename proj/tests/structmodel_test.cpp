#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "actionrec/harness.hpp"
#include "actionrec/structmodel.hpp"
#include "structmodel_oracle.hpp"

using namespace actionrec;

namespace {

std::vector<double> v(std::initializer_list<double> l) { return l; }

std::vector<double> one_hot(std::size_t n, std::size_t i) {
  std::vector<double> r(n, 0.0);
  r[i] = 1.0;
  return r;
}

}  // namespace

// Examples are written 1-based (state j = 1..K); the library is 0-based.

TEST(FeatureMeasurement, BlockPlacement) {
  EXPECT_EQ(feature_measurement(v({0.1, 0.7, 0.2}), 1), v({0, 0, 0, 0.1, 0.7, 0.2, 0, 0, 0}));
  EXPECT_EQ(feature_measurement(v({1, 0, 0}), 0), one_hot(9, 0));
  std::mt19937_64 rng(1);
  for (int j = 0; j < 4; ++j) {
    const auto x = oracle::random_simplex(4, rng);
    const auto f = feature_measurement(x, j);
    EXPECT_NEAR(std::accumulate(f.begin(), f.end(), 0.0), 1.0, 1e-12);
  }
  EXPECT_THROW(feature_measurement(v({0.5, 0.5}), 2), DomainError);
  EXPECT_THROW(feature_measurement(v({0.5, 0.5}), -1), DomainError);
}

TEST(FeatureState, OneHotIndex) {
  EXPECT_EQ(feature_state(0, 0, 3), one_hot(9, 0));
  EXPECT_EQ(feature_state(1, 2, 3), one_hot(9, 5));
  EXPECT_NE(feature_state(0, 2, 3), feature_state(2, 0, 3));
  EXPECT_THROW(feature_state(3, 0, 3), DomainError);
}

TEST(FeatureClass, OneHotIndex) {
  EXPECT_EQ(feature_class(0, 0, 3), one_hot(6, 0));
  EXPECT_EQ(feature_class(1, 2, 3), one_hot(6, 5));
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) EXPECT_NE(feature_class(0, j, 3), feature_class(1, k, 3));
  EXPECT_THROW(feature_class(2, 0, 3), DomainError);
}

TEST(JointFeature, SingleSuperpixelHasNoPairs) {
  const auto psi = joint_feature({v({0.2, 0.8})}, {1}, 0, 2);
  ASSERT_EQ(psi.size(), 12u);
  for (std::size_t i = 4; i < 8; ++i) EXPECT_EQ(psi[i], 0.0);
}

TEST(JointFeature, TwoSuperpixelsOrderedPairs) {
  // h = (1, 2) one-based -> pairs (1,2) at index 1 and (2,1) at index 2.
  const auto psi = joint_feature({v({1, 0}), v({0, 1})}, {0, 1}, 1, 2);
  EXPECT_EQ(psi[4 + 0], 0.0);
  EXPECT_EQ(psi[4 + 1], 1.0);
  EXPECT_EQ(psi[4 + 2], 1.0);
  EXPECT_EQ(psi[4 + 3], 0.0);
  EXPECT_EQ(psi[8 + 2 + 0], 1.0);
  EXPECT_EQ(psi[8 + 2 + 1], 1.0);
}

TEST(JointFeature, BlockSums) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 2 + rng() % 4, T = 1 + rng() % 7;
    const int y = static_cast<int>(rng() % 2);
    const auto x = oracle::random_measurements(K, T, rng);
    const auto h = oracle::random_assignment(K, T, rng);
    const auto psi = joint_feature(x, h, y, K);
    const auto sum = [&](std::size_t a, std::size_t b) {
      return std::accumulate(psi.begin() + static_cast<std::ptrdiff_t>(a),
                             psi.begin() + static_cast<std::ptrdiff_t>(b), 0.0);
    };
    EXPECT_NEAR(sum(0, K * K), static_cast<double>(T), 1e-9);
    EXPECT_EQ(sum(K * K, 2 * K * K), static_cast<double>(T * (T - 1)));
    EXPECT_EQ(sum(2 * K * K + K * y, 2 * K * K + K * y + K), static_cast<double>(T));
    EXPECT_EQ(sum(2 * K * K + K * (1 - y), 2 * K * K + K * (1 - y) + K), 0.0);
  }
}

TEST(JointFeature, LengthMismatch) {
  EXPECT_THROW(joint_feature({v({1, 0})}, {0, 1}, 0, 2), ShapeError);
  EXPECT_THROW(joint_feature({v({1, 0, 0})}, {0}, 0, 2), ShapeError);
}

TEST(Score, DotProductMatchesThreeSums) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t K = 2 + rng() % 4, T = 1 + rng() % 6;
    auto m = oracle::random_model(K, rng);
    m.normalize_pairs = trial % 3 == 0;
    const auto x = oracle::random_measurements(K, T, rng);
    const auto h = oracle::random_assignment(K, T, rng);
    const int y = static_cast<int>(rng() % 2);
    const double via_psi = oracle::dot(joint_feature(x, h, y, K, m.normalize_pairs), m.w);
    const double direct = oracle::three_sum_score(m, x, h, y);
    EXPECT_NEAR(via_psi, direct, 1e-9);
    EXPECT_NEAR(score(m, x, h, y), direct, 1e-9);
  }
}

TEST(InitLatent, ArgmaxWithLowestTie) {
  ExampleMeasurements x(4, one_hot(7, 4));
  EXPECT_EQ(init_latent(x), LatentAssignment(4, 4));
  EXPECT_EQ(init_latent({ScoreVector(5, 0.2)}), LatentAssignment{0});
  std::mt19937_64 rng(4);
  const auto xr = oracle::random_measurements(6, 5, rng);
  const auto h = init_latent(xr);
  for (std::size_t t = 0; t < xr.size(); ++t) EXPECT_EQ(h[t], static_cast<int>(argmax_lowest(xr[t])));
}

TEST(InferGreedy, SingleSuperpixelIsExact) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + rng() % 5;
    const auto m = oracle::random_model(K, rng);
    const auto x = oracle::random_measurements(K, 1, rng);
    const auto g = infer_greedy(m, x);
    const auto e = infer_exact(m, x);
    EXPECT_EQ(g.y, e.y);
    EXPECT_EQ(g.h, e.h);
    EXPECT_EQ(g.score, e.score);
  }
}

TEST(InferGreedy, NoCouplingConvergesInOneSweep) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 2 + rng() % 3, T = 1 + rng() % 6;
    auto m = oracle::random_model(K, rng);
    for (double& w : m.state_block()) w = 0.0;
    const auto x = oracle::random_measurements(K, T, rng);
    const auto g = infer_greedy(m, x);
    EXPECT_EQ(g.sweeps, 1);
    const auto e = infer_exact(m, x);
    EXPECT_EQ(g.y, e.y);
    EXPECT_EQ(g.h, e.h);
    // independent per-superpixel argmax for the chosen label
    for (std::size_t t = 0; t < T; ++t) {
      double best = -1e300;
      int arg = 0;
      for (std::size_t j = 0; j < K; ++j) {
        const double s = oracle::dot(feature_measurement(x[t], static_cast<int>(j)), m.measurement_block()) +
                         m.class_block()[K * g.y + j];
        if (s > best) {
          best = s;
          arg = static_cast<int>(j);
        }
      }
      EXPECT_EQ(g.h[t], arg);
    }
  }
}

TEST(InferGreedy, NeverBeatsExact) {
  std::mt19937_64 rng(7);
  int equal = 0;
  const int trials = 300;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t K = 2 + rng() % 2, T = 1 + rng() % 6;
    const auto m = oracle::random_model(K, rng);
    const auto x = oracle::random_measurements(K, T, rng);
    const auto g = infer_greedy(m, x);
    const auto e = infer_exact(m, x);
    EXPECT_LE(g.score, e.score + 1e-12);
    EXPECT_DOUBLE_EQ(g.score, score(m, x, g.h, g.y));
    equal += g.score == e.score;
  }
  RecordProperty("greedy_exact_equal", equal);
  EXPECT_GT(equal, trials / 2);
}

TEST(InferGreedy, SweepsNeverDecreaseScore) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t K = 3, T = 2 + rng() % 6;
    const auto m = oracle::random_model(K, rng);
    const auto x = oracle::random_measurements(K, T, rng);
    const auto start = oracle::random_assignment(K, T, rng);
    for (int y = 0; y <= 1; ++y) {
      const double before = score(m, x, start, y);
      double prev = before;
      for (int sweeps = 1; sweeps <= 5; ++sweeps) {
        const auto r = infer_greedy_for_label(m, x, y, &start, {sweeps});
        EXPECT_GE(r.score, prev - 1e-12);
        prev = r.score;
      }
    }
  }
}

TEST(InferExact, ZeroModel) {
  ActionModel m(3);
  const auto x = ExampleMeasurements(4, ScoreVector{0.2, 0.5, 0.3});
  const auto e = infer_exact(m, x);
  EXPECT_EQ(e.y, 0);
  EXPECT_EQ(e.h, LatentAssignment(4, 0));
  EXPECT_EQ(e.score, 0.0);
}

TEST(InferExact, EnumeratesEveryAssignment) {
  // T = 4, K = 3: 81 assignments per label, 162 in total. Give exactly one
  // assignment a distinguishing bonus and check the enumeration finds it.
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto target = oracle::random_assignment(3, 4, rng);
    const int ty = static_cast<int>(rng() % 2);
    ActionModel m(3);
    // class block alone cannot single out an assignment; use the measurement
    // block with one-hot measurements equal to the target.
    ExampleMeasurements xo;
    for (int j : target) xo.push_back(one_hot(3, static_cast<std::size_t>(j)));
    for (int j = 0; j < 3; ++j) m.measurement_block()[3 * j + j] = 1.0;
    m.class_block()[3 * ty] = m.class_block()[3 * ty + 1] = m.class_block()[3 * ty + 2] = 0.01;
    const auto e = infer_exact(m, xo);
    EXPECT_EQ(e.h, target);
    EXPECT_EQ(e.y, ty);
  }
}

TEST(InferExact, CapacityLimit) {
  ActionModel m(23);
  EXPECT_THROW(infer_exact(m, ExampleMeasurements(6, ScoreVector(23, 1.0 / 23))), CapacityError);
}

TEST(InferLossAugmented, ZeroModelFlipsLabel) {
  ActionModel m(4);
  const auto x = ExampleMeasurements(3, ScoreVector(4, 0.25));
  EXPECT_EQ(infer_loss_augmented(m, x, 0).y, 1);
  EXPECT_EQ(infer_loss_augmented(m, x, 1).y, 0);
  EXPECT_EQ(infer_loss_augmented(m, x, 1).score, 1.0);
}

TEST(InferLossAugmented, LargeMarginKeepsPrediction) {
  ActionModel m(3);
  m.class_block()[3 + 0] = m.class_block()[3 + 1] = m.class_block()[3 + 2] = 2.0;  // y = 1 wins by 2T
  const auto x = ExampleMeasurements(2, ScoreVector{0.6, 0.3, 0.1});
  const auto g = infer_greedy(m, x);
  const auto a = infer_loss_augmented(m, x, 1);
  EXPECT_EQ(g.y, 1);
  EXPECT_EQ(a.y, g.y);
  EXPECT_EQ(a.h, g.h);
  EXPECT_EQ(a.score, g.score);
}

TEST(InferLossAugmented, MatchesExactOnNoCouplingInstances) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 2 + rng() % 2, T = 1 + rng() % 5;
    auto m = oracle::random_model(K, rng);
    for (double& w : m.state_block()) w = 0.0;
    const auto x = oracle::random_measurements(K, T, rng);
    const int gt = static_cast<int>(rng() % 2);
    const auto a = infer_loss_augmented(m, x, gt);
    const auto e = infer_exact(m, x, gt);
    EXPECT_EQ(a.y, e.y);
    EXPECT_EQ(a.h, e.h);
    EXPECT_NEAR(a.score, e.score, 1e-12);
  }
}

TEST(InferLossAugmented, BoundedByExactAndDominatesGreedy) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t K = 2 + rng() % 2, T = 1 + rng() % 5;
    const auto m = oracle::random_model(K, rng);
    const auto x = oracle::random_measurements(K, T, rng);
    const int gt = static_cast<int>(rng() % 2);
    const auto a = infer_loss_augmented(m, x, gt);
    EXPECT_LE(a.score, infer_exact(m, x, gt).score + 1e-12);
    const auto g = infer_greedy(m, x);
    if (g.y != gt) {
      EXPECT_GE(a.score, g.score);
    }
  }
}

namespace {

double accuracy(const ActionModel& m, const std::vector<ActionExample>& data) {
  int ok = 0;
  for (const auto& ex : data) ok += infer_greedy(m, ex.x).y == ex.y;
  return static_cast<double>(ok) / static_cast<double>(data.size());
}

SynthData small_synth(std::uint64_t seed, double noise = 0.0) {
  SynthConfig sc;
  sc.K = 3;
  sc.t_min = 2;
  sc.t_max = 5;
  sc.N = 80;
  sc.noise = noise;
  sc.seed = seed;
  return synth_generate(sc);
}

}  // namespace

TEST(TrainLssvm, SeparableSyntheticTrainingAccuracy) {
  const auto data = small_synth(1);
  // The rule is representable: a hand-built w separates the data under exact
  // inference.
  ActionModel hand(3);
  for (int j = 0; j < 3; ++j) hand.measurement_block()[3 * j + j] = 10.0;
  for (int j = 0; j < 2; ++j) hand.class_block()[3 + j] = -1.0;
  hand.class_block()[3 + 2] = 10.0;
  for (const auto& ex : data.examples) EXPECT_EQ(infer_exact(hand, ex.x).y, ex.y);

  LssvmConfig cfg;
  cfg.seed = 2;
  const auto m = train_lssvm(data.examples, 3, cfg);
  EXPECT_GE(accuracy(m, data.examples), 0.95);
}

TEST(TrainLssvm, DeterministicForSeed) {
  const auto data = small_synth(3, 0.1);
  LssvmConfig cfg;
  cfg.seed = 4;
  const auto a = train_lssvm(data.examples, 3, cfg);
  const auto b = train_lssvm(data.examples, 3, cfg);
  EXPECT_EQ(a.w, b.w);
}

TEST(TrainLssvm, DuplicatedDataKeepsLatentAssignments) {
  // Doubling N and halving C leaves lambda = 1/(C N) and the objective's
  // minimizer unchanged.
  const auto data = small_synth(5, 0.1);
  auto doubled = data.examples;
  doubled.insert(doubled.end(), data.examples.begin(), data.examples.end());
  LssvmConfig cfg;
  cfg.seed = 6;
  cfg.epochs = 100;
  TrainingTrace ta, tb;
  train_lssvm(data.examples, 3, cfg, &ta);
  LssvmConfig half = cfg;
  half.C = cfg.C / 2;
  half.epochs = cfg.epochs / 2;
  train_lssvm(doubled, 3, half, &tb);
  const std::size_t rounds = std::min(ta.latent.size(), tb.latent.size());
  ASSERT_GE(rounds, 1u);
  for (std::size_t r = 0; r < rounds; ++r)
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
      EXPECT_EQ(ta.latent[r][i], tb.latent[r][i]) << "round " << r << " example " << i;
      EXPECT_EQ(tb.latent[r][i], tb.latent[r][i + data.examples.size()]);
    }
}

TEST(TrainLssvm, Errors) {
  std::vector<ActionExample> one_label = {{{ScoreVector{0.5, 0.5}}, 1}, {{ScoreVector{0.9, 0.1}}, 1}};
  EXPECT_THROW(train_lssvm(one_label, 2, {}), DegenerateDataError);
  std::vector<ActionExample> ok = {{{ScoreVector{0.5, 0.5}}, 1}, {{ScoreVector{0.9, 0.1}}, 0}};
  LssvmConfig bad;
  bad.C = 0;
  EXPECT_THROW(train_lssvm(ok, 2, bad), DomainError);
  EXPECT_THROW(train_lssvm(ok, 3, {}), ShapeError);
}

TEST(RegularizedRisk, ZeroModelIsCTimesN) {
  const auto data = small_synth(7);
  ActionModel zero(3);
  EXPECT_DOUBLE_EQ(regularized_risk(zero, data.examples, 1.0), 80.0);
  EXPECT_DOUBLE_EQ(regularized_risk(zero, data.examples, 0.5), 40.0);
}

TEST(RegularizedRisk, TrainingReducesRiskAndSlack) {
  const auto data = small_synth(8);
  LssvmConfig cfg;
  cfg.seed = 1;
  const auto m = train_lssvm(data.examples, 3, cfg);
  const double trained = regularized_risk(m, data.examples, cfg.C);
  EXPECT_LT(trained, regularized_risk(ActionModel(3), data.examples, cfg.C));
  double reg = 0;
  for (double w : m.w) reg += w * w;
  const double slack = trained - 0.5 * reg;
  EXPECT_LT(slack, 0.05 * static_cast<double>(data.examples.size()));
}

TEST(ActionModelJson, RoundTrip) {
  std::mt19937_64 rng(12);
  auto m = oracle::random_model(4, rng);
  m.normalize_pairs = true;
  const auto doc = action_model_to_json(m);
  EXPECT_EQ(doc["blocks"]["measurement"].size(), 16u);
  EXPECT_EQ(doc["blocks"]["state"].size(), 16u);
  EXPECT_EQ(doc["blocks"]["class"].size(), 8u);
  const auto back = action_model_from_json(Json::parse(doc.dump()));
  EXPECT_EQ(back.w, m.w);
  EXPECT_TRUE(back.normalize_pairs);
  auto broken = doc;
  broken["blocks"]["class"].erase(0);
  EXPECT_THROW(action_model_from_json(broken), FormatError);
}

TEST(ActionModel, FullSizeParameterCount) {
  EXPECT_EQ(ActionModel(23).w.size(), 1104u);
}
