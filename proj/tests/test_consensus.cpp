#include <gtest/gtest.h>

#include "ctsurv/consensus.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctsurv;

TEST(Horizon, ValidityRule) {
  const std::vector<double> t{30, 40, 61, 60};
  const std::vector<int> e{1, 0, 0, 1};
  const auto s = consensus::valid_at_horizon(t, e, 60.0);
  EXPECT_EQ(s.valid, (std::vector<int>{1, 0, 1, 1}));
  EXPECT_EQ(s.truth, (std::vector<int>{1, 0, 0, 1}));
  EXPECT_EQ(code_of([&] { consensus::valid_at_horizon(t, e, 0.0); }), Errc::domain);
}

TEST(Youden, SeparableAndUninformative) {
  const std::vector<double> s{0.1, 0.2, 0.3, 0.7, 0.8};
  const std::vector<int> y{1, 1, 1, 0, 0};
  const auto r = consensus::youden_threshold(s, y);
  EXPECT_EQ(r.j, 1.0);
  EXPECT_DOUBLE_EQ(r.tau, 0.5);  // the only cut between the groups

  const std::vector<double> flat(6, 0.4);
  const std::vector<int> mixed{1, 0, 1, 0, 1, 0};
  EXPECT_EQ(consensus::youden_threshold(flat, mixed).j, 0.0);
  EXPECT_EQ(code_of([&] { consensus::youden_threshold(flat, std::vector<int>(6, 1)); }), Errc::single_class);
}

TEST(Youden, MatchesExhaustiveSweep) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> level(0, 20);
  std::bernoulli_distribution coin(0.4);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 50; ++i) {
      s.push_back(level(rng) / 20.0);
      y.push_back(coin(rng) ? 1 : 0);
    }
    if (std::count(y.begin(), y.end(), 1) == 0 || std::count(y.begin(), y.end(), 0) == 0) continue;
    const auto r = consensus::youden_threshold(s, y);
    EXPECT_EQ(r.j, oracle::best_youden(s, y));
    EXPECT_EQ(oracle::youden_j(s, y, r.tau), r.j);
    EXPECT_TRUE(std::isfinite(r.tau));
    // no smaller cut reaches the same J
    std::vector<double> lower;
    for (double v : s) if (v < r.tau) lower.push_back(v);
    for (double v : lower) EXPECT_LT(oracle::youden_j(s, y, v), r.j);
  }
}

TEST(Classify, StrictInequality) {
  const std::vector<double> s{0.5, 0.0, 0.49, 0.51};
  EXPECT_EQ(consensus::classify_at_horizon(s, 0.5), (std::vector<int>{0, 1, 1, 0}));
  EXPECT_EQ(consensus::classify_at_horizon(std::vector<double>{0.0}, 1e-9)[0], 1);
  // raising tau only flips 0 -> 1
  const auto lo = consensus::classify_at_horizon(s, 0.3), hi = consensus::classify_at_horizon(s, 0.6);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_LE(lo[i], hi[i]);
}

TEST(ConsensusSubset, SmallCases) {
  const std::vector<int> a{1, 0, 1, 1};
  EXPECT_EQ(consensus::consensus_subset({a, a, a}).coverage, 1.0);
  auto b = a;
  b[2] = 0;
  const auto s = consensus::consensus_subset({a, b});
  EXPECT_EQ(s.members, (std::vector<std::size_t>{0, 1, 3}));
  EXPECT_EQ(s.labels, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(s.coverage, 0.75);
  EXPECT_EQ(code_of([&] { consensus::consensus_subset({a}); }), Errc::domain);
  EXPECT_EQ(code_of([&] { consensus::consensus_subset({a, std::vector<int>{1}}); }), Errc::length_mismatch);
}

TEST(ConsensusSubset, MatchesBruteForceAndNeverGrows) {
  std::mt19937_64 rng(32);
  std::bernoulli_distribution coin(0.8);
  std::vector<std::vector<int>> models;
  for (int m = 0; m < 5; ++m) {
    std::vector<int> v;
    for (int i = 0; i < 100; ++i) v.push_back(coin(rng) ? 1 : 0);
    models.push_back(v);
  }
  const auto s = consensus::consensus_subset(models);
  std::vector<std::size_t> want;
  for (std::size_t i = 0; i < 100; ++i) {
    bool same = true;
    for (std::size_t m = 1; m < models.size(); ++m) same = same && models[m][i] == models[0][i];
    if (same) want.push_back(i);
  }
  EXPECT_EQ(s.members, want);
  for (std::size_t k = 0; k < want.size(); ++k) {
    for (const auto& m : models) EXPECT_EQ(m[want[k]], s.labels[k]);
  }
  double prev = 1.0;
  for (std::size_t used = 2; used <= models.size(); ++used) {
    const auto c = consensus::consensus_subset({models.begin(), models.begin() + static_cast<std::ptrdiff_t>(used)}).coverage;
    EXPECT_LE(c, prev);
    prev = c;
  }
}

TEST(ClassificationMetrics, ConfusionRatios) {
  std::vector<int> pred, truth;
  auto add = [&](int p, int t, int count) {
    for (int i = 0; i < count; ++i) {
      pred.push_back(p);
      truth.push_back(t);
    }
  };
  add(1, 1, 41);
  add(0, 1, 1);
  add(0, 0, 4);
  add(1, 0, 2);
  const auto m = consensus::classification_metrics(pred, truth);
  EXPECT_NEAR(*m.sensitivity, 0.976, 1e-3);
  EXPECT_NEAR(*m.specificity, 0.667, 1e-3);
  EXPECT_EQ(*m.sensitivity, 41.0 / 42.0);
  EXPECT_EQ(m.accuracy, 45.0 / 48.0);

  const auto perfect = consensus::classification_metrics(truth, truth);
  EXPECT_EQ(perfect.accuracy, 1.0);
  EXPECT_EQ(*perfect.sensitivity, 1.0);
  EXPECT_EQ(*perfect.specificity, 1.0);
  std::vector<int> flipped;
  for (int t : truth) flipped.push_back(1 - t);
  EXPECT_EQ(consensus::classification_metrics(flipped, truth).accuracy, 0.0);
  const auto only_pos = consensus::classification_metrics(std::vector<int>{1, 0}, std::vector<int>{1, 1});
  EXPECT_FALSE(only_pos.specificity.has_value());
  EXPECT_EQ(*only_pos.sensitivity, 0.5);
}

TEST(Ensemble, MeanAndZScore) {
  const std::vector<double> v{1.0, 4.0, -2.0};
  EXPECT_EQ(consensus::ensemble_risk({v, v}), v);
  std::vector<double> anti;
  for (double x : v) anti.push_back(-x + 6.0);
  for (double x : consensus::ensemble_risk({v, anti})) EXPECT_EQ(x, 3.0);

  std::mt19937_64 rng(33);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> three(3, std::vector<double>(10));
  for (auto& r : three) for (auto& x : r) x = nd(rng);
  const auto mean = consensus::ensemble_risk(three);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(mean[i], (three[0][i] + three[1][i] + three[2][i]) / 3.0, 1e-15);

  const auto z = consensus::ensemble_risk({v, anti}, consensus::EnsembleMode::zscore_mean, {{0.0, 2.0}, {1.0, 4.0}});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(z[i], (v[i] / 2.0 + (anti[i] - 1.0) / 4.0) / 2.0, 1e-15);
  EXPECT_EQ(code_of([&] { consensus::ensemble_risk({v, std::vector<double>{1.0}}); }), Errc::length_mismatch);
  EXPECT_EQ(code_of([&] { consensus::ensemble_risk({v, v}, consensus::EnsembleMode::zscore_mean); }), Errc::length_mismatch);
}

TEST(ConsensusReport, SubsetAndModelThresholds) {
  // two models that both rank perfectly on training data
  const std::vector<double> train_t{10, 20, 30, 70, 80, 90, 45};
  const std::vector<int> train_e{1, 1, 1, 0, 1, 0, 0};
  const std::vector<double> test_t{12, 25, 75, 85, 40};
  const std::vector<int> test_e{1, 1, 0, 0, 0};
  const std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  consensus::ModelHorizonInputs m1{"m1", {0.2, 0.3, 0.35, 0.8, 0.9, 0.95, 0.5}, {0.1, 0.6, 0.85, 0.9, 0.5}};
  consensus::ModelHorizonInputs m2{"m2", {0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 0.5}, {0.2, 0.25, 0.95, 0.8, 0.5}};
  const auto rep = consensus::consensus_report(60.0, ids, train_t, train_e, test_t, test_e, {m1, m2});
  EXPECT_EQ(rep.valid_ids, (std::vector<std::string>{"a", "b", "c", "d"}));
  ASSERT_EQ(rep.models.size(), 2u);
  EXPECT_DOUBLE_EQ(rep.models[0].tau, 0.575);
  EXPECT_DOUBLE_EQ(rep.models[1].tau, 0.5);
  // m1 labels b as surviving (0.6 >= 0.575), m2 as an event
  EXPECT_EQ(rep.subset_ids, (std::vector<std::string>{"a", "c", "d"}));
  EXPECT_EQ(rep.coverage, 0.75);
  EXPECT_EQ(rep.metrics.accuracy, 1.0);
  ASSERT_TRUE(rep.metrics.t_auc.has_value());
  EXPECT_EQ(*rep.metrics.t_auc, 1.0);
}
