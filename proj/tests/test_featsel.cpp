#include <gtest/gtest.h>

#include "ctsurv/featsel.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctsurv;

namespace {

FeatureTable table(const Eigen::MatrixXd& v) {
  FeatureTable t;
  t.values = v;
  for (Eigen::Index r = 0; r < v.rows(); ++r) t.subject_ids.push_back("s" + std::to_string(r));
  for (Eigen::Index c = 0; c < v.cols(); ++c) t.feature_names.push_back("f" + std::to_string(c));
  return t;
}

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd x(n, p);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
  return x;
}

}  // namespace

TEST(Impute, CompleteTableUnchanged) {
  const auto t = table(gaussian(5, 3, 1));
  EXPECT_EQ(featsel::impute(t, featsel::ImputeStrategy::median).values, t.values);
}

TEST(Impute, MedianOfObserved) {
  Eigen::MatrixXd v(4, 1);
  v << 1, 2, kMissing, 100;
  const auto out = featsel::impute(table(v), featsel::ImputeStrategy::median);
  EXPECT_EQ(out.values(2, 0), 2.0);
}

TEST(Impute, TestRowsUseTrainingStatistic) {
  Eigen::MatrixXd train(3, 1), test(3, 1);
  train << 1, 2, 3;
  test << 100, kMissing, 200;
  const auto imp = featsel::fit_imputer(table(train), featsel::ImputeStrategy::median);
  EXPECT_EQ(featsel::apply_imputer(imp, table(test)).values(1, 0), 2.0);
  EXPECT_EQ(imp.fitted_on, table(train).subject_ids);
}

TEST(Impute, ModeAndConstantAndAllMissing) {
  Eigen::MatrixXd v(5, 1);
  v << 3, 3, 7, kMissing, 7.5;
  EXPECT_EQ(featsel::impute(table(v), featsel::ImputeStrategy::mode).values(3, 0), 3.0);
  EXPECT_EQ(featsel::impute(table(v), featsel::ImputeStrategy::constant).values(3, 0), -1.0);
  Eigen::MatrixXd gone = Eigen::MatrixXd::Constant(3, 1, kMissing);
  EXPECT_EQ(code_of([&] { featsel::fit_imputer(table(gone), featsel::ImputeStrategy::median); }),
            Errc::entirely_missing);
}

TEST(VarianceFilter, Boundaries) {
  // population variances: column 0 zero, column 1 one, column 2 1e-9
  const double a = std::sqrt(1e-9);
  Eigen::MatrixXd x(4, 3);
  x << 5, 0, -a,
       5, 2, -a,
       5, 0, a,
       5, 2, a;
  EXPECT_EQ(featsel::variance_filter(x, 1e-8), std::vector<std::size_t>{1});
  Eigen::MatrixXd unit(2, 1);
  unit << -1, 1;
  EXPECT_EQ(featsel::variance_filter(unit, 1e-8).size(), 1u);
}

TEST(CorrelationFilter, IdenticalColumns) {
  Eigen::MatrixXd x = gaussian(30, 2, 2);
  x.col(1) = x.col(0);
  const auto r = featsel::correlation_filter(x, 0.9);
  EXPECT_EQ(r.kept.size(), 1u);
  ASSERT_EQ(r.drops.size(), 1u);
  EXPECT_EQ(r.drops[0].dropped, 1u);  // tie: later column goes
}

TEST(CorrelationFilter, ThresholdIsInclusive) {
  // build a pair with |r| exactly representable around the threshold
  Eigen::MatrixXd base = gaussian(200, 2, 3);
  Eigen::MatrixXd x(200, 2);
  // orthogonalize so col1 = r * col0 + sqrt(1 - r^2) * noise with exact sample correlation
  Eigen::VectorXd u = base.col(0).array() - base.col(0).mean();
  Eigen::VectorXd w = base.col(1).array() - base.col(1).mean();
  w -= (w.dot(u) / u.dot(u)) * u;
  u.normalize();
  w.normalize();
  const double target = 0.69;
  x.col(0) = u;
  x.col(1) = target * u + std::sqrt(1 - target * target) * w;
  const double r = featsel::abs_correlation(x)(0, 1);
  EXPECT_NEAR(r, target, 1e-12);
  EXPECT_EQ(featsel::correlation_filter(x, 0.70).kept.size(), 2u);
  EXPECT_EQ(featsel::correlation_filter(x, r).kept.size(), 1u);
}

TEST(CorrelationFilter, SurvivorsHaveNoStrongPair) {
  Eigen::MatrixXd x = gaussian(100, 5, 4);
  x.col(1) = x.col(0) + 0.1 * x.col(1);
  x.col(3) = x.col(2) - 0.2 * x.col(3);
  for (double thr : {0.7, 0.9, 0.99}) {
    const auto r = featsel::correlation_filter(x, thr);
    const auto corr = featsel::abs_correlation(x);
    for (std::size_t a = 0; a < r.kept.size(); ++a)
      for (std::size_t b = a + 1; b < r.kept.size(); ++b)
        EXPECT_LT(corr(static_cast<Eigen::Index>(r.kept[a]), static_cast<Eigen::Index>(r.kept[b])), thr);
    // every dropped feature had a partner at or above the threshold
    for (const auto& d : r.drops) EXPECT_GE(d.abs_r, thr);
    EXPECT_TRUE(std::find(r.kept.begin(), r.kept.end(), 4u) != r.kept.end());
  }
  EXPECT_EQ(featsel::correlation_filter(x, 0.9).kept.size(), 3u);
}

TEST(StabilitySelect, FrequenciesAndRetention) {
  const Eigen::Index n = 60;
  Eigen::MatrixXd x = gaussian(n, 4, 5);
  x.col(1) = x.col(0);                 // always loses the tie
  x.col(3) = Eigen::VectorXd::Constant(n, 2.0);  // constant: removed up front
  std::vector<int> ev(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = i % 3 == 0;
  const std::vector<std::string> names{"a", "b", "c", "k"};
  const auto rep = featsel::stability_select(x, names, ev, 0.9, 5, 17);
  EXPECT_EQ(rep.dropped_constant, std::vector<std::string>{"k"});
  std::map<std::string, double> freq(rep.selection_frequency.begin(), rep.selection_frequency.end());
  EXPECT_EQ(freq["a"], 1.0);
  EXPECT_EQ(freq["b"], 0.0);
  EXPECT_EQ(freq["c"], 1.0);
  EXPECT_EQ(rep.retained, (std::vector<std::string>{"a", "c"}));
  for (const auto& [name, f] : rep.selection_frequency) {
    const bool kept = std::find(rep.retained.begin(), rep.retained.end(), name) != rep.retained.end();
    EXPECT_EQ(kept, f > 0.5) << name;
  }
  const auto again = featsel::stability_select(x, names, ev, 0.9, 5, 17);
  EXPECT_EQ(again.retained, rep.retained);
  EXPECT_EQ(again.fold_selected, rep.fold_selected);
}

TEST(StabilitySelect, TwoOfFiveFoldsIsNotRetained) {
  // b copies a except for noise on the rows of folds 0-2. A fold's training
  // split holds two noisy folds (f = 0..2, |r| high, b dropped) or three
  // (f = 3, 4, |r| lower, b kept); the threshold sits between the two levels.
  const Eigen::Index n = 100;
  std::vector<int> ev(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = i % 2;
  const std::uint64_t seed = 23;
  const auto folds = stratified_folds(ev, 5, seed);
  Eigen::MatrixXd x = gaussian(n, 2, 10);
  Eigen::VectorXd noise = gaussian(n, 1, 11).col(0);
  x.col(1) = x.col(0);
  for (Eigen::Index i = 0; i < n; ++i) if (folds[static_cast<std::size_t>(i)] <= 2) x(i, 1) += 0.8 * noise(i);

  std::vector<double> r(5);
  for (int f = 0; f < 5; ++f) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i) if (folds[static_cast<std::size_t>(i)] != f) rows.push_back(i);
    r[static_cast<std::size_t>(f)] = featsel::abs_correlation(x(rows, Eigen::all))(0, 1);
  }
  const double low_dropped = std::min({r[0], r[1], r[2]});
  const double high_kept = std::max(r[3], r[4]);
  ASSERT_LT(high_kept, low_dropped);
  const double thr = 0.5 * (low_dropped + high_kept);

  const auto rep = featsel::stability_select(x, {"a", "b"}, ev, thr, 5, seed);
  EXPECT_DOUBLE_EQ(rep.selection_frequency[1].second, 0.4);
  EXPECT_EQ(rep.retained, std::vector<std::string>{"a"});
}

TEST(StabilitySelect, NeedsEnoughPerStratum) {
  const Eigen::Index n = 20;
  Eigen::MatrixXd x = gaussian(n, 2, 6);
  std::vector<int> ev(static_cast<std::size_t>(n), 0);
  ev[0] = ev[1] = 1;
  EXPECT_EQ(code_of([&] { featsel::stability_select(x, {"a", "b"}, ev, 0.9, 5, 1); }), Errc::too_few_per_stratum);
}

TEST(Pca, RankOneDataReconstructs) {
  Eigen::MatrixXd x(10, 2);
  for (int i = 0; i < 10; ++i) x.row(i) << i - 3.0, 2.0 * (i - 3.0) + 1.0;
  const auto m = featsel::pca_fit(x, 1);
  const Eigen::MatrixXd z = featsel::pca_transform(m, x);
  const Eigen::MatrixXd back = (z * m.components).rowwise() + m.means;
  EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_GT(m.components(0, 0), 0.0);  // sign rule
}

TEST(Pca, IsotropicSampleHasBalancedVariances) {
  const auto x = gaussian(2000, 2, 7);
  const auto m = featsel::pca_fit(x, 2);
  // oracle: eigenvalues of the sample covariance directly
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((c.transpose() * c) / 1999.0);
  EXPECT_NEAR(m.explained_variance(0), es.eigenvalues()(1), 1e-10);
  EXPECT_NEAR(m.explained_variance(1), es.eigenvalues()(0), 1e-10);
  const double ratio = m.explained_variance(0) / m.explained_variance(1);
  EXPECT_GE(ratio, 0.7);
  EXPECT_LE(ratio, 1.4);
}

TEST(Pca, CentersAndPreservesDistancesAtFullRank) {
  const auto x = gaussian(12, 3, 8);
  const auto m = featsel::pca_fit(x, 3);
  const Eigen::MatrixXd mean_row = x.colwise().mean();
  EXPECT_LT(featsel::pca_transform(m, mean_row).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXd z = featsel::pca_transform(m, x);
  for (int a = 0; a < 12; ++a)
    for (int b = a + 1; b < 12; ++b)
      EXPECT_NEAR((z.row(a) - z.row(b)).norm(), (x.row(a) - x.row(b)).norm(), 1e-10);
  EXPECT_EQ(code_of([&] { featsel::pca_fit(x, 4); }), Errc::out_of_range);
  EXPECT_EQ(code_of([&] { featsel::pca_fit(x, 0); }), Errc::out_of_range);
}

TEST(Pca, WideDataUsesGramPath) {
  const auto x = gaussian(6, 20, 9);
  const auto m = featsel::pca_fit(x, 5);
  const Eigen::MatrixXd gram = m.components * m.components.transpose();
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
  // same subspace variance as the covariance route
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es((c.transpose() * c) / 5.0);
  EXPECT_NEAR(m.explained_variance(0), es.eigenvalues()(19), 1e-9);
}
