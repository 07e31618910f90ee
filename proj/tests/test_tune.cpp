#include <gtest/gtest.h>

#include "ctsurv/synth.hpp"
#include "ctsurv/tune.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctsurv;

namespace {

synth::Cohort cohort(std::size_t n, std::size_t noise, std::uint64_t seed) {
  synth::CohortSpec s;
  s.n_subjects = n;
  s.beta = {0.8, -0.6};
  s.n_noise_features = noise;
  s.seed = seed;
  return synth::gen_cohort(s);
}

}  // namespace

TEST(Tune, SingletonSpaceMatchesHandCrossValidation) {
  const auto c = cohort(120, 3, 1);
  tune::SearchSpace space;
  space.penalty_min = space.penalty_max = 0.05;
  space.l1_min = space.l1_max = 0.5;
  const auto& x = c.features.values;
  const auto& t = c.outcomes.time_months;
  const auto& e = c.outcomes.event;
  const auto res = tune::tune(x, t, e, space, 1, 5, 9);
  EXPECT_EQ(res.best.penalty, 0.05);
  EXPECT_EQ(res.best.l1_ratio, 0.5);

  // oracle: refit each fold and count pairs directly
  const auto folds = stratified_folds(e, 5, 9);
  double sum = 0.0;
  for (int f = 0; f < 5; ++f) {
    std::vector<Eigen::Index> tr, va;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == f ? va : tr).push_back(static_cast<Eigen::Index>(i));
    std::vector<double> ttr, tva;
    std::vector<int> etr, eva;
    for (auto i : tr) { ttr.push_back(t[static_cast<std::size_t>(i)]); etr.push_back(e[static_cast<std::size_t>(i)]); }
    for (auto i : va) { tva.push_back(t[static_cast<std::size_t>(i)]); eva.push_back(e[static_cast<std::size_t>(i)]); }
    cox::FitOptions o;
    o.penalty = 0.05;
    o.l1_ratio = 0.5;
    const auto m = cox::cox_fit(x(tr, Eigen::all), ttr, etr, o);
    const Eigen::VectorXd r = cox::partial_hazards(m, x(va, Eigen::all));
    const auto pc = oracle::concordance_pairs(tva, eva, std::vector<double>(r.begin(), r.end()));
    EXPECT_NEAR(res.trials[0].fold_cindex[static_cast<std::size_t>(f)], pc.value(), 1e-12);
    sum += pc.value();
  }
  EXPECT_NEAR(res.best_score, sum / 5.0, 1e-12);
}

TEST(Tune, DeterministicAndPicksArgmax) {
  const auto c = cohort(100, 4, 2);
  tune::SearchSpace space;
  space.pca_k = {1, 2, 3};
  const auto a = tune::tune(c.features.values, c.outcomes.time_months, c.outcomes.event, space, 12, 5, 3);
  const auto b = tune::tune(c.features.values, c.outcomes.time_months, c.outcomes.event, space, 12, 5, 3);
  ASSERT_EQ(a.trials.size(), 12u);
  for (std::size_t k = 0; k < a.trials.size(); ++k) {
    EXPECT_EQ(a.trials[k].params.penalty, b.trials[k].params.penalty);
    EXPECT_EQ(a.trials[k].params.pca_k, b.trials[k].params.pca_k);
    EXPECT_EQ(a.trials[k].fold_cindex, b.trials[k].fold_cindex);
    EXPECT_LE(a.trials[k].mean_cindex, a.best_score);
    EXPECT_GE(a.trials[k].params.penalty, space.penalty_min);
    EXPECT_LE(a.trials[k].params.penalty, space.penalty_max);
  }
  EXPECT_EQ(a.trials[static_cast<std::size_t>(a.best_trial)].mean_cindex, a.best_score);
  const auto other = tune::tune(c.features.values, c.outcomes.time_months, c.outcomes.event, space, 12, 5, 4);
  EXPECT_NE(a.trials[0].params.penalty, other.trials[0].params.penalty);
}

TEST(Tune, LogUniformPenaltyDraws) {
  tune::SearchSpace space;
  space.penalty_min = 1e-4;
  space.penalty_max = 1.0;
  int low_half = 0;
  const int n = 4000;
  for (int t = 0; t < n; ++t) low_half += tune::draw_trial(space, 5, t).penalty < 1e-2;
  EXPECT_NEAR(static_cast<double>(low_half) / n, 0.5, 0.03);
}

TEST(Tune, RejectsBadArguments) {
  const auto c = cohort(60, 1, 6);
  tune::SearchSpace space;
  EXPECT_EQ(code_of([&] { tune::tune(c.features.values, c.outcomes.time_months, c.outcomes.event, space, 0); }),
            Errc::domain);
  space.penalty_min = 0.0;
  EXPECT_EQ(code_of([&] { tune::tune(c.features.values, c.outcomes.time_months, c.outcomes.event, space, 1); }),
            Errc::domain);
  space.penalty_min = 1e-3;
  space.pca_k = {50};
  EXPECT_EQ(code_of([&] { tune::tune(c.features.values, c.outcomes.time_months, c.outcomes.event, space, 1); }),
            Errc::out_of_range);
}
