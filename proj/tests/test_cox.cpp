#include <gtest/gtest.h>

#include "ctsurv/cox.hpp"
#include "ctsurv/metrics.hpp"
#include "ctsurv/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctsurv;

namespace {

struct Data {
  Eigen::MatrixXd x;
  std::vector<double> t;
  std::vector<int> e;
};

Data toy_data(Eigen::Index n, Eigen::Index p, std::uint64_t seed, bool coarse_times = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::exponential_distribution<double> ex(0.1);
  std::bernoulli_distribution ev(0.7);
  Data d;
  d.x.resize(n, p);
  for (Eigen::Index i = 0; i < d.x.size(); ++i) d.x.data()[i] = nd(rng);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = ex(rng);
    d.t.push_back(coarse_times ? std::ceil(t / 3.0) : t);
    d.e.push_back(ev(rng) ? 1 : 0);
  }
  d.e[0] = 1;
  return d;
}

Data from_cohort(const synth::Cohort& c) {
  return {c.features.values, c.outcomes.time_months, c.outcomes.event};
}

cox::FitOptions opts(double penalty, double l1 = 0.0) {
  cox::FitOptions o;
  o.penalty = penalty;
  o.l1_ratio = l1;
  return o;
}

}  // namespace

TEST(Efron, MatchesDirectDefinitionWithTies) {
  const auto d = toy_data(40, 3, 1, true);
  const cox::RiskSets rs(d.t, d.e);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (int k = 0; k < 5; ++k) {
    Eigen::VectorXd b(3);
    b << nd(rng), nd(rng), nd(rng);
    EXPECT_NEAR(rs.evaluate(d.x, b, false, false).loglik, oracle::efron_loglik(d.x, d.t, d.e, b), 1e-9);
  }
}

TEST(Efron, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 0.7);
  for (int k = 0; k < 10; ++k) {
    const auto d = toy_data(40, 4, 100 + static_cast<std::uint64_t>(k), k % 2 == 0);
    const cox::RiskSets rs(d.t, d.e);
    Eigen::VectorXd b(4);
    for (int j = 0; j < 4; ++j) b(j) = nd(rng);
    const auto g = rs.evaluate(d.x, b, true, false).gradient;
    Eigen::VectorXd fd(4);
    const double h = 1e-5;
    for (int j = 0; j < 4; ++j) {
      Eigen::VectorXd up = b, dn = b;
      up(j) += h;
      dn(j) -= h;
      fd(j) = (rs.evaluate(d.x, up, false, false).loglik - rs.evaluate(d.x, dn, false, false).loglik) / (2 * h);
    }
    EXPECT_LT((g - fd).norm() / fd.norm(), 1e-5);
    // Hessian against differences of the gradient
    const auto hs = rs.evaluate(d.x, b, true, true).hessian;
    for (int j = 0; j < 4; ++j) {
      Eigen::VectorXd up = b, dn = b;
      up(j) += h;
      dn(j) -= h;
      const Eigen::VectorXd col =
          (rs.evaluate(d.x, up, true, false).gradient - rs.evaluate(d.x, dn, true, false).gradient) / (2 * h);
      EXPECT_LT((hs.col(j) - col).norm(), 1e-5 * (1.0 + col.norm()));
    }
  }
}

TEST(CoxFit, RecoversGeneratingCoefficients) {
  synth::CohortSpec spec;
  spec.n_subjects = 200;
  spec.beta = {1.0, -0.5};
  spec.censoring_rate = 0.3;
  spec.seed = 4;
  const auto d = from_cohort(synth::gen_cohort(spec));
  const auto m = cox::cox_fit(d.x, d.t, d.e, opts(1e-6));
  EXPECT_TRUE(m.diagnostics.converged);
  // independent Newton on the exact partial likelihood (continuous times)
  const Eigen::MatrixXd xc = d.x.rowwise() - d.x.colwise().mean();
  const auto newton = oracle::cox_newton(xc, d.t, d.e);
  EXPECT_NEAR(m.beta(0), newton(0), 1e-3);
  EXPECT_NEAR(m.beta(1), newton(1), 1e-3);
  EXPECT_NEAR(m.beta(0), 1.0, 0.15);
  EXPECT_NEAR(m.beta(1), -0.5, 0.15);
}

TEST(CoxFit, ObjectiveNeverIncreases) {
  const auto d = toy_data(80, 5, 5);
  for (double l1 : {0.0, 0.5, 1.0}) {
    const auto m = cox::cox_fit(d.x, d.t, d.e, opts(0.05, l1));
    const auto& tr = m.diagnostics.objective_trace;
    ASSERT_GE(tr.size(), 2u);
    for (std::size_t k = 1; k < tr.size(); ++k) EXPECT_LE(tr[k], tr[k - 1] + 1e-15);
  }
}

TEST(CoxFit, LargeLassoPenaltyZeroesEverything) {
  const auto d = toy_data(60, 4, 6);
  const auto m = cox::cox_fit(d.x, d.t, d.e, opts(50.0, 1.0));
  for (int j = 0; j < 4; ++j) EXPECT_EQ(m.beta(j), 0.0);
}

TEST(CoxFit, PreconditionsAndFlatLikelihood) {
  Eigen::MatrixXd x(2, 1);
  x << 1.0, 1.0;
  std::vector<double> t{1.0, 2.0};
  std::vector<int> e{1, 1};
  EXPECT_EQ(code_of([&] { cox::cox_fit(x, t, e, opts(0.1)); }), Errc::constant_column);

  // two subjects failing together: the Efron likelihood is symmetric in beta
  Eigen::MatrixXd y(2, 1);
  y << -1.0, 1.0;
  std::vector<double> tied{3.0, 3.0};
  const auto m = cox::cox_fit(y, tied, e, opts(0.1));
  EXPECT_EQ(m.beta(0), 0.0);

  std::vector<int> none{0, 0};
  EXPECT_EQ(code_of([&] { cox::cox_fit(y, t, none, opts(0.1)); }), Errc::no_events);
  Eigen::MatrixXd bad = y;
  bad(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_EQ(code_of([&] { cox::cox_fit(bad, t, e, opts(0.1)); }), Errc::non_finite);
  EXPECT_EQ(code_of([&] { cox::cox_fit(y, t, e, opts(-1.0)); }), Errc::domain);
}

TEST(PartialHazard, ClosedForms) {
  cox::CoxModel m;
  m.beta = Eigen::VectorXd::Constant(1, std::log(2.0));
  m.train_means = Eigen::VectorXd::Constant(1, 3.0);
  Eigen::RowVectorXd at_mean(1), one_up(1);
  at_mean << 3.0;
  one_up << 4.0;
  EXPECT_EQ(cox::partial_hazard(m, at_mean), 1.0);
  EXPECT_NEAR(cox::partial_hazard(m, one_up), 2.0, 1e-15);
  Eigen::RowVectorXd more(1);
  more << 4.5;
  EXPECT_GT(cox::partial_hazard(m, more), cox::partial_hazard(m, one_up));
  Eigen::RowVectorXd wide(2);
  EXPECT_EQ(code_of([&] { cox::partial_hazard(m, wide); }), Errc::size_mismatch);
}

TEST(PartialHazard, ShiftInvariantRanking) {
  const auto d = toy_data(50, 3, 7);
  const auto m = cox::cox_fit(d.x, d.t, d.e, opts(0.01, 0.5));
  Eigen::MatrixXd shifted = d.x;
  shifted.col(1).array() += 1000.0;
  const auto m2 = cox::cox_fit(shifted, d.t, d.e, opts(0.01, 0.5));
  const Eigen::VectorXd a = cox::partial_hazards(m, d.x), b = cox::partial_hazards(m2, shifted);
  for (Eigen::Index i = 0; i < a.size(); ++i) EXPECT_NEAR(a(i), b(i), 1e-8 * a(i));
}

TEST(Survival, BreslowMatchesHandSum) {
  const auto d = toy_data(50, 2, 8);
  const auto m = cox::cox_fit(d.x, d.t, d.e, opts(0.01));
  const Eigen::VectorXd eta = (d.x.rowwise() - m.train_means.transpose()) * m.beta;
  const Eigen::RowVectorXd mean_row = m.train_means.transpose();
  std::vector<double> event_times;
  for (std::size_t i = 0; i < d.t.size(); ++i) if (d.e[i]) event_times.push_back(d.t[i]);
  std::sort(event_times.begin(), event_times.end());
  for (double at : {event_times[2], event_times[event_times.size() / 2], event_times.back()}) {
    const double want = std::exp(-oracle::breslow_h0(d.t, d.e, eta, at));
    EXPECT_NEAR(cox::survival_function(m, mean_row, at), want, 1e-8);
  }
  EXPECT_EQ(cox::survival_function(m, mean_row, 0.0), 1.0);
  const double last = cox::survival_function(m, mean_row, event_times.back());
  EXPECT_EQ(cox::survival_function(m, mean_row, event_times.back() * 10), last);
  EXPECT_EQ(code_of([&] { cox::survival_function(m, mean_row, -1.0); }), Errc::domain);
}

TEST(Survival, NullModelIsNonincreasingBaseline) {
  const auto d = toy_data(40, 2, 9);
  const auto m = cox::cox_fit(d.x, d.t, d.e, opts(100.0, 1.0));
  ASSERT_TRUE(m.beta.isZero());
  const Eigen::RowVectorXd row = d.x.row(0);
  double prev = 1.0;
  for (double t = 0.0; t < 60.0; t += 0.5) {
    const double s = cox::survival_function(m, row, t);
    EXPECT_LE(s, prev);
    prev = s;
    EXPECT_NEAR(s, std::exp(-oracle::breslow_h0(d.t, d.e, Eigen::VectorXd::Zero(40), t)), 1e-12);
  }
}

TEST(RiskGroups, MedianSplit) {
  std::vector<double> equal(6, 1.5);
  const auto g = cox::split_at(equal, cox::median(equal));
  EXPECT_EQ(std::count(g.high.begin(), g.high.end(), 1), 0);

  const double thr = cox::median({1, 2, 3, 4});
  EXPECT_EQ(thr, 2.5);
  std::vector<double> three{3.0};
  EXPECT_EQ(cox::split_at(three, thr).high[0], 1);

  const auto d = toy_data(40, 2, 10);
  const auto m = cox::cox_fit(d.x, d.t, d.e, opts(0.01));
  const auto groups = cox::median_risk_groups(m, d.x, d.x);
  EXPECT_EQ(std::count(groups.high.begin(), groups.high.end(), 1), 20);
  // oracle: sort and compare
  const Eigen::VectorXd r = cox::partial_hazards(m, d.x);
  std::vector<double> sorted(r.begin(), r.end());
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(groups.threshold, 0.5 * (sorted[19] + sorted[20]));
}
