#ifndef CTSURV_COX_HPP
#define CTSURV_COX_HPP

// Elastic-net Cox proportional hazards.
//
// Objective (minimized):
//   f(beta) = -loglik_efron(beta) / n
//             + penalty * (l1_ratio * |beta|_1 + (1 - l1_ratio) / 2 * |beta|_2^2)
// on covariates centered by the training means. The solver is a proximal
// Newton method: each outer step minimizes the quadratic model of the smooth
// part plus the penalty by coordinate descent, followed by a backtracking
// line search on f. The Breslow estimator gives the baseline cumulative
// hazard on the centered design.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctsurv/dataio.hpp"
#include "ctsurv/error.hpp"

namespace ctsurv::cox {

struct Diagnostics {
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // f at the start and after each outer step
};

struct CoxModel {
  std::vector<std::string> feature_names;
  Eigen::VectorXd beta;
  Eigen::VectorXd train_means;
  std::vector<std::pair<double, double>> baseline_cumhaz;  // (time, H0), time ascending
  double penalty = 0.0;
  double l1_ratio = 0.0;
  Diagnostics diagnostics;
  std::optional<double> train_median_risk;  // median training partial hazard

  /// H0(t), right-continuous; 0 before the first event time.
  double cumulative_hazard(double t) const {
    auto it = std::upper_bound(baseline_cumhaz.begin(), baseline_cumhaz.end(), t,
                               [](double v, const auto& step) { return v < step.first; });
    if (it == baseline_cumhaz.begin()) return 0.0;
    return std::prev(it)->second;
  }
};

struct FitOptions {
  double penalty = 0.0;
  double l1_ratio = 0.0;
  int max_outer = 100;
  double tolerance = 1e-7;  // on max |delta beta|
  int max_inner_sweeps = 1000;
  double inner_tolerance = 1e-12;
};

// ---------------------------------------------------------------------------
// Efron partial likelihood

struct EfronValue {
  double loglik = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;  // of loglik (negative semidefinite); empty unless requested
};

/// Survival data sorted once for repeated likelihood evaluations.
class RiskSets {
 public:
  RiskSets(std::span<const double> time, std::span<const int> event)
      : time_(time.begin(), time.end()), event_(event.begin(), event.end()) {
    if (time.size() != event.size()) throw Error(Errc::length_mismatch, "time and event lengths differ");
    order_.resize(time.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return time_[a] > time_[b]; });
    // Groups of equal time, from the latest time down.
    for (std::size_t i = 0; i < order_.size();) {
      std::size_t j = i;
      while (j < order_.size() && time_[order_[j]] == time_[order_[i]]) ++j;
      groups_.emplace_back(i, j);
      i = j;
    }
  }

  std::size_t size() const { return time_.size(); }
  const std::vector<double>& time() const { return time_; }
  const std::vector<int>& event() const { return event_; }
  int n_events() const { return std::accumulate(event_.begin(), event_.end(), 0); }

  /// Efron log partial likelihood for linear predictor x * beta.
  EfronValue evaluate(const Eigen::MatrixXd& x, const Eigen::VectorXd& beta, bool derivatives,
                      bool hessian) const {
    const auto p = x.cols();
    const Eigen::VectorXd eta = x * beta;
    const double shift = eta.size() ? eta.maxCoeff() : 0.0;
    EfronValue out;
    if (derivatives) out.gradient = Eigen::VectorXd::Zero(p);
    if (hessian) out.hessian = Eigen::MatrixXd::Zero(p, p);

    double s0 = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(derivatives ? p : 0);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(hessian ? p : 0, hessian ? p : 0);
    Eigen::VectorXd d1(derivatives ? p : 0), n1(derivatives ? p : 0);
    Eigen::MatrixXd d2(hessian ? p : 0, hessian ? p : 0), n2(hessian ? p : 0, hessian ? p : 0);

    for (const auto& [begin, end] : groups_) {
      double d0 = 0.0;
      int d = 0;
      if (derivatives) d1.setZero();
      if (hessian) d2.setZero();
      for (std::size_t k = begin; k < end; ++k) {
        const auto i = static_cast<Eigen::Index>(order_[k]);
        const double w = std::exp(eta(i) - shift);
        s0 += w;
        if (derivatives) s1.noalias() += w * x.row(i).transpose();
        if (hessian) s2.noalias() += w * x.row(i).transpose() * x.row(i);
        if (event_[order_[k]]) {
          ++d;
          d0 += w;
          out.loglik += eta(i);
          if (derivatives) {
            d1.noalias() += w * x.row(i).transpose();
            out.gradient.noalias() += x.row(i).transpose();
          }
          if (hessian) d2.noalias() += w * x.row(i).transpose() * x.row(i);
        }
      }
      for (int l = 0; l < d; ++l) {
        const double frac = static_cast<double>(l) / d;
        const double den = s0 - frac * d0;
        out.loglik -= std::log(den) + shift;
        if (derivatives) {
          n1 = s1 - frac * d1;
          out.gradient.noalias() -= n1 / den;
          if (hessian) {
            n2 = s2 - frac * d2;
            out.hessian.noalias() -= n2 / den - (n1 * n1.transpose()) / (den * den);
          }
        }
      }
    }
    return out;
  }

 private:
  std::vector<double> time_;
  std::vector<int> event_;
  std::vector<std::size_t> order_;
  std::vector<std::pair<std::size_t, std::size_t>> groups_;
};

inline double penalty_value(const Eigen::VectorXd& beta, double penalty, double l1_ratio) {
  return penalty * (l1_ratio * beta.lpNorm<1>() + 0.5 * (1.0 - l1_ratio) * beta.squaredNorm());
}

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

// ---------------------------------------------------------------------------
// Fitting

namespace detail {

inline void validate_design(const Eigen::MatrixXd& x, std::span<const double> time,
                            std::span<const int> event) {
  if (static_cast<std::size_t>(x.rows()) != time.size() || time.size() != event.size()) {
    throw Error(Errc::length_mismatch, "design rows, times and events differ in length");
  }
  if (!x.allFinite()) throw Error(Errc::non_finite, "design contains missing or non-finite values");
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (!std::isfinite(time[i]) || !(time[i] > 0.0)) throw Error(Errc::domain, "survival times must be positive");
    if (event[i] != 0 && event[i] != 1) throw Error(Errc::domain, "events must be 0 or 1");
  }
  if (std::none_of(event.begin(), event.end(), [](int e) { return e == 1; })) {
    throw Error(Errc::no_events, "Cox fit needs at least one event");
  }
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    if ((x.col(c).array() == x(0, c)).all()) {
      throw Error(Errc::constant_column, "column " + std::to_string(c) + " is constant");
    }
  }
}

// Minimizes g.(b - beta) + 1/2 (b - beta)' H (b - beta) + l2/2 |b|^2 + l1 |b|_1.
inline Eigen::VectorXd proximal_step(const Eigen::VectorXd& beta, const Eigen::VectorXd& g,
                                     const Eigen::MatrixXd& h, double l1, double l2,
                                     int max_sweeps, double tol) {
  const auto p = beta.size();
  Eigen::VectorXd b = beta;
  Eigen::VectorXd hd = Eigen::VectorXd::Zero(p);  // H (b - beta)
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double hjj = h(j, j);
      const double r = g(j) + hd(j) - hjj * (b(j) - beta(j));
      const double denom = std::max(hjj + l2, 1e-8);
      const double bj = soft_threshold(hjj * beta(j) - r, l1) / denom;
      const double delta = bj - b(j);
      if (delta != 0.0) {
        hd.noalias() += h.col(j) * delta;
        b(j) = bj;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    if (max_change < tol) break;
  }
  return b;
}

}  // namespace detail

/// Breslow cumulative hazard at distinct event times for linear predictor eta.
inline std::vector<std::pair<double, double>> breslow(const RiskSets& rs, const Eigen::VectorXd& eta) {
  const auto& t = rs.time();
  const auto& e = rs.event();
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return t[a] < t[b]; });
  // Risk-set sums from the latest time down, then cumulate upward.
  std::vector<std::pair<double, double>> steps;  // (time, increment)
  double risk = 0.0;
  for (std::size_t k = order.size(); k > 0;) {
    std::size_t j = k;
    int d = 0;
    const double tk = t[order[k - 1]];
    while (j > 0 && t[order[j - 1]] == tk) {
      risk += std::exp(eta(static_cast<Eigen::Index>(order[j - 1])));
      d += e[order[j - 1]];
      --j;
    }
    if (d > 0) steps.emplace_back(tk, d / risk);
    k = j;
  }
  std::reverse(steps.begin(), steps.end());
  double h = 0.0;
  for (auto& [time, inc] : steps) {
    h += inc;
    inc = h;
  }
  return steps;
}

inline CoxModel cox_fit(const Eigen::MatrixXd& x, std::span<const double> time,
                        std::span<const int> event, const FitOptions& opt,
                        std::vector<std::string> feature_names = {}) {
  if (opt.penalty < 0.0 || !(opt.l1_ratio >= 0.0 && opt.l1_ratio <= 1.0)) {
    throw Error(Errc::domain, "penalty must be >= 0 and l1_ratio in [0, 1]");
  }
  detail::validate_design(x, time, event);
  if (feature_names.empty()) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) feature_names.push_back("x" + std::to_string(c));
  }
  if (static_cast<Eigen::Index>(feature_names.size()) != x.cols()) {
    throw Error(Errc::size_mismatch, "feature name count does not match columns");
  }

  CoxModel m;
  m.feature_names = std::move(feature_names);
  m.penalty = opt.penalty;
  m.l1_ratio = opt.l1_ratio;
  m.train_means = x.colwise().mean().transpose();
  const Eigen::MatrixXd xc = x.rowwise() - m.train_means.transpose();
  const RiskSets rs(time, event);
  const double n = static_cast<double>(x.rows());
  const double l1 = opt.penalty * opt.l1_ratio;
  const double l2 = opt.penalty * (1.0 - opt.l1_ratio);

  auto objective = [&](const Eigen::VectorXd& b) {
    return -rs.evaluate(xc, b, false, false).loglik / n + penalty_value(b, opt.penalty, opt.l1_ratio);
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
  double f = objective(beta);
  m.diagnostics.objective_trace.push_back(f);
  for (int iter = 1; iter <= opt.max_outer; ++iter) {
    m.diagnostics.iterations = iter;
    const auto ev = rs.evaluate(xc, beta, true, true);
    const Eigen::VectorXd g = -ev.gradient / n;
    const Eigen::MatrixXd h = -ev.hessian / n;
    const Eigen::VectorXd target = detail::proximal_step(beta, g, h, l1, l2, opt.max_inner_sweeps, opt.inner_tolerance);
    const Eigen::VectorXd dir = target - beta;
    if (dir.lpNorm<Eigen::Infinity>() < opt.tolerance) {
      m.diagnostics.converged = true;
      break;
    }
    // Predicted decrease of the composite objective along dir.
    const double predicted = g.dot(dir) + penalty_value(target, opt.penalty, opt.l1_ratio) -
                             penalty_value(beta, opt.penalty, opt.l1_ratio);
    double step = 1.0;
    Eigen::VectorXd next = target;
    double f_next = objective(next);
    while (!(f_next <= f + 1e-4 * step * std::min(predicted, 0.0)) && step > 1e-10) {
      step *= 0.5;
      next = beta + step * dir;
      f_next = objective(next);
    }
    if (!(f_next <= f)) break;  // no descent possible: stalled
    const double moved = (next - beta).lpNorm<Eigen::Infinity>();
    beta = next;
    f = f_next;
    m.diagnostics.objective_trace.push_back(f);
    if (moved < opt.tolerance) {
      m.diagnostics.converged = true;
      break;
    }
  }
  m.beta = beta;
  m.diagnostics.objective = f;
  m.baseline_cumhaz = breslow(rs, xc * beta);
  return m;
}

inline CoxModel cox_fit(const Eigen::MatrixXd& x, const OutcomeTable& outcomes, double penalty,
                        double l1_ratio, std::vector<std::string> feature_names = {}) {
  FitOptions opt;
  opt.penalty = penalty;
  opt.l1_ratio = l1_ratio;
  return cox_fit(x, outcomes.time_months, outcomes.event, opt, std::move(feature_names));
}

// ---------------------------------------------------------------------------
// Prediction

inline void require_width(const CoxModel& m, Eigen::Index cols) {
  if (cols != m.beta.size()) {
    throw Error(Errc::size_mismatch, "expected " + std::to_string(m.beta.size()) + " features, got " +
                                         std::to_string(cols));
  }
}

inline double log_partial_hazard(const CoxModel& m, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  require_width(m, x.size());
  return (x - m.train_means.transpose()).dot(m.beta.transpose());
}

inline double partial_hazard(const CoxModel& m, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return std::exp(log_partial_hazard(m, x));
}

inline Eigen::VectorXd partial_hazards(const CoxModel& m, const Eigen::MatrixXd& x) {
  require_width(m, x.cols());
  return ((x.rowwise() - m.train_means.transpose()) * m.beta).array().exp();
}

/// Subset of `table` in the model's feature order.
inline Eigen::MatrixXd design_for(const CoxModel& m, const FeatureTable& table) {
  return table.select_features(m.feature_names).values;
}

inline double survival_function(const CoxModel& m, const Eigen::Ref<const Eigen::RowVectorXd>& x, double t) {
  if (t < 0.0) throw Error(Errc::domain, "survival time must be nonnegative");
  return std::exp(-m.cumulative_hazard(t) * partial_hazard(m, x));
}

inline Eigen::VectorXd survival_at(const CoxModel& m, const Eigen::MatrixXd& x, double t) {
  const double h0 = m.cumulative_hazard(t);
  return (-h0 * partial_hazards(m, x).array()).exp();
}

struct RiskGroups {
  double threshold = 0.0;
  std::vector<int> high;  // 1 = high risk
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw Error(Errc::empty_table, "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// High iff risk > threshold (strict).
inline RiskGroups split_at(std::span<const double> risks, double threshold) {
  RiskGroups g;
  g.threshold = threshold;
  for (double r : risks) g.high.push_back(r > threshold ? 1 : 0);
  return g;
}

/// Dichotomizes eval subjects at the median training partial hazard.
inline RiskGroups median_risk_groups(const CoxModel& m, const Eigen::MatrixXd& x_train,
                                     const Eigen::MatrixXd& x_eval) {
  const Eigen::VectorXd train = partial_hazards(m, x_train);
  const Eigen::VectorXd eval = partial_hazards(m, x_eval);
  return split_at(std::span<const double>(eval.data(), static_cast<std::size_t>(eval.size())),
                  median(std::vector<double>(train.begin(), train.end())));
}

}  // namespace ctsurv::cox

#endif  // CTSURV_COX_HPP
