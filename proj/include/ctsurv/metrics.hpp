#ifndef CTSURV_METRICS_HPP
#define CTSURV_METRICS_HPP

// Survival evaluation: Harrell's C-index, Kaplan-Meier, log-rank,
// univariable hazard ratios, IPCW cumulative/dynamic AUC, and a seeded
// percentile bootstrap.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "ctsurv/cox.hpp"
#include "ctsurv/error.hpp"
#include "ctsurv/random.hpp"

namespace ctsurv::metrics {

inline double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

/// Upper tail of chi-square with 1 degree of freedom.
inline double chi2_1df_sf(double x) { return x <= 0.0 ? 1.0 : std::erfc(std::sqrt(x / 2.0)); }

// ---------------------------------------------------------------------------
// Concordance

struct ConcordanceCounts {
  std::int64_t concordant = 0;
  std::int64_t tied_risk = 0;
  std::int64_t comparable = 0;

  double value() const {
    return (2.0 * static_cast<double>(concordant) + static_cast<double>(tied_risk)) /
           (2.0 * static_cast<double>(comparable));
  }
};

namespace detail {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Count of inserted indices < i.
  std::int64_t prefix(std::size_t i) const {
    std::int64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::int64_t> tree_;
};

}  // namespace detail

/// Pair (i, j) with t_i < t_j is comparable when i had the event; at equal
/// times an event is comparable with a censored subject (event first).
/// O(n log n): subjects are swept from the latest time down while a Fenwick
/// tree over risk ranks holds everyone strictly later.
inline ConcordanceCounts concordance_counts(std::span<const double> time, std::span<const int> event,
                                            std::span<const double> risk) {
  const std::size_t n = time.size();
  if (event.size() != n || risk.size() != n) throw Error(Errc::length_mismatch, "concordance inputs differ in length");
  std::vector<double> levels(risk.begin(), risk.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  auto rank_of = [&](double r) {
    return static_cast<std::size_t>(std::lower_bound(levels.begin(), levels.end(), r) - levels.begin());
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });

  ConcordanceCounts c;
  detail::Fenwick later(levels.size());
  std::int64_t n_later = 0;
  for (std::size_t g = 0; g < n;) {
    std::size_t h = g;
    while (h < n && time[order[h]] == time[order[g]]) ++h;
    for (std::size_t a = g; a < h; ++a) {
      const std::size_t i = order[a];
      if (!event[i]) continue;
      const std::size_t ri = rank_of(risk[i]);
      const std::int64_t below = later.prefix(ri);
      const std::int64_t at_or_below = later.prefix(ri + 1);
      c.comparable += n_later;
      c.concordant += below;
      c.tied_risk += at_or_below - below;
      for (std::size_t b = g; b < h; ++b) {
        const std::size_t j = order[b];
        if (event[j]) continue;
        ++c.comparable;
        if (risk[i] > risk[j]) ++c.concordant;
        else if (risk[i] == risk[j]) ++c.tied_risk;
      }
    }
    for (std::size_t a = g; a < h; ++a) later.add(rank_of(risk[order[a]]));
    n_later += static_cast<std::int64_t>(h - g);
    g = h;
  }
  return c;
}

inline double concordance(std::span<const double> time, std::span<const int> event,
                          std::span<const double> risk) {
  const auto c = concordance_counts(time, event, risk);
  if (c.comparable == 0) throw Error(Errc::no_comparable_pairs, "no comparable pairs");
  return c.value();
}

// ---------------------------------------------------------------------------
// Kaplan-Meier

struct KmCurve {
  std::vector<double> times;        // distinct observed times, ascending
  std::vector<double> survival;     // S(t) just after each time
  std::vector<int> at_risk;
  std::vector<int> events;
  std::vector<int> censored;
  std::vector<double> greenwood_variance;  // NaN once S reaches 0

  double at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return survival[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

inline KmCurve km_curve(std::span<const double> time, std::span<const int> event) {
  if (time.empty()) throw Error(Errc::empty_table, "Kaplan-Meier needs at least one subject");
  if (time.size() != event.size()) throw Error(Errc::length_mismatch, "time and event lengths differ");
  std::map<double, std::pair<int, int>> by_time;  // time -> (events, censored)
  for (std::size_t i = 0; i < time.size(); ++i) {
    auto& slot = by_time[time[i]];
    (event[i] ? slot.first : slot.second) += 1;
  }
  KmCurve km;
  int at_risk = static_cast<int>(time.size());
  double s = 1.0;
  double greenwood_sum = 0.0;
  for (const auto& [t, counts] : by_time) {
    const auto [d, c] = counts;
    if (d > 0) {
      s *= 1.0 - static_cast<double>(d) / at_risk;
      greenwood_sum += at_risk > d ? static_cast<double>(d) / (static_cast<double>(at_risk) * (at_risk - d))
                                   : std::numeric_limits<double>::quiet_NaN();
    }
    km.times.push_back(t);
    km.survival.push_back(s);
    km.at_risk.push_back(at_risk);
    km.events.push_back(d);
    km.censored.push_back(c);
    km.greenwood_variance.push_back(s * s * greenwood_sum);
    at_risk -= d + c;
  }
  return km;
}

// ---------------------------------------------------------------------------
// Log-rank

struct LogRankResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double observed_a = 0.0;
  double expected_a = 0.0;
  double variance = 0.0;
};

inline LogRankResult log_rank(std::span<const double> time_a, std::span<const int> event_a,
                              std::span<const double> time_b, std::span<const int> event_b) {
  if (time_a.empty() || time_b.empty()) throw Error(Errc::empty_table, "log-rank needs two nonempty groups");
  struct Row { int d_a = 0, d_b = 0, out_a = 0, out_b = 0; };
  std::map<double, Row> rows;
  for (std::size_t i = 0; i < time_a.size(); ++i) {
    auto& r = rows[time_a[i]];
    ++r.out_a;
    r.d_a += event_a[i];
  }
  for (std::size_t i = 0; i < time_b.size(); ++i) {
    auto& r = rows[time_b[i]];
    ++r.out_b;
    r.d_b += event_b[i];
  }
  double n_a = static_cast<double>(time_a.size()), n_b = static_cast<double>(time_b.size());
  LogRankResult res;
  bool any_event = false;
  for (const auto& [t, r] : rows) {
    const double d = r.d_a + r.d_b;
    const double n = n_a + n_b;
    if (d > 0) {
      any_event = true;
      res.observed_a += r.d_a;
      res.expected_a += d * n_a / n;
      if (n > 1.0) res.variance += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1.0);
    }
    n_a -= r.out_a;
    n_b -= r.out_b;
  }
  if (!any_event) throw Error(Errc::no_events, "log-rank needs at least one event");
  const double diff = res.observed_a - res.expected_a;
  res.statistic = res.variance > 0.0 ? diff * diff / res.variance : 0.0;
  res.p_value = chi2_1df_sf(res.statistic);
  return res;
}

// ---------------------------------------------------------------------------
// Univariable hazard ratio

struct HazardRatio {
  double hr = 1.0;
  double ci_low = 0.0;
  double ci_high = std::numeric_limits<double>::infinity();
  double p_value = 1.0;
  double log_hr = 0.0;
  double se = std::numeric_limits<double>::infinity();
  bool monotone_likelihood = false;  // separation: CI unbounded
};

/// Unpenalized single-covariate Cox fit on a 0/1 group indicator; Wald CI
/// and p from the observed information.
inline HazardRatio hazard_ratio(std::span<const double> time, std::span<const int> event,
                                std::span<const int> group) {
  if (group.size() != time.size()) throw Error(Errc::length_mismatch, "group vector length mismatch");
  const bool has0 = std::find(group.begin(), group.end(), 0) != group.end();
  const bool has1 = std::find(group.begin(), group.end(), 1) != group.end();
  if (!has0 || !has1) throw Error(Errc::single_class, "hazard ratio needs both group levels");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(group.size()), 1);
  for (std::size_t i = 0; i < group.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = group[i];
  cox::FitOptions opt;
  opt.tolerance = 1e-10;
  const auto model = cox::cox_fit(x, time, event, opt, {"group"});

  HazardRatio out;
  out.log_hr = model.beta(0);
  out.hr = std::exp(out.log_hr);
  const Eigen::MatrixXd xc = x.rowwise() - model.train_means.transpose();
  const cox::RiskSets rs(time, event);
  const double info = -rs.evaluate(xc, model.beta, true, true).hessian(0, 0);
  out.se = info > 0.0 ? 1.0 / std::sqrt(info) : std::numeric_limits<double>::infinity();
  out.monotone_likelihood = !model.diagnostics.converged || !std::isfinite(out.se) || std::abs(out.log_hr) > 15.0;
  if (out.monotone_likelihood) {
    out.ci_low = 0.0;
    out.ci_high = std::numeric_limits<double>::infinity();
    out.p_value = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  out.ci_low = std::exp(out.log_hr - 1.96 * out.se);
  out.ci_high = std::exp(out.log_hr + 1.96 * out.se);
  out.p_value = normal_two_sided_p(out.log_hr / out.se);
  return out;
}

// ---------------------------------------------------------------------------
// Cumulative/dynamic AUC

/// Kaplan-Meier of the censoring distribution. At tied times, censoring is
/// taken to happen after the events: G(t) = prod_{s<=t} (1 - c_s / (n_s - d_s)).
struct CensoringSurvival {
  std::vector<double> times;
  std::vector<double> survival;

  explicit CensoringSurvival(std::span<const double> time, std::span<const int> event) {
    std::map<double, std::pair<int, int>> by_time;
    for (std::size_t i = 0; i < time.size(); ++i) {
      auto& slot = by_time[time[i]];
      (event[i] ? slot.first : slot.second) += 1;
    }
    int at_risk = static_cast<int>(time.size());
    double g = 1.0;
    for (const auto& [t, counts] : by_time) {
      const auto [d, c] = counts;
      const int exposed = at_risk - d;
      if (c > 0 && exposed > 0) g *= 1.0 - static_cast<double>(c) / exposed;
      times.push_back(t);
      survival.push_back(g);
      at_risk -= d + c;
    }
  }

  double at(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return survival[static_cast<std::size_t>(it - times.begin()) - 1];
  }
};

/// Cases: events at or before the horizon, weighted 1 / G(T_i); controls:
/// subjects still event-free after the horizon. Tied risks count one half.
///   AUC = sum_i w_i (#controls below r_i + 0.5 #tied) / (sum_i w_i * #controls)
inline double cumulative_dynamic_auc(std::span<const double> train_time, std::span<const int> train_event,
                                     std::span<const double> test_time, std::span<const int> test_event,
                                     std::span<const double> risk, double horizon) {
  if (test_time.size() != risk.size() || test_event.size() != risk.size()) {
    throw Error(Errc::length_mismatch, "AUC inputs differ in length");
  }
  const CensoringSurvival g(train_time, train_event);
  std::vector<double> control_risk;
  for (std::size_t j = 0; j < risk.size(); ++j) {
    if (test_time[j] > horizon) control_risk.push_back(risk[j]);
  }
  std::sort(control_risk.begin(), control_risk.end());
  double numerator = 0.0;
  double weight_sum = 0.0;
  bool any_case = false;
  for (std::size_t i = 0; i < risk.size(); ++i) {
    if (!(test_event[i] && test_time[i] <= horizon)) continue;
    any_case = true;
    const double gi = g.at(test_time[i]);
    if (!(gi > 0.0)) throw Error(Errc::zero_censoring_survival, "censoring survival is zero at a case time");
    const double w = 1.0 / gi;
    const auto lo = std::lower_bound(control_risk.begin(), control_risk.end(), risk[i]);
    const auto hi = std::upper_bound(lo, control_risk.end(), risk[i]);
    const auto below = static_cast<std::int64_t>(lo - control_risk.begin());
    const auto tied = static_cast<std::int64_t>(hi - lo);
    numerator += w * (static_cast<double>(2 * below + tied) / 2.0);
    weight_sum += w;
  }
  if (!any_case || control_risk.empty()) {
    throw Error(Errc::no_cases_or_controls, "no cases or no controls at the horizon");
  }
  return numerator / (weight_sum * static_cast<double>(control_risk.size()));
}

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapSummary {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_below_half = 0.0;   // fraction of replicates < 0.5
  double p_two_sided = 0.0;    // 2 * min(frac < 0.5, frac > 0.5), capped at 1
  int n_replicates = 0;
  int n_skipped = 0;
  std::uint64_t seed = 0;
  std::vector<double> replicates;  // valid replicate values, in replicate order
};

/// Linear-interpolation percentile of sorted data (q in [0, 1]).
inline double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Metric over a resample given as subject indices; nullopt marks a
/// degenerate resample.
using ResampleMetric = std::function<std::optional<double>(std::span<const std::size_t>)>;

inline BootstrapSummary bootstrap(const ResampleMetric& metric, std::size_t n_subjects,
                                  int n_replicates = 1000, std::uint64_t seed = 0) {
  if (n_subjects == 0) throw Error(Errc::empty_table, "bootstrap needs subjects");
  BootstrapSummary s;
  s.n_replicates = n_replicates;
  s.seed = seed;
  std::vector<std::size_t> all(n_subjects);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto point = metric(all);
  s.point = point ? *point : std::numeric_limits<double>::quiet_NaN();

  std::vector<std::size_t> idx(n_subjects);
  for (int r = 0; r < n_replicates; ++r) {
    Rng rng(derive_seed(seed, 0xb007, static_cast<std::uint64_t>(r)));
    for (auto& i : idx) i = rng.below(n_subjects);
    const auto v = metric(idx);
    if (v && std::isfinite(*v)) s.replicates.push_back(*v);
    else ++s.n_skipped;
  }
  if (2 * s.n_skipped > n_replicates) {
    throw Error(Errc::too_many_degenerate, std::to_string(s.n_skipped) + " of " +
                                               std::to_string(n_replicates) + " replicates degenerate");
  }
  std::vector<double> sorted = s.replicates;
  std::sort(sorted.begin(), sorted.end());
  s.ci_low = percentile_sorted(sorted, 0.025);
  s.ci_high = percentile_sorted(sorted, 0.975);
  const double m = static_cast<double>(sorted.size());
  const auto below = std::count_if(sorted.begin(), sorted.end(), [](double v) { return v < 0.5; });
  const auto above = std::count_if(sorted.begin(), sorted.end(), [](double v) { return v > 0.5; });
  s.p_below_half = m > 0 ? static_cast<double>(below) / m : std::numeric_limits<double>::quiet_NaN();
  s.p_two_sided = m > 0 ? std::min(1.0, 2.0 * std::min(static_cast<double>(below), static_cast<double>(above)) / m)
                        : std::numeric_limits<double>::quiet_NaN();
  return s;
}

}  // namespace ctsurv::metrics

#endif  // CTSURV_METRICS_HPP
