#ifndef CTSURV_CONSENSUS_HPP
#define CTSURV_CONSENSUS_HPP

// Horizon classification from survival probabilities, strict multi-model
// consensus, and soft-voting risk ensembles.
//
// At horizon t a subject is valid when the outcome is known at t: an event
// at or before t (truth 1) or follow-up beyond t (truth 0). A model predicts
// an event iff S(t) < tau, with tau maximizing Youden's J on training data.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctsurv/error.hpp"
#include "ctsurv/metrics.hpp"

namespace ctsurv::consensus {

struct HorizonStatus {
  std::vector<int> valid;  // 1 = outcome known at the horizon
  std::vector<int> truth;  // 1 = event by the horizon; 0 where invalid
};

inline HorizonStatus valid_at_horizon(std::span<const double> time, std::span<const int> event, double horizon) {
  if (!(horizon > 0.0)) throw Error(Errc::domain, "horizon must be positive");
  HorizonStatus s;
  for (std::size_t i = 0; i < time.size(); ++i) {
    const bool case_ = event[i] == 1 && time[i] <= horizon;
    const bool control = time[i] > horizon;
    s.valid.push_back(case_ || control ? 1 : 0);
    s.truth.push_back(case_ ? 1 : 0);
  }
  return s;
}

struct ConfusionCounts {
  int tp = 0, fn = 0, tn = 0, fp = 0;
};

inline ConfusionCounts confusion(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw Error(Errc::length_mismatch, "prediction and truth lengths differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i]) (pred[i] ? c.tp : c.fn) += 1;
    else (pred[i] ? c.fp : c.tn) += 1;
  }
  return c;
}

/// J = sensitivity + specificity - 1 for "event iff S < tau".
inline double youden_j(std::span<const double> surv, std::span<const int> truth, double tau) {
  std::vector<int> pred(surv.size());
  for (std::size_t i = 0; i < surv.size(); ++i) pred[i] = surv[i] < tau ? 1 : 0;
  const auto c = confusion(pred, truth);
  return static_cast<double>(c.tp) / (c.tp + c.fn) + static_cast<double>(c.tn) / (c.tn + c.fp) - 1.0;
}

struct YoudenResult {
  double tau = 0.0;
  double j = 0.0;
};

/// Candidate cuts are midpoints of consecutive distinct S values plus one
/// finite sentinel below the minimum (predicts nobody) and one above the
/// maximum (predicts everybody). The best J wins; ties go to the smallest tau.
inline YoudenResult youden_threshold(std::span<const double> surv, std::span<const int> truth) {
  if (surv.size() != truth.size()) throw Error(Errc::length_mismatch, "survival and truth lengths differ");
  const auto positives = std::count(truth.begin(), truth.end(), 1);
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(truth.size())) {
    throw Error(Errc::single_class, "Youden threshold needs both classes");
  }
  std::vector<std::size_t> order(surv.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return surv[a] < surv[b]; });
  const double n_pos = static_cast<double>(positives);
  const double n_neg = static_cast<double>(truth.size()) - n_pos;

  // Sweep tau upward; after passing a group of equal S values, those subjects
  // become predicted events.
  YoudenResult best{surv[order.front()] - 1.0, 0.0};  // predicts nobody: J = 0
  int tp = 0, fp = 0;
  for (std::size_t g = 0; g < order.size();) {
    std::size_t h = g;
    while (h < order.size() && surv[order[h]] == surv[order[g]]) {
      (truth[order[h]] ? tp : fp) += 1;
      ++h;
    }
    const double tau = h < order.size() ? 0.5 * (surv[order[g]] + surv[order[h]]) : surv[order.back()] + 1.0;
    const double j = tp / n_pos + (n_neg - fp) / n_neg - 1.0;
    if (j > best.j) best = {tau, j};
    g = h;
  }
  return best;
}

inline std::vector<int> classify_at_horizon(std::span<const double> surv, double tau) {
  std::vector<int> y(surv.size());
  for (std::size_t i = 0; i < surv.size(); ++i) y[i] = surv[i] < tau ? 1 : 0;
  return y;
}

struct ConsensusSubset {
  std::vector<std::size_t> members;  // indices into the label vectors
  std::vector<int> labels;           // shared label per member
  double coverage = 0.0;
};

inline ConsensusSubset consensus_subset(const std::vector<std::vector<int>>& label_vectors) {
  if (label_vectors.size() < 2) throw Error(Errc::domain, "consensus needs at least two models");
  const std::size_t n = label_vectors.front().size();
  for (const auto& v : label_vectors) {
    if (v.size() != n) throw Error(Errc::length_mismatch, "label vectors differ in length");
  }
  ConsensusSubset s;
  for (std::size_t i = 0; i < n; ++i) {
    const int first = label_vectors.front()[i];
    const bool agree = std::all_of(label_vectors.begin(), label_vectors.end(),
                                   [&](const std::vector<int>& v) { return v[i] == first; });
    if (agree) {
      s.members.push_back(i);
      s.labels.push_back(first);
    }
  }
  s.coverage = n ? static_cast<double>(s.members.size()) / static_cast<double>(n) : 0.0;
  return s;
}

struct ClassificationMetrics {
  ConfusionCounts counts;
  double accuracy = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> sensitivity;  // undefined without positives
  std::optional<double> specificity;  // undefined without negatives
  std::optional<double> t_auc;
};

inline ClassificationMetrics classification_metrics(std::span<const int> pred, std::span<const int> truth) {
  ClassificationMetrics m;
  m.counts = confusion(pred, truth);
  const auto& c = m.counts;
  const int n = c.tp + c.fn + c.tn + c.fp;
  if (n > 0) m.accuracy = static_cast<double>(c.tp + c.tn) / n;
  if (c.tp + c.fn > 0) m.sensitivity = static_cast<double>(c.tp) / (c.tp + c.fn);
  if (c.tn + c.fp > 0) m.specificity = static_cast<double>(c.tn) / (c.tn + c.fp);
  return m;
}

// ---------------------------------------------------------------------------
// Ensembles

enum class EnsembleMode { mean, zscore_mean };

/// Elementwise mean of per-model risk vectors. In zscore_mean mode each
/// model's risks are first standardized with that model's (mean, SD) from
/// `train_stats`.
inline std::vector<double> ensemble_risk(const std::vector<std::vector<double>>& risks,
                                         EnsembleMode mode = EnsembleMode::mean,
                                         const std::vector<std::pair<double, double>>& train_stats = {}) {
  if (risks.size() < 2) throw Error(Errc::domain, "an ensemble needs at least two models");
  const std::size_t n = risks.front().size();
  for (const auto& r : risks) {
    if (r.size() != n) throw Error(Errc::length_mismatch, "risk vectors differ in length");
  }
  if (mode == EnsembleMode::zscore_mean && train_stats.size() != risks.size()) {
    throw Error(Errc::length_mismatch, "z-scored ensemble needs training stats per model");
  }
  std::vector<double> out(n, 0.0);
  for (std::size_t m = 0; m < risks.size(); ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      double v = risks[m][i];
      if (mode == EnsembleMode::zscore_mean) {
        const auto [mu, sd] = train_stats[m];
        v = sd > 0.0 ? (v - mu) / sd : 0.0;
      }
      out[i] += v;
    }
  }
  for (auto& v : out) v /= static_cast<double>(risks.size());
  return out;
}

/// Mean and population SD, for z-scored ensembles.
inline std::pair<double, double> mean_sd(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

// ---------------------------------------------------------------------------
// Report

struct ModelHorizonInputs {
  std::string name;
  std::vector<double> train_survival;  // S(t) for every training subject
  std::vector<double> test_survival;   // S(t) for every test subject
};

struct ModelSummary {
  std::string name;
  double tau = 0.0;
  double youden_j = 0.0;
  ClassificationMetrics on_valid;   // all valid test subjects
  ClassificationMetrics on_subset;  // consensus subset only
};

struct ConsensusReport {
  double horizon_months = 0.0;
  std::vector<std::string> valid_ids;
  std::vector<std::string> subset_ids;
  std::vector<int> subset_labels;
  double coverage = 0.0;
  ClassificationMetrics metrics;  // consensus subset
  std::vector<ModelSummary> models;
};

/// Fits tau per model on valid training subjects, labels valid test
/// subjects, and scores the all-agree subset. The subset t-AUC ranks by the
/// mean predicted event probability 1 - S(t) across models.
inline ConsensusReport consensus_report(double horizon, const std::vector<std::string>& test_ids,
                                        std::span<const double> train_time, std::span<const int> train_event,
                                        std::span<const double> test_time, std::span<const int> test_event,
                                        const std::vector<ModelHorizonInputs>& models) {
  const auto train_status = valid_at_horizon(train_time, train_event, horizon);
  const auto test_status = valid_at_horizon(test_time, test_event, horizon);
  std::vector<std::size_t> valid_train, valid_test;
  for (std::size_t i = 0; i < train_status.valid.size(); ++i) {
    if (train_status.valid[i]) valid_train.push_back(i);
  }
  for (std::size_t i = 0; i < test_status.valid.size(); ++i) {
    if (test_status.valid[i]) valid_test.push_back(i);
  }
  ConsensusReport rep;
  rep.horizon_months = horizon;
  for (auto i : valid_test) rep.valid_ids.push_back(test_ids[i]);
  std::vector<int> truth;
  for (auto i : valid_test) truth.push_back(test_status.truth[i]);

  std::vector<std::vector<int>> labels;
  for (const auto& m : models) {
    std::vector<double> s_train;
    std::vector<int> y_train;
    for (auto i : valid_train) {
      s_train.push_back(m.train_survival[i]);
      y_train.push_back(train_status.truth[i]);
    }
    const auto yt = youden_threshold(s_train, y_train);
    std::vector<double> s_test;
    for (auto i : valid_test) s_test.push_back(m.test_survival[i]);
    labels.push_back(classify_at_horizon(s_test, yt.tau));
    ModelSummary summary;
    summary.name = m.name;
    summary.tau = yt.tau;
    summary.youden_j = yt.j;
    summary.on_valid = classification_metrics(labels.back(), truth);
    rep.models.push_back(std::move(summary));
  }
  const auto subset = consensus_subset(labels);
  rep.coverage = subset.coverage;
  rep.subset_labels = subset.labels;
  std::vector<int> subset_truth;
  std::vector<double> subset_time, subset_risk;
  std::vector<int> subset_event;
  for (auto k : subset.members) {
    const auto i = valid_test[k];
    rep.subset_ids.push_back(test_ids[i]);
    subset_truth.push_back(truth[k]);
    subset_time.push_back(test_time[i]);
    subset_event.push_back(test_event[i]);
    double risk = 0.0;
    for (const auto& m : models) risk += 1.0 - m.test_survival[i];
    subset_risk.push_back(risk / static_cast<double>(models.size()));
  }
  rep.metrics = classification_metrics(subset.labels, subset_truth);
  try {
    rep.metrics.t_auc = metrics::cumulative_dynamic_auc(train_time, train_event, subset_time, subset_event,
                                                        subset_risk, horizon);
  } catch (const Error&) {
    rep.metrics.t_auc.reset();
  }
  for (std::size_t m = 0; m < models.size(); ++m) {
    std::vector<int> sub_pred;
    for (auto k : subset.members) sub_pred.push_back(labels[m][k]);
    rep.models[m].on_subset = classification_metrics(sub_pred, subset_truth);
  }
  return rep;
}

}  // namespace ctsurv::consensus

#endif  // CTSURV_CONSENSUS_HPP
