#ifndef CTSURV_TUNE_HPP
#define CTSURV_TUNE_HPP

// Seeded random search over (penalty, l1_ratio[, pca_k]) scored by the mean
// validation C-index of a stratified k-fold split. Trial parameters are a
// pure function of (seed, trial); ties on score go to the lowest trial.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "ctsurv/cox.hpp"
#include "ctsurv/error.hpp"
#include "ctsurv/featsel.hpp"
#include "ctsurv/metrics.hpp"
#include "ctsurv/random.hpp"

namespace ctsurv::tune {

struct SearchSpace {
  double penalty_min = 1e-4;  // log-uniform
  double penalty_max = 10.0;
  double l1_min = 0.0;        // uniform
  double l1_max = 1.0;
  std::vector<int> pca_k;     // empty: no PCA
};

struct TrialParams {
  double penalty = 0.0;
  double l1_ratio = 0.0;
  std::optional<int> pca_k;
};

struct TrialRecord {
  TrialParams params;
  double mean_cindex = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> fold_cindex;
};

struct TuneResult {
  TrialParams best;
  int best_trial = -1;
  double best_score = std::numeric_limits<double>::quiet_NaN();
  std::vector<TrialRecord> trials;
  std::uint64_t seed = 0;
  int n_trials = 0;
  int n_folds = 0;
};

inline TrialParams draw_trial(const SearchSpace& space, std::uint64_t seed, int trial) {
  Rng rng(derive_seed(seed, 0x7a1, static_cast<std::uint64_t>(trial)));
  TrialParams p;
  const double lo = std::log(space.penalty_min), hi = std::log(space.penalty_max);
  p.penalty = std::exp(lo + (hi - lo) * rng.uniform());
  if (space.penalty_min == space.penalty_max) p.penalty = space.penalty_min;
  p.l1_ratio = space.l1_min + (space.l1_max - space.l1_min) * rng.uniform();
  if (!space.pca_k.empty()) p.pca_k = space.pca_k[rng.below(space.pca_k.size())];
  return p;
}

/// Mean validation C-index of one parameter setting over fixed folds.
/// Folds whose validation split has no comparable pair are skipped; a fold
/// whose training split has no events is an error.
inline TrialRecord evaluate_params(const Eigen::MatrixXd& x, std::span<const double> time,
                                   std::span<const int> event, const std::vector<int>& folds,
                                   int n_folds, const TrialParams& params) {
  TrialRecord rec;
  rec.params = params;
  double sum = 0.0;
  int used = 0;
  for (int f = 0; f < n_folds; ++f) {
    std::vector<Eigen::Index> tr, va;
    for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == f ? va : tr).push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd xtr = x(tr, Eigen::all), xva = x(va, Eigen::all);
    std::vector<double> ttr, tva;
    std::vector<int> etr, eva;
    for (auto i : tr) { ttr.push_back(time[static_cast<std::size_t>(i)]); etr.push_back(event[static_cast<std::size_t>(i)]); }
    for (auto i : va) { tva.push_back(time[static_cast<std::size_t>(i)]); eva.push_back(event[static_cast<std::size_t>(i)]); }
    if (std::none_of(etr.begin(), etr.end(), [](int e) { return e == 1; })) {
      throw Error(Errc::degenerate_fold, "fold " + std::to_string(f) + " training split has no events");
    }
    if (params.pca_k) {
      const auto pca = featsel::pca_fit(xtr, *params.pca_k);
      xtr = featsel::pca_transform(pca, xtr);
      xva = featsel::pca_transform(pca, xva);
    }
    cox::FitOptions opt;
    opt.penalty = params.penalty;
    opt.l1_ratio = params.l1_ratio;
    cox::CoxModel model;
    try {
      model = cox::cox_fit(xtr, ttr, etr, opt);
    } catch (const Error& e) {
      // A column can become constant inside a training split.
      if (e.code() != Errc::constant_column) throw;
      rec.fold_cindex.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const Eigen::VectorXd risk = cox::partial_hazards(model, xva);
    const auto counts = metrics::concordance_counts(tva, eva, std::span<const double>(risk.data(), static_cast<std::size_t>(risk.size())));
    if (counts.comparable == 0) {
      rec.fold_cindex.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    rec.fold_cindex.push_back(counts.value());
    sum += counts.value();
    ++used;
  }
  if (used > 0) rec.mean_cindex = sum / used;
  return rec;
}

inline TuneResult tune(const Eigen::MatrixXd& x, std::span<const double> time, std::span<const int> event,
                       const SearchSpace& space, int n_trials = 100, int n_folds = 5, std::uint64_t seed = 0) {
  if (n_trials < 1) throw Error(Errc::domain, "n_trials must be positive");
  if (!(space.penalty_min > 0.0 && space.penalty_min <= space.penalty_max)) {
    throw Error(Errc::domain, "penalty range must be positive and ordered");
  }
  TuneResult res;
  res.seed = seed;
  res.n_trials = n_trials;
  res.n_folds = n_folds;
  const auto folds = stratified_folds(event, n_folds, seed);

  SearchSpace usable = space;
  if (!space.pca_k.empty()) {
    // k must fit every fold's training split.
    std::size_t smallest_train = x.rows();
    for (int f = 0; f < n_folds; ++f) {
      const auto in_fold = static_cast<std::size_t>(std::count(folds.begin(), folds.end(), f));
      smallest_train = std::min(smallest_train, static_cast<std::size_t>(x.rows()) - in_fold);
    }
    const auto limit = std::min<Eigen::Index>(static_cast<Eigen::Index>(smallest_train) - 1, x.cols());
    usable.pca_k.clear();
    for (int k : space.pca_k) {
      if (k >= 1 && k <= limit) usable.pca_k.push_back(k);
    }
    if (usable.pca_k.empty()) throw Error(Errc::out_of_range, "no PCA size fits the training folds");
  }

  for (int t = 0; t < n_trials; ++t) {
    auto rec = evaluate_params(x, time, event, folds, n_folds, draw_trial(usable, seed, t));
    if (!std::isnan(rec.mean_cindex) && (res.best_trial < 0 || rec.mean_cindex > res.best_score)) {
      res.best_trial = t;
      res.best_score = rec.mean_cindex;
      res.best = rec.params;
    }
    res.trials.push_back(std::move(rec));
  }
  if (res.best_trial < 0) throw Error(Errc::degenerate_fold, "no trial produced a usable C-index");
  return res;
}

}  // namespace ctsurv::tune

#endif  // CTSURV_TUNE_HPP
