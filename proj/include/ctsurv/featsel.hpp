#ifndef CTSURV_FEATSEL_HPP
#define CTSURV_FEATSEL_HPP

// Imputation, cross-validated stability selection, and PCA.
//
// Selection order is fixed: impute -> variance filter (once, full training
// set) -> correlation filter (per fold, on that fold's training split) ->
// keep features that survive in more than half of the folds.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ctsurv/dataio.hpp"
#include "ctsurv/error.hpp"
#include "ctsurv/random.hpp"

namespace ctsurv::featsel {

// ---------------------------------------------------------------------------
// Imputation

enum class ImputeStrategy { median, mode, constant };

struct Imputer {
  ImputeStrategy strategy = ImputeStrategy::median;
  std::vector<std::string> feature_names;
  std::vector<double> fill;  // per feature
  std::vector<std::string> fitted_on;  // subject ids the statistics came from
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return kMissing;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Most frequent value; ties go to the smallest value.
inline double mode_of(std::vector<double> v) {
  if (v.empty()) return kMissing;
  std::sort(v.begin(), v.end());
  double best = v[0];
  std::size_t best_n = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j] == v[i]) ++j;
    if (j - i > best_n) {
      best_n = j - i;
      best = v[i];
    }
    i = j;
  }
  return best;
}

inline Imputer fit_imputer(const FeatureTable& train, ImputeStrategy strategy,
                           double constant_value = -1.0) {
  Imputer imp;
  imp.strategy = strategy;
  imp.feature_names = train.feature_names;
  imp.fitted_on = train.subject_ids;
  for (Eigen::Index c = 0; c < train.values.cols(); ++c) {
    std::vector<double> observed;
    for (Eigen::Index r = 0; r < train.values.rows(); ++r) {
      if (!is_missing(train.values(r, c))) observed.push_back(train.values(r, c));
    }
    if (observed.empty()) {
      throw Error(Errc::entirely_missing, "feature '" + train.feature_names[static_cast<std::size_t>(c)] +
                                              "' is missing for every training subject");
    }
    switch (strategy) {
      case ImputeStrategy::median: imp.fill.push_back(median_of(std::move(observed))); break;
      case ImputeStrategy::mode: imp.fill.push_back(mode_of(std::move(observed))); break;
      case ImputeStrategy::constant: imp.fill.push_back(constant_value); break;
    }
  }
  return imp;
}

inline FeatureTable apply_imputer(const Imputer& imp, const FeatureTable& table) {
  if (table.feature_names != imp.feature_names) {
    throw Error(Errc::name_mismatch, "feature names differ from the fitted imputer");
  }
  FeatureTable out = table;
  for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
    for (Eigen::Index r = 0; r < out.values.rows(); ++r) {
      if (is_missing(out.values(r, c))) out.values(r, c) = imp.fill[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

inline FeatureTable impute(const FeatureTable& table, ImputeStrategy strategy) {
  return apply_imputer(fit_imputer(table, strategy), table);
}

// ---------------------------------------------------------------------------
// Filters

inline void require_complete(const Eigen::MatrixXd& x) {
  if (!x.allFinite()) throw Error(Errc::missing_values, "matrix contains missing or non-finite values");
}

/// Population variance per column.
inline Eigen::VectorXd column_variance(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  return ((x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(x.rows())).transpose();
}

/// Indices of columns whose variance exceeds tol.
inline std::vector<std::size_t> variance_filter(const Eigen::MatrixXd& x, double tol = 1e-8) {
  require_complete(x);
  const auto var = column_variance(x);
  std::vector<std::size_t> kept;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    if (var(c) > tol) kept.push_back(static_cast<std::size_t>(c));
  }
  return kept;
}

inline Eigen::MatrixXd abs_correlation(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::VectorXd norms = centered.colwise().norm().transpose();
  Eigen::MatrixXd corr = centered.transpose() * centered;
  for (Eigen::Index i = 0; i < corr.rows(); ++i) {
    for (Eigen::Index j = 0; j < corr.cols(); ++j) {
      corr(i, j) = std::min(1.0, std::abs(corr(i, j)) / (norms(i) * norms(j)));
    }
  }
  return corr;
}

struct CorrelationDrop {
  std::size_t dropped;
  std::size_t partner;  // surviving member of the offending pair
  double abs_r;
};

struct CorrelationFilterResult {
  std::vector<std::size_t> kept;  // column indices, ascending
  std::vector<CorrelationDrop> drops;
};

/// Greedy elimination. While any surviving pair has |r| >= threshold, take
/// the strongest such pair (first in column order on ties) and drop the
/// member with the larger mean |r| to the other survivors; on a tie the
/// later column is dropped.
inline CorrelationFilterResult correlation_filter(const Eigen::MatrixXd& x, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw Error(Errc::domain, "threshold must be in (0, 1]");
  require_complete(x);
  const auto p = static_cast<std::size_t>(x.cols());
  const auto var = column_variance(x);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    if (!(var(c) > 0.0)) throw Error(Errc::zero_variance, "correlation filter needs non-constant columns");
  }
  const Eigen::MatrixXd corr = abs_correlation(x);
  std::vector<bool> alive(p, true);
  std::size_t n_alive = p;
  CorrelationFilterResult result;

  auto mean_abs = [&](std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      if (alive[k] && k != j) s += corr(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    }
    return n_alive > 1 ? s / static_cast<double>(n_alive - 1) : 0.0;
  };

  while (true) {
    double best = -1.0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < p; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < p; ++j) {
        if (!alive[j]) continue;
        const double r = corr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (r >= threshold && r > best) {
          best = r;
          bi = i;
          bj = j;
        }
      }
    }
    if (best < 0.0) break;
    const double mi = mean_abs(bi), mj = mean_abs(bj);
    const bool drop_i = mi > mj;
    const std::size_t drop = drop_i ? bi : bj;
    result.drops.push_back({drop, drop_i ? bj : bi, best});
    alive[drop] = false;
    --n_alive;
  }
  for (std::size_t i = 0; i < p; ++i) {
    if (alive[i]) result.kept.push_back(i);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Stability selection

struct SelectionReport {
  std::vector<std::string> dropped_constant;
  // (dropped, surviving partner) pairs aggregated over folds, first fold that dropped it.
  std::vector<std::pair<std::string, std::string>> dropped_correlated;
  std::vector<std::vector<std::string>> fold_selected;
  std::vector<std::pair<std::string, double>> selection_frequency;  // input order
  std::vector<std::string> retained;
  double corr_threshold = 0.0;
  int n_folds = 0;
  std::uint64_t seed = 0;
};

inline SelectionReport stability_select(const Eigen::MatrixXd& x,
                                        const std::vector<std::string>& names,
                                        std::span<const int> events, double corr_threshold,
                                        int n_folds = 5, std::uint64_t seed = 0,
                                        double variance_tol = 1e-8) {
  if (static_cast<std::size_t>(x.cols()) != names.size()) {
    throw Error(Errc::size_mismatch, "feature names do not match matrix columns");
  }
  if (static_cast<std::size_t>(x.rows()) != events.size()) {
    throw Error(Errc::length_mismatch, "event vector does not match matrix rows");
  }
  SelectionReport rep;
  rep.corr_threshold = corr_threshold;
  rep.n_folds = n_folds;
  rep.seed = seed;
  const auto folds = stratified_folds(events, n_folds, seed);

  const auto nonconstant = variance_filter(x, variance_tol);
  {
    std::size_t k = 0;
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (k < nonconstant.size() && nonconstant[k] == c) ++k;
      else rep.dropped_constant.push_back(names[c]);
    }
  }
  std::vector<int> survived(names.size(), 0);
  std::map<std::string, std::string> partner_of;
  for (int f = 0; f < n_folds; ++f) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < folds.size(); ++i) {
      if (folds[i] != f) rows.push_back(static_cast<Eigen::Index>(i));
    }
    Eigen::MatrixXd sub(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(nonconstant.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < nonconstant.size(); ++c) {
        sub(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = x(rows[r], static_cast<Eigen::Index>(nonconstant[c]));
      }
    }
    // A column constant within this split cannot be correlation-ranked; it
    // does not survive the fold.
    const auto split_var = column_variance(sub);
    std::vector<std::size_t> usable;
    for (std::size_t c = 0; c < nonconstant.size(); ++c) {
      if (split_var(static_cast<Eigen::Index>(c)) > 0.0) usable.push_back(c);
    }
    Eigen::MatrixXd usable_x(sub.rows(), static_cast<Eigen::Index>(usable.size()));
    for (std::size_t c = 0; c < usable.size(); ++c) usable_x.col(static_cast<Eigen::Index>(c)) = sub.col(static_cast<Eigen::Index>(usable[c]));
    std::vector<std::string> selected;
    if (!usable.empty()) {
      const auto cf = correlation_filter(usable_x, corr_threshold);
      for (auto k : cf.kept) {
        const auto orig = nonconstant[usable[k]];
        ++survived[orig];
        selected.push_back(names[orig]);
      }
      for (const auto& d : cf.drops) {
        partner_of.try_emplace(names[nonconstant[usable[d.dropped]]], names[nonconstant[usable[d.partner]]]);
      }
    }
    rep.fold_selected.push_back(std::move(selected));
  }
  for (std::size_t c = 0; c < names.size(); ++c) {
    const double freq = static_cast<double>(survived[c]) / static_cast<double>(n_folds);
    rep.selection_frequency.emplace_back(names[c], freq);
    if (freq > 0.5) rep.retained.push_back(names[c]);
    else if (auto it = partner_of.find(names[c]); it != partner_of.end()) rep.dropped_correlated.emplace_back(*it);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Eigen::MatrixXd components;  // k x p, orthonormal rows
  Eigen::RowVectorXd means;    // 1 x p
  Eigen::VectorXd explained_variance;
  int k = 0;
};

inline PcaModel pca_fit(const Eigen::MatrixXd& x, int k) {
  require_complete(x);
  const auto n = x.rows(), p = x.cols();
  if (k < 1 || k > std::min<Eigen::Index>(n - 1, p)) {
    throw Error(Errc::out_of_range, "PCA k=" + std::to_string(k) + " outside [1, min(n-1, p)]");
  }
  PcaModel m;
  m.k = k;
  m.means = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - m.means;
  const double denom = static_cast<double>(n - 1);
  m.components.resize(k, p);
  m.explained_variance.resize(k);
  if (p <= n) {
    const Eigen::MatrixXd cov = (c.transpose() * c) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    for (int i = 0; i < k; ++i) {
      const auto col = p - 1 - i;  // eigenvalues ascending
      m.components.row(i) = es.eigenvectors().col(col).transpose();
      m.explained_variance(i) = std::max(0.0, es.eigenvalues()(col));
    }
  } else {
    // Wide data: eigenvectors of the Gram matrix map to loadings via c^T u.
    const Eigen::MatrixXd gram = (c * c.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    for (int i = 0; i < k; ++i) {
      const auto col = n - 1 - i;
      Eigen::VectorXd v = c.transpose() * es.eigenvectors().col(col);
      const double norm = v.norm();
      if (norm > 0.0) v /= norm;
      m.components.row(i) = v.transpose();
      m.explained_variance(i) = std::max(0.0, es.eigenvalues()(col));
    }
  }
  for (int i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const double v = m.components(i, j);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0) m.components.row(i) *= -1.0;
        break;
      }
    }
  }
  return m;
}

inline Eigen::MatrixXd pca_transform(const PcaModel& m, const Eigen::MatrixXd& x) {
  if (x.cols() != m.components.cols()) throw Error(Errc::size_mismatch, "PCA input width mismatch");
  return (x.rowwise() - m.means) * m.components.transpose();
}

}  // namespace ctsurv::featsel

#endif  // CTSURV_FEATSEL_HPP
