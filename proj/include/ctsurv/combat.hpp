#ifndef CTSURV_COMBAT_HPP
#define CTSURV_COMBAT_HPP

// Reference-batch ComBat with parametric empirical-Bayes shrinkage.
//
// Per feature g and subject j in batch i:
//   y = alpha + X beta + gamma_i + delta_i * eps
// alpha is the reference batch's location, sigma the reference batch's
// residual SD. Data are standardized as z = (y - alpha - X beta) / sigma,
// per-batch location/scale (gamma_hat, delta_hat^2) are shrunk with a normal
// prior on gamma and an inverse-gamma prior on delta^2, and the reference
// batch is pinned to gamma* = 0, delta* = 1 so its rows pass through.
//
// delta* is stored as a scale (SD ratio), i.e. the square root of the
// posterior variance factor.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctsurv/dataio.hpp"
#include "ctsurv/error.hpp"

namespace ctsurv::combat {

enum class FitMode { pooled, train_only };

struct HarmonizationConfig {
  std::string reference_batch;
  std::vector<std::string> covariate_names;  // must be present in the table's covariates
  FitMode mode = FitMode::pooled;
  bool empirical_bayes = true;
  int max_eb_iterations = 500;
  double eb_tolerance = 1e-6;
};

struct CombatModel {
  std::vector<std::string> feature_names;
  std::string reference_batch;
  std::vector<std::string> covariate_names;
  FitMode mode = FitMode::pooled;
  bool empirical_bayes = true;
  Eigen::VectorXd alpha;        // per feature
  Eigen::MatrixXd beta;         // covariates x features
  Eigen::VectorXd sigma;        // per feature, reference residual SD
  std::vector<std::string> batches;  // fitted batch labels, sorted
  Eigen::MatrixXd gamma_hat;    // batches x features
  Eigen::MatrixXd delta_hat;    // batches x features (scale)
  Eigen::MatrixXd gamma_star;   // batches x features
  Eigen::MatrixXd delta_star;   // batches x features (scale)
  std::vector<int> eb_iterations;  // per batch, max over features

  std::optional<std::size_t> batch_index(std::string_view b) const {
    auto it = std::lower_bound(batches.begin(), batches.end(), b);
    if (it == batches.end() || *it != b) return std::nullopt;
    return static_cast<std::size_t>(it - batches.begin());
  }
};

namespace detail {

inline void require_complete(const FeatureTable& t) {
  if (t.missing_count() != 0) throw Error(Errc::missing_values, "ComBat needs an imputed table");
  if (!t.covariate_names.empty() && !t.covariates.allFinite()) {
    throw Error(Errc::missing_values, "ComBat covariates contain missing values");
  }
}

inline Eigen::MatrixXd covariate_block(const FeatureTable& t, const std::vector<std::string>& names) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(t.n_subjects()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto it = std::find(t.covariate_names.begin(), t.covariate_names.end(), names[k]);
    if (it == t.covariate_names.end()) throw Error(Errc::name_mismatch, "covariate " + names[k] + " not in table");
    x.col(static_cast<Eigen::Index>(k)) = t.covariates.col(it - t.covariate_names.begin());
  }
  return x;
}

struct EbPosterior {
  double gamma = 0.0;
  double delta2 = 1.0;
  int iterations = 0;
};

// Coupled posterior updates for one batch/feature:
//   gamma = (n t2 gamma_hat + delta2 gamma_bar) / (n t2 + delta2)
//   delta2 = (b + 0.5 sum (z - gamma)^2) / (n/2 + a - 1)
inline EbPosterior eb_solve(const Eigen::Ref<const Eigen::VectorXd>& z, double gamma_hat,
                            double delta2_hat, double gamma_bar, double t2, double a, double b,
                            int max_iter, double tol) {
  const double n = static_cast<double>(z.size());
  EbPosterior p{gamma_hat, delta2_hat, 0};
  for (int it = 1; it <= max_iter; ++it) {
    const double g = (n * t2 * gamma_hat + p.delta2 * gamma_bar) / (n * t2 + p.delta2);
    const double ss = (z.array() - g).square().sum();
    const double d = (0.5 * ss + b) / (n / 2.0 + a - 1.0);
    const double change = std::max(std::abs(g - p.gamma) / std::max(std::abs(p.gamma), 1e-12),
                                   std::abs(d - p.delta2) / std::max(std::abs(p.delta2), 1e-12));
    p = {g, d, it};
    if (change < tol) break;
  }
  return p;
}

inline double sample_mean(const Eigen::VectorXd& v) { return v.mean(); }

inline double sample_var(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

}  // namespace detail

inline CombatModel combat_fit(const FeatureTable& features, const HarmonizationConfig& config) {
  if (!features.has_batch()) throw Error(Errc::missing_column, "ComBat needs batch labels");
  detail::require_complete(features);

  CombatModel m;
  m.feature_names = features.feature_names;
  m.reference_batch = config.reference_batch;
  m.covariate_names = config.covariate_names;
  m.mode = config.mode;
  m.empirical_bayes = config.empirical_bayes;

  std::map<std::string, std::vector<Eigen::Index>> rows_by_batch;
  for (std::size_t i = 0; i < features.n_subjects(); ++i) {
    rows_by_batch[features.batch[i]].push_back(static_cast<Eigen::Index>(i));
  }
  if (!rows_by_batch.contains(config.reference_batch)) {
    throw Error(Errc::reference_batch_absent, "reference batch '" + config.reference_batch + "' not in data");
  }
  for (const auto& [label, rows] : rows_by_batch) {
    if (rows.size() < 2) throw Error(Errc::small_batch, "batch '" + label + "' has fewer than 2 subjects");
    m.batches.push_back(label);
  }
  const auto n = static_cast<Eigen::Index>(features.n_subjects());
  const auto p = static_cast<Eigen::Index>(features.n_features());
  const auto nb = static_cast<Eigen::Index>(m.batches.size());
  const auto nc = static_cast<Eigen::Index>(config.covariate_names.size());
  const auto ref = static_cast<Eigen::Index>(*m.batch_index(config.reference_batch));

  // Design: one indicator per batch (no intercept), then covariates.
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n, nb + nc);
  std::vector<Eigen::Index> batch_of(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    batch_of[static_cast<std::size_t>(i)] = static_cast<Eigen::Index>(*m.batch_index(features.batch[static_cast<std::size_t>(i)]));
    design(i, batch_of[static_cast<std::size_t>(i)]) = 1.0;
  }
  const Eigen::MatrixXd cov = detail::covariate_block(features, config.covariate_names);
  if (nc > 0) design.rightCols(nc) = cov;

  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < design.cols()) {
    throw Error(Errc::domain, "ComBat design is rank deficient (covariates confounded with batch?)");
  }
  const Eigen::MatrixXd coef = qr.solve(features.values);  // (nb + nc) x p
  m.alpha = coef.row(ref).transpose();
  m.beta = nc > 0 ? Eigen::MatrixXd(coef.bottomRows(nc)) : Eigen::MatrixXd(0, p);

  const Eigen::MatrixXd resid = features.values - design * coef;
  const auto& ref_rows = rows_by_batch.at(config.reference_batch);
  m.sigma.resize(p);
  for (Eigen::Index g = 0; g < p; ++g) {
    double ss = 0.0;
    for (auto r : ref_rows) ss += resid(r, g) * resid(r, g);
    m.sigma(g) = std::sqrt(ss / static_cast<double>(ref_rows.size()));
    if (!(m.sigma(g) > 0.0)) {
      throw Error(Errc::zero_variance, "feature '" + m.feature_names[static_cast<std::size_t>(g)] +
                                           "' has zero variance in the reference batch");
    }
  }

  // Standardize against the reference frame.
  Eigen::MatrixXd stand_mean = cov * m.beta;
  stand_mean.rowwise() += m.alpha.transpose();
  Eigen::MatrixXd z = features.values - stand_mean;
  z.array().rowwise() /= m.sigma.transpose().array();

  m.gamma_hat.resize(nb, p);
  m.delta_hat.resize(nb, p);
  Eigen::MatrixXd delta2_hat(nb, p);
  std::vector<Eigen::MatrixXd> z_by_batch(static_cast<std::size_t>(nb));
  for (Eigen::Index b = 0; b < nb; ++b) {
    const auto& rows = rows_by_batch.at(m.batches[static_cast<std::size_t>(b)]);
    Eigen::MatrixXd zb(static_cast<Eigen::Index>(rows.size()), p);
    for (std::size_t k = 0; k < rows.size(); ++k) zb.row(static_cast<Eigen::Index>(k)) = z.row(rows[k]);
    for (Eigen::Index g = 0; g < p; ++g) {
      const Eigen::VectorXd col = zb.col(g);
      m.gamma_hat(b, g) = detail::sample_mean(col);
      delta2_hat(b, g) = detail::sample_var(col);
    }
    z_by_batch[static_cast<std::size_t>(b)] = std::move(zb);
  }
  m.delta_hat = delta2_hat.array().sqrt();

  m.gamma_star = m.gamma_hat;
  Eigen::MatrixXd delta2_star = delta2_hat;
  m.eb_iterations.assign(static_cast<std::size_t>(nb), 0);
  if (config.empirical_bayes) {
    for (Eigen::Index b = 0; b < nb; ++b) {
      if (b == ref) continue;
      const Eigen::VectorXd gh = m.gamma_hat.row(b).transpose();
      const Eigen::VectorXd dh = delta2_hat.row(b).transpose();
      const double gamma_bar = gh.mean();
      const double t2 = detail::sample_var(gh);
      const double mean_d = dh.mean();
      const double var_d = detail::sample_var(dh);
      // With a single feature (or identical estimates) the priors are
      // degenerate; fall back to the per-feature estimates.
      if (p < 2 || !(t2 > 0.0) || !(var_d > 0.0)) continue;
      const double a_prior = (2.0 * var_d + mean_d * mean_d) / var_d;
      const double b_prior = (mean_d * var_d + mean_d * mean_d * mean_d) / var_d;
      for (Eigen::Index g = 0; g < p; ++g) {
        const auto post = detail::eb_solve(z_by_batch[static_cast<std::size_t>(b)].col(g), gh(g), dh(g),
                                           gamma_bar, t2, a_prior, b_prior, config.max_eb_iterations,
                                           config.eb_tolerance);
        m.gamma_star(b, g) = post.gamma;
        delta2_star(b, g) = post.delta2;
        m.eb_iterations[static_cast<std::size_t>(b)] =
            std::max(m.eb_iterations[static_cast<std::size_t>(b)], post.iterations);
      }
    }
  }
  m.gamma_star.row(ref).setZero();
  delta2_star.row(ref).setOnes();
  m.delta_star = delta2_star.array().sqrt();
  for (Eigen::Index b = 0; b < nb; ++b) {
    for (Eigen::Index g = 0; g < p; ++g) {
      if (!(m.delta_star(b, g) > 0.0)) {
        throw Error(Errc::zero_variance, "batch '" + m.batches[static_cast<std::size_t>(b)] +
                                             "' has zero variance for feature '" +
                                             m.feature_names[static_cast<std::size_t>(g)] + "'");
      }
    }
  }
  return m;
}

/// Harmonizes a table with a fitted model. Reference-batch rows are copied
/// through untouched.
inline FeatureTable combat_apply(const CombatModel& m, const FeatureTable& features) {
  if (!features.has_batch()) throw Error(Errc::missing_column, "ComBat needs batch labels");
  if (features.feature_names != m.feature_names) {
    throw Error(Errc::name_mismatch, "feature names differ from the fitted ComBat model");
  }
  detail::require_complete(features);
  const Eigen::MatrixXd cov = detail::covariate_block(features, m.covariate_names);
  FeatureTable out = features;
  for (std::size_t i = 0; i < features.n_subjects(); ++i) {
    const auto& label = features.batch[i];
    const auto b = m.batch_index(label);
    if (!b) {
      throw Error(Errc::unseen_batch,
                  "batch '" + label + "' was not in the " +
                      (m.mode == FitMode::train_only ? "training" : "fitting") + " data");
    }
    if (label == m.reference_batch) continue;
    const auto r = static_cast<Eigen::Index>(i);
    const auto bi = static_cast<Eigen::Index>(*b);
    for (Eigen::Index g = 0; g < features.values.cols(); ++g) {
      double loc = m.alpha(g);
      for (Eigen::Index c = 0; c < cov.cols(); ++c) loc += cov(r, c) * m.beta(c, g);
      const double zval = (features.values(r, g) - loc) / m.sigma(g);
      out.values(r, g) = m.sigma(g) * (zval - m.gamma_star(bi, g)) / m.delta_star(bi, g) + loc;
    }
  }
  return out;
}

/// Label of the batch with the most subjects (ties: smallest label).
inline std::string largest_batch(std::span<const std::string> labels) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  std::string best;
  std::size_t best_n = 0;
  for (const auto& [label, n] : counts) {
    if (n > best_n) {
      best = label;
      best_n = n;
    }
  }
  return best;
}

}  // namespace ctsurv::combat

#endif  // CTSURV_COMBAT_HPP
