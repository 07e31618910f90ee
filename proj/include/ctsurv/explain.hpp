#ifndef CTSURV_EXPLAIN_HPP
#define CTSURV_EXPLAIN_HPP

// Exact SHAP values for the linear Cox risk score, on the log-hazard scale.
// With independent features the Shapley value of feature j is
//   phi_ij = beta_j * (x_ij - mu_j)
// and sum_j phi_ij + base = log partial hazard, base = beta . (mu - train_means).

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ctsurv/cox.hpp"
#include "ctsurv/error.hpp"

namespace ctsurv::explain {

struct Attribution {
  std::vector<std::string> feature_names;
  Eigen::MatrixXd phi;             // subjects x features, log-hazard units
  Eigen::VectorXd background;      // mu
  double base_value = 0.0;
  Eigen::VectorXd beta;
};

inline Attribution shap_linear(const cox::CoxModel& model, const Eigen::MatrixXd& x,
                               const std::optional<Eigen::VectorXd>& background = std::nullopt) {
  cox::require_width(model, x.cols());
  const Eigen::VectorXd mu = background.value_or(model.train_means);
  if (mu.size() != model.beta.size()) throw Error(Errc::size_mismatch, "background width mismatch");
  Attribution a;
  a.feature_names = model.feature_names;
  a.background = mu;
  a.beta = model.beta;
  a.base_value = model.beta.dot(mu - model.train_means);
  a.phi = (x.rowwise() - mu.transpose()).array().rowwise() * model.beta.transpose().array();
  return a;
}

struct FeatureImportance {
  std::string feature;
  double mean_abs_phi = 0.0;
  int direction = 0;  // sign of beta: +1 raises risk as the feature grows
  std::vector<double> values;  // per-subject phi, for plotting
};

/// Features by mean |phi| descending, ties by name; top k.
inline std::vector<FeatureImportance> shap_summary(const Attribution& a, std::size_t k = 20) {
  std::vector<FeatureImportance> rows;
  for (Eigen::Index j = 0; j < a.phi.cols(); ++j) {
    FeatureImportance r;
    r.feature = a.feature_names[static_cast<std::size_t>(j)];
    r.mean_abs_phi = a.phi.rows() ? a.phi.col(j).cwiseAbs().mean() : 0.0;
    r.direction = a.beta(j) > 0.0 ? 1 : a.beta(j) < 0.0 ? -1 : 0;
    r.values.assign(a.phi.col(j).data(), a.phi.col(j).data() + a.phi.rows());
    rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& l, const auto& r) {
    if (l.mean_abs_phi != r.mean_abs_phi) return l.mean_abs_phi > r.mean_abs_phi;
    return l.feature < r.feature;
  });
  if (rows.size() > k) rows.resize(k);
  return rows;
}

}  // namespace ctsurv::explain

#endif  // CTSURV_EXPLAIN_HPP
