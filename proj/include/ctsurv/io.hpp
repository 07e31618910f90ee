#ifndef CTSURV_IO_HPP
#define CTSURV_IO_HPP

// JSON forms of fitted objects and summaries. Non-finite numbers are
// written as null (NaN) or the strings "inf" / "-inf" so reports read back
// losslessly.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctsurv/cac.hpp"
#include "ctsurv/combat.hpp"
#include "ctsurv/consensus.hpp"
#include "ctsurv/cox.hpp"
#include "ctsurv/dataio.hpp"
#include "ctsurv/error.hpp"
#include "ctsurv/featsel.hpp"
#include "ctsurv/metrics.hpp"
#include "ctsurv/rkn.hpp"
#include "ctsurv/synth.hpp"
#include "ctsurv/tune.hpp"

namespace ctsurv::io {

using json = nlohmann::json;

inline json num(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double get_num(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(Errc::parse, "expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

inline json opt_num(const std::optional<double>& v) { return v ? num(*v) : json(nullptr); }

inline std::optional<double> get_opt_num(const json& j) {
  if (j.is_null()) return std::nullopt;
  return get_num(j);
}

inline json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

inline json vec(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

inline Eigen::VectorXd get_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_num(j[i]);
  return v;
}

inline std::vector<double> get_std_vec(const json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(get_num(x));
  return v;
}

inline json mat(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec(Eigen::VectorXd(m.row(r).transpose())));
  return rows;
}

inline Eigen::MatrixXd get_mat(const json& j, Eigen::Index cols_if_empty = 0) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : cols_if_empty;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_num(j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
  }
  return m;
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
}

inline void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Cox

inline json to_json(const cox::CoxModel& m) {
  json steps = json::array();
  for (const auto& [t, h] : m.baseline_cumhaz) steps.push_back({num(t), num(h)});
  return {
      {"feature_names", m.feature_names},
      {"beta", vec(m.beta)},
      {"train_means", vec(m.train_means)},
      {"baseline_cumhaz", steps},
      {"penalty", num(m.penalty)},
      {"l1_ratio", num(m.l1_ratio)},
      {"train_median_risk", opt_num(m.train_median_risk)},
      {"diagnostics",
       {{"objective", num(m.diagnostics.objective)},
        {"iterations", m.diagnostics.iterations},
        {"converged", m.diagnostics.converged}}},
  };
}

inline cox::CoxModel cox_from_json(const json& j) {
  try {
    cox::CoxModel m;
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.beta = get_vec(j.at("beta"));
    m.train_means = get_vec(j.at("train_means"));
    for (const auto& s : j.at("baseline_cumhaz")) m.baseline_cumhaz.emplace_back(get_num(s.at(0)), get_num(s.at(1)));
    m.penalty = get_num(j.at("penalty"));
    m.l1_ratio = get_num(j.at("l1_ratio"));
    if (j.contains("train_median_risk")) m.train_median_risk = get_opt_num(j.at("train_median_risk"));
    if (j.contains("diagnostics")) {
      const auto& d = j.at("diagnostics");
      m.diagnostics.objective = get_num(d.at("objective"));
      m.diagnostics.iterations = d.at("iterations").get<int>();
      m.diagnostics.converged = d.at("converged").get<bool>();
    }
    if (static_cast<std::size_t>(m.beta.size()) != m.feature_names.size() || m.train_means.size() != m.beta.size()) {
      throw Error(Errc::size_mismatch, "model coefficient and name counts differ");
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, std::string("Cox model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// PCA + Cox

inline json to_json(const featsel::PcaModel& p) {
  return {{"k", p.k},
          {"means", vec(Eigen::VectorXd(p.means.transpose()))},
          {"components", mat(p.components)},
          {"explained_variance", vec(p.explained_variance)}};
}

inline featsel::PcaModel pca_from_json(const json& j) {
  featsel::PcaModel p;
  p.k = j.at("k").get<int>();
  p.means = get_vec(j.at("means")).transpose();
  p.components = get_mat(j.at("components"), p.means.size());
  p.explained_variance = get_vec(j.at("explained_variance"));
  return p;
}

/// Raw input columns, an optional PCA projection, and the Cox model on top.
struct Predictor {
  std::vector<std::string> input_features;
  std::optional<featsel::PcaModel> pca;
  cox::CoxModel cox;

  Eigen::MatrixXd design(const FeatureTable& table) const {
    Eigen::MatrixXd x = table.select_features(input_features).values;
    if (pca) x = featsel::pca_transform(*pca, x);
    return x;
  }

  Eigen::VectorXd risk(const FeatureTable& table) const { return cox::partial_hazards(cox, design(table)); }
};

inline Predictor plain_predictor(cox::CoxModel m) {
  Predictor p;
  p.input_features = m.feature_names;
  p.cox = std::move(m);
  return p;
}

inline json to_json(const Predictor& p) {
  json j = to_json(p.cox);
  j["input_features"] = p.input_features;
  j["pca"] = p.pca ? to_json(*p.pca) : json(nullptr);
  return j;
}

inline Predictor predictor_from_json(const json& j) {
  Predictor p;
  p.cox = cox_from_json(j);
  p.input_features = j.contains("input_features") ? j.at("input_features").get<std::vector<std::string>>()
                                                  : p.cox.feature_names;
  if (j.contains("pca") && !j.at("pca").is_null()) p.pca = pca_from_json(j.at("pca"));
  return p;
}

inline Predictor load_predictor(const std::filesystem::path& path) { return predictor_from_json(read_json(path)); }

// ---------------------------------------------------------------------------
// ComBat

inline json to_json(const combat::CombatModel& m) {
  return {
      {"feature_names", m.feature_names},
      {"reference_batch", m.reference_batch},
      {"covariate_names", m.covariate_names},
      {"mode", m.mode == combat::FitMode::pooled ? "pooled" : "train-only"},
      {"empirical_bayes", m.empirical_bayes},
      {"alpha", vec(m.alpha)},
      {"beta", mat(m.beta)},
      {"sigma", vec(m.sigma)},
      {"batches", m.batches},
      {"gamma_hat", mat(m.gamma_hat)},
      {"delta_hat", mat(m.delta_hat)},
      {"gamma_star", mat(m.gamma_star)},
      {"delta_star", mat(m.delta_star)},
      {"eb_iterations", m.eb_iterations},
  };
}

inline combat::CombatModel combat_from_json(const json& j) {
  try {
    combat::CombatModel m;
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.reference_batch = j.at("reference_batch").get<std::string>();
    m.covariate_names = j.at("covariate_names").get<std::vector<std::string>>();
    m.mode = j.at("mode").get<std::string>() == "pooled" ? combat::FitMode::pooled : combat::FitMode::train_only;
    m.empirical_bayes = j.at("empirical_bayes").get<bool>();
    const auto p = static_cast<Eigen::Index>(m.feature_names.size());
    m.alpha = get_vec(j.at("alpha"));
    m.beta = get_mat(j.at("beta"), p);
    m.sigma = get_vec(j.at("sigma"));
    m.batches = j.at("batches").get<std::vector<std::string>>();
    m.gamma_hat = get_mat(j.at("gamma_hat"), p);
    m.delta_hat = get_mat(j.at("delta_hat"), p);
    m.gamma_star = get_mat(j.at("gamma_star"), p);
    m.delta_star = get_mat(j.at("delta_star"), p);
    m.eb_iterations = j.at("eb_iterations").get<std::vector<int>>();
    return m;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, std::string("ComBat model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Summaries

inline json to_json(const featsel::SelectionReport& r) {
  json freq = json::array();
  for (const auto& [name, f] : r.selection_frequency) freq.push_back({{"feature", name}, {"frequency", f}});
  json corr = json::array();
  for (const auto& [d, k] : r.dropped_correlated) corr.push_back({{"dropped", d}, {"kept", k}});
  return {{"dropped_constant", r.dropped_constant},
          {"dropped_correlated", corr},
          {"fold_selected", r.fold_selected},
          {"selection_frequency", freq},
          {"retained", r.retained},
          {"corr_threshold", r.corr_threshold},
          {"n_folds", r.n_folds},
          {"seed", r.seed}};
}

inline json to_json(const tune::TrialParams& p) {
  return {{"penalty", num(p.penalty)},
          {"l1_ratio", num(p.l1_ratio)},
          {"pca_k", p.pca_k ? json(*p.pca_k) : json(nullptr)}};
}

inline json to_json(const tune::TuneResult& r) {
  json trials = json::array();
  for (const auto& t : r.trials) {
    trials.push_back({{"params", to_json(t.params)}, {"mean_cindex", num(t.mean_cindex)}, {"fold_cindex", vec(t.fold_cindex)}});
  }
  return {{"best", to_json(r.best)},
          {"best_trial", r.best_trial},
          {"best_score", num(r.best_score)},
          {"seed", r.seed},
          {"n_trials", r.n_trials},
          {"n_folds", r.n_folds},
          {"trials", trials}};
}

inline json to_json(const cac::CacReport& r) {
  json lesions = json::array();
  for (const auto& l : r.lesions) {
    lesions.push_back({{"slice_index", l.slice_index},
                       {"voxel_count", l.voxel_count},
                       {"area_mm2", l.area_mm2},
                       {"peak_hu", l.peak_hu},
                       {"weight", l.weight},
                       {"score", l.score}});
  }
  return {{"lesions", lesions}, {"total_score", r.total_score}};
}

inline json to_json(const rkn::RknReference& r) { return {{"band_sds", r.band_sds}}; }

inline rkn::RknReference rkn_reference_from_json(const json& j) {
  rkn::RknReference r;
  const auto& a = j.at("band_sds");
  if (a.size() != static_cast<std::size_t>(rkn::kScaledBands)) throw Error(Errc::size_mismatch, "band_sds needs 5 values");
  for (std::size_t i = 0; i < a.size(); ++i) r.band_sds[i] = get_num(a[i]);
  return r;
}

inline json to_json(const metrics::BootstrapSummary& s) {
  return {{"point", num(s.point)},
          {"ci_low", num(s.ci_low)},
          {"ci_high", num(s.ci_high)},
          {"p_value", num(s.p_below_half)},
          {"p_two_sided", num(s.p_two_sided)},
          {"n_replicates", s.n_replicates},
          {"n_skipped", s.n_skipped},
          {"seed", s.seed}};
}

inline metrics::BootstrapSummary bootstrap_from_json(const json& j) {
  metrics::BootstrapSummary s;
  s.point = get_num(j.at("point"));
  s.ci_low = get_num(j.at("ci_low"));
  s.ci_high = get_num(j.at("ci_high"));
  s.p_below_half = get_num(j.at("p_value"));
  s.p_two_sided = get_num(j.at("p_two_sided"));
  s.n_replicates = j.at("n_replicates").get<int>();
  s.n_skipped = j.at("n_skipped").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline json to_json(const metrics::HazardRatio& h) {
  return {{"hr", num(h.hr)},
          {"ci_low", num(h.ci_low)},
          {"ci_high", num(h.ci_high)},
          {"p_value", num(h.p_value)},
          {"log_hr", num(h.log_hr)},
          {"se", num(h.se)},
          {"monotone_likelihood", h.monotone_likelihood}};
}

inline metrics::HazardRatio hazard_ratio_from_json(const json& j) {
  metrics::HazardRatio h;
  h.hr = get_num(j.at("hr"));
  h.ci_low = get_num(j.at("ci_low"));
  h.ci_high = get_num(j.at("ci_high"));
  h.p_value = get_num(j.at("p_value"));
  h.log_hr = get_num(j.at("log_hr"));
  h.se = get_num(j.at("se"));
  h.monotone_likelihood = j.at("monotone_likelihood").get<bool>();
  return h;
}

inline json to_json(const consensus::ClassificationMetrics& m) {
  return {{"tp", m.counts.tp},
          {"fn", m.counts.fn},
          {"tn", m.counts.tn},
          {"fp", m.counts.fp},
          {"accuracy", num(m.accuracy)},
          {"sensitivity", opt_num(m.sensitivity)},
          {"specificity", opt_num(m.specificity)},
          {"t_auc", opt_num(m.t_auc)}};
}

inline consensus::ClassificationMetrics classification_from_json(const json& j) {
  consensus::ClassificationMetrics m;
  m.counts = {j.at("tp").get<int>(), j.at("fn").get<int>(), j.at("tn").get<int>(), j.at("fp").get<int>()};
  m.accuracy = get_num(j.at("accuracy"));
  m.sensitivity = get_opt_num(j.at("sensitivity"));
  m.specificity = get_opt_num(j.at("specificity"));
  m.t_auc = get_opt_num(j.at("t_auc"));
  return m;
}

inline json to_json(const consensus::ConsensusReport& r) {
  json models = json::array();
  for (const auto& m : r.models) {
    models.push_back({{"name", m.name},
                      {"tau", num(m.tau)},
                      {"youden_j", num(m.youden_j)},
                      {"on_valid", to_json(m.on_valid)},
                      {"on_subset", to_json(m.on_subset)}});
  }
  return {{"horizon_months", r.horizon_months},
          {"n_valid", r.valid_ids.size()},
          {"n_subset", r.subset_ids.size()},
          {"coverage", num(r.coverage)},
          {"metrics", to_json(r.metrics)},
          {"subset_ids", r.subset_ids},
          {"subset_labels", r.subset_labels},
          {"valid_ids", r.valid_ids},
          {"models", models}};
}

inline consensus::ConsensusReport consensus_from_json(const json& j) {
  consensus::ConsensusReport r;
  r.horizon_months = j.at("horizon_months").get<double>();
  r.coverage = get_num(j.at("coverage"));
  r.metrics = classification_from_json(j.at("metrics"));
  r.subset_ids = j.at("subset_ids").get<std::vector<std::string>>();
  r.subset_labels = j.at("subset_labels").get<std::vector<int>>();
  r.valid_ids = j.at("valid_ids").get<std::vector<std::string>>();
  for (const auto& m : j.at("models")) {
    consensus::ModelSummary s;
    s.name = m.at("name").get<std::string>();
    s.tau = get_num(m.at("tau"));
    s.youden_j = get_num(m.at("youden_j"));
    s.on_valid = classification_from_json(m.at("on_valid"));
    s.on_subset = classification_from_json(m.at("on_subset"));
    r.models.push_back(std::move(s));
  }
  return r;
}

inline void write_km_csv(std::ostream& out, const metrics::KmCurve& km, const std::string& group) {
  for (std::size_t i = 0; i < km.times.size(); ++i) {
    out << format_number(km.times[i]) << ',' << format_number(km.survival[i]) << ',' << km.at_risk[i] << ','
        << csv::quote(group) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic specs

inline synth::CohortSpec cohort_spec_from_json(const json& j) {
  synth::CohortSpec s;
  try {
    if (j.contains("n_subjects")) s.n_subjects = j.at("n_subjects").get<std::size_t>();
    if (j.contains("beta")) s.beta = j.at("beta").get<std::vector<double>>();
    if (j.contains("n_noise_features")) s.n_noise_features = j.at("n_noise_features").get<std::size_t>();
    if (j.contains("weibull_shape")) s.weibull_shape = j.at("weibull_shape").get<double>();
    if (j.contains("weibull_scale")) s.weibull_scale = j.at("weibull_scale").get<double>();
    if (j.contains("censoring_rate")) s.censoring_rate = j.at("censoring_rate").get<double>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("batches")) {
      s.batches.clear();
      for (const auto& b : j.at("batches")) {
        s.batches.push_back({b.at("label").get<std::string>(), b.value("fraction", 1.0), b.value("shift", 0.0),
                             b.value("factor", 1.0)});
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, std::string("cohort spec: ") + e.what());
  }
  return s;
}

inline json to_json(const synth::CohortSpec& s) {
  json batches = json::array();
  for (const auto& b : s.batches) {
    batches.push_back({{"label", b.label}, {"fraction", b.fraction}, {"shift", b.shift}, {"factor", b.factor}});
  }
  return {{"n_subjects", s.n_subjects},         {"beta", s.beta},
          {"n_noise_features", s.n_noise_features}, {"weibull_shape", s.weibull_shape},
          {"weibull_scale", s.weibull_scale},   {"censoring_rate", s.censoring_rate},
          {"seed", s.seed},                     {"batches", batches}};
}

inline synth::PhantomSpec phantom_spec_from_json(const json& j) {
  synth::PhantomSpec s;
  try {
    if (j.contains("dims")) s.dims = j.at("dims").get<Dims>();
    if (j.contains("spacing_mm")) s.spacing_mm = j.at("spacing_mm").get<Spacing>();
    if (j.contains("background_hu")) s.background_hu = j.at("background_hu").get<double>();
    for (const auto& l : j.value("lesions", json::array())) {
      s.lesions.push_back({l.at("x").get<std::size_t>(), l.at("y").get<std::size_t>(), l.at("z").get<std::size_t>(),
                           l.value("width", std::size_t{1}), l.value("height", std::size_t{1}),
                           l.at("hu").get<double>()});
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, std::string("phantom spec: ") + e.what());
  }
  return s;
}

}  // namespace ctsurv::io

#endif  // CTSURV_IO_HPP
