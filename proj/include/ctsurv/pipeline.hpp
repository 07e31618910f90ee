#ifndef CTSURV_PIPELINE_HPP
#define CTSURV_PIPELINE_HPP

// Config-driven end-to-end runs:
//   ingest -> split -> spacing filter -> RKN volumes -> CAC scores ->
//   per model: impute -> harmonize -> select -> tune -> fit -> evaluate -> explain
//   -> ensembles -> consensus -> report + audit + manifest.
// Every fitted statistic is logged with the ids it was fitted on.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "ctsurv/cac.hpp"
#include "ctsurv/combat.hpp"
#include "ctsurv/consensus.hpp"
#include "ctsurv/cox.hpp"
#include "ctsurv/dataio.hpp"
#include "ctsurv/error.hpp"
#include "ctsurv/explain.hpp"
#include "ctsurv/featsel.hpp"
#include "ctsurv/io.hpp"
#include "ctsurv/metrics.hpp"
#include "ctsurv/random.hpp"
#include "ctsurv/rkn.hpp"
#include "ctsurv/tune.hpp"

namespace ctsurv::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

enum class Harmonization { none, combat, rkn, rkn_combat };

inline std::string harmonization_name(Harmonization h) {
  switch (h) {
    case Harmonization::none: return "none";
    case Harmonization::combat: return "combat";
    case Harmonization::rkn: return "rkn";
    case Harmonization::rkn_combat: return "rkn+combat";
  }
  return "none";
}

inline Harmonization parse_harmonization(const std::string& s) {
  if (s == "none") return Harmonization::none;
  if (s == "combat") return Harmonization::combat;
  if (s == "rkn") return Harmonization::rkn;
  if (s == "rkn+combat") return Harmonization::rkn_combat;
  throw Error(Errc::invalid_config, "unknown harmonization '" + s + "'");
}

inline bool uses_combat(Harmonization h) { return h == Harmonization::combat || h == Harmonization::rkn_combat; }

struct ModelInput {
  std::string name;
  fs::path features;
  TableSchema schema;
  Harmonization harmonization = Harmonization::none;
  double corr_threshold = 0.90;
  std::vector<int> pca_k;
};

struct VolumeEntry {
  std::string id;
  fs::path volume;
  fs::path mask;
};

struct EnsembleSpec {
  std::string name;
  std::vector<std::string> members;
  consensus::EnsembleMode mode = consensus::EnsembleMode::mean;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  fs::path base_dir;  // relative input paths resolve against this
  fs::path outcomes;
  double test_fraction = 0.3;
  fs::path split_file;  // optional: id,split with split in {train,test}
  fs::path spacings;    // optional: id,sx,sy,sz
  std::vector<ModelInput> models;

  std::string reference_batch = "auto";  // auto: largest training batch
  combat::FitMode combat_mode = combat::FitMode::pooled;
  bool empirical_bayes = true;

  int selection_folds = 5;
  double variance_tol = 1e-8;

  int trials = 100;
  int tune_folds = 5;
  double penalty_min = 1e-4;
  double penalty_max = 10.0;
  double l1_min = 0.0;
  double l1_max = 1.0;

  std::vector<double> horizons{60.0};
  int bootstrap = 1000;
  std::size_t shap_top_k = 20;

  std::vector<EnsembleSpec> ensembles;
  std::vector<std::string> consensus_members;
  std::vector<double> consensus_horizons{24.0, 60.0};

  std::optional<rkn::RknReference> rkn_reference;
  std::optional<VolumeEntry> rkn_reference_volume;
  int rkn_max_iters = 10;
  std::vector<VolumeEntry> rkn_volumes;

  std::vector<VolumeEntry> cac_volumes;
  bool cac_model = false;

  json raw;  // the config as given, echoed into the manifest

  fs::path resolve(const fs::path& p) const {
    if (p.empty() || p.is_absolute() || base_dir.empty()) return p;
    return base_dir / p;
  }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::invalid_config, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw Error(Errc::invalid_config, "unknown key '" + k + "' in " + where);
    }
  }
}

inline void check_name(const std::string& name) {
  if (name.empty() || !std::all_of(name.begin(), name.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '-' || c == '.';
      }) || name == "." || name == "..") {
    throw Error(Errc::invalid_config, "model names use [A-Za-z0-9_.-], got '" + name + "'");
  }
}

inline std::vector<VolumeEntry> volume_entries(const json& a) {
  std::vector<VolumeEntry> out;
  for (const auto& v : a) {
    check_keys(v, {"id", "volume", "mask"}, "volume entry");
    out.push_back({v.at("id").get<std::string>(), v.at("volume").get<std::string>(), v.at("mask").get<std::string>()});
  }
  return out;
}

inline consensus::EnsembleMode parse_ensemble_mode(const std::string& s) {
  if (s == "mean") return consensus::EnsembleMode::mean;
  if (s == "zscore") return consensus::EnsembleMode::zscore_mean;
  throw Error(Errc::invalid_config, "ensemble mode must be mean or zscore, got '" + s + "'");
}

}  // namespace detail

inline std::string ensemble_mode_name(consensus::EnsembleMode m) {
  return m == consensus::EnsembleMode::mean ? "mean" : "zscore";
}

inline PipelineConfig parse_config(const json& j, const fs::path& base_dir = {}) {
  using detail::check_keys;
  PipelineConfig c;
  c.raw = j;
  c.base_dir = base_dir;
  try {
    check_keys(j, {"seed", "output_dir", "outcomes", "split", "spacings", "models", "combat", "selection", "tuning",
                   "evaluation", "ensembles", "consensus", "rkn", "cac"},
               "config");
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (!j.contains("outcomes")) throw Error(Errc::invalid_config, "config needs an outcomes path");
    c.outcomes = j.at("outcomes").get<std::string>();
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"test_fraction", "file"}, "split");
      c.test_fraction = s.value("test_fraction", c.test_fraction);
      if (s.contains("file")) c.split_file = s.at("file").get<std::string>();
    }
    if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw Error(Errc::invalid_config, "test_fraction must be in (0, 1)");
    if (j.contains("spacings")) c.spacings = j.at("spacings").get<std::string>();

    std::set<std::string> names;
    for (const auto& m : j.value("models", json::array())) {
      check_keys(m, {"name", "features", "id_column", "batch_column", "covariates", "ignore_columns", "harmonization",
                     "corr_threshold", "pca_k"},
                 "model");
      ModelInput mi;
      mi.name = m.at("name").get<std::string>();
      detail::check_name(mi.name);
      if (!names.insert(mi.name).second) throw Error(Errc::invalid_config, "duplicate model name " + mi.name);
      mi.features = m.at("features").get<std::string>();
      mi.schema.id_column = m.value("id_column", std::string("id"));
      mi.schema.batch_column = m.value("batch_column", std::string());
      mi.schema.covariate_columns = m.value("covariates", std::vector<std::string>{});
      mi.schema.ignore_columns = m.value("ignore_columns", std::vector<std::string>{});
      mi.harmonization = parse_harmonization(m.value("harmonization", std::string("none")));
      mi.corr_threshold = m.value("corr_threshold", 0.90);
      if (!(mi.corr_threshold > 0.0 && mi.corr_threshold <= 1.0)) {
        throw Error(Errc::invalid_config, mi.name + ": corr_threshold must be in (0, 1]");
      }
      mi.pca_k = m.value("pca_k", std::vector<int>{});
      if (uses_combat(mi.harmonization) && mi.schema.batch_column.empty()) {
        throw Error(Errc::invalid_config, mi.name + ": ComBat needs a batch_column");
      }
      c.models.push_back(std::move(mi));
    }
    if (j.contains("combat")) {
      const auto& s = j.at("combat");
      check_keys(s, {"reference_batch", "mode", "empirical_bayes"}, "combat");
      c.reference_batch = s.value("reference_batch", c.reference_batch);
      const auto mode = s.value("mode", std::string("pooled"));
      if (mode == "pooled") c.combat_mode = combat::FitMode::pooled;
      else if (mode == "train-only") c.combat_mode = combat::FitMode::train_only;
      else throw Error(Errc::invalid_config, "combat mode must be pooled or train-only");
      c.empirical_bayes = s.value("empirical_bayes", true);
    }
    if (j.contains("selection")) {
      const auto& s = j.at("selection");
      check_keys(s, {"folds", "variance_tol"}, "selection");
      c.selection_folds = s.value("folds", c.selection_folds);
      c.variance_tol = s.value("variance_tol", c.variance_tol);
    }
    if (j.contains("tuning")) {
      const auto& s = j.at("tuning");
      check_keys(s, {"trials", "folds", "penalty_min", "penalty_max", "l1_min", "l1_max"}, "tuning");
      c.trials = s.value("trials", c.trials);
      c.tune_folds = s.value("folds", c.tune_folds);
      c.penalty_min = s.value("penalty_min", c.penalty_min);
      c.penalty_max = s.value("penalty_max", c.penalty_max);
      c.l1_min = s.value("l1_min", c.l1_min);
      c.l1_max = s.value("l1_max", c.l1_max);
    }
    if (j.contains("evaluation")) {
      const auto& s = j.at("evaluation");
      check_keys(s, {"horizons", "bootstrap", "shap_top_k"}, "evaluation");
      c.horizons = s.value("horizons", c.horizons);
      c.bootstrap = s.value("bootstrap", c.bootstrap);
      c.shap_top_k = s.value("shap_top_k", c.shap_top_k);
    }
    if (c.bootstrap < 1) throw Error(Errc::invalid_config, "bootstrap must be at least 1");
    for (const auto& e : j.value("ensembles", json::array())) {
      check_keys(e, {"name", "members", "mode"}, "ensemble");
      EnsembleSpec es;
      es.name = e.at("name").get<std::string>();
      detail::check_name(es.name);
      if (!names.insert(es.name).second) throw Error(Errc::invalid_config, "duplicate model name " + es.name);
      es.members = e.at("members").get<std::vector<std::string>>();
      es.mode = detail::parse_ensemble_mode(e.value("mode", std::string("mean")));
      if (es.members.size() < 2) throw Error(Errc::invalid_config, es.name + ": an ensemble needs at least two members");
      c.ensembles.push_back(std::move(es));
    }
    if (j.contains("consensus")) {
      const auto& s = j.at("consensus");
      check_keys(s, {"members", "horizons"}, "consensus");
      c.consensus_members = s.at("members").get<std::vector<std::string>>();
      c.consensus_horizons = s.value("horizons", c.consensus_horizons);
      if (c.consensus_members.size() < 2) throw Error(Errc::invalid_config, "consensus needs at least two members");
    }
    if (j.contains("rkn")) {
      const auto& s = j.at("rkn");
      check_keys(s, {"reference", "max_iters", "volumes"}, "rkn");
      const auto& r = s.at("reference");
      if (r.contains("band_sds")) c.rkn_reference = io::rkn_reference_from_json(r);
      else c.rkn_reference_volume = VolumeEntry{"reference", r.at("volume").get<std::string>(), r.at("mask").get<std::string>()};
      c.rkn_max_iters = s.value("max_iters", c.rkn_max_iters);
      c.rkn_volumes = detail::volume_entries(s.value("volumes", json::array()));
    }
    if (j.contains("cac")) {
      const auto& s = j.at("cac");
      check_keys(s, {"volumes", "model"}, "cac");
      c.cac_volumes = detail::volume_entries(s.value("volumes", json::array()));
      c.cac_model = s.value("model", false);
      if (c.cac_model && !names.insert("cac").second) throw Error(Errc::invalid_config, "model name cac is reserved");
    }
  } catch (const json::exception& e) {
    throw Error(Errc::invalid_config, e.what());
  }
  auto known = [&](const std::string& n) {
    return std::any_of(c.models.begin(), c.models.end(), [&](const auto& m) { return m.name == n; }) ||
           (c.cac_model && n == "cac");
  };
  for (const auto& e : c.ensembles) {
    for (const auto& m : e.members) {
      if (!known(m)) throw Error(Errc::invalid_config, e.name + ": unknown member " + m);
    }
  }
  for (const auto& m : c.consensus_members) {
    if (!known(m)) throw Error(Errc::invalid_config, "consensus: unknown member " + m);
  }
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  return parse_config(io::read_json(path), path.parent_path());
}

// ---------------------------------------------------------------------------
// Audit

struct AuditEntry {
  std::string object;
  std::string model;
  std::vector<std::string> fitted_on;
  bool transductive = false;  // deliberately sees test rows (pooled ComBat)
};

struct AuditLog {
  std::vector<AuditEntry> entries;

  void add(std::string object, std::string model, std::vector<std::string> ids, bool transductive = false) {
    std::sort(ids.begin(), ids.end());
    entries.push_back({std::move(object), std::move(model), std::move(ids), transductive});
  }

  /// "model/object" for every non-transductive entry fitted on a test id.
  std::vector<std::string> violations(const std::vector<std::string>& test_ids) const {
    const std::unordered_set<std::string> test(test_ids.begin(), test_ids.end());
    std::vector<std::string> out;
    for (const auto& e : entries) {
      if (e.transductive) continue;
      if (std::any_of(e.fitted_on.begin(), e.fitted_on.end(), [&](const auto& id) { return test.contains(id); })) {
        out.push_back(e.model + "/" + e.object);
      }
    }
    return out;
  }

  json to_json() const {
    json a = json::array();
    for (const auto& e : entries) {
      a.push_back({{"object", e.object}, {"model", e.model}, {"transductive", e.transductive},
                   {"n_fitted_on", e.fitted_on.size()}, {"fitted_on", e.fitted_on}});
    }
    return a;
  }

  static AuditLog from_json(const json& a) {
    AuditLog log;
    for (const auto& e : a) {
      log.entries.push_back({e.at("object").get<std::string>(), e.at("model").get<std::string>(),
                             e.at("fitted_on").get<std::vector<std::string>>(), e.at("transductive").get<bool>()});
    }
    return log;
  }
};

// ---------------------------------------------------------------------------
// Report

struct HorizonAuc {
  double horizon_months = 0.0;
  std::optional<metrics::BootstrapSummary> auc;
  std::string note;  // why auc is absent
};

struct ModelReport {
  std::string name;
  std::string kind = "cox";  // cox | ensemble
  std::string harmonization = "none";
  std::string ensemble_mode;
  std::vector<std::string> members;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t n_features_input = 0;
  std::vector<std::string> features;
  std::optional<tune::TrialParams> params;
  double cv_cindex = std::numeric_limits<double>::quiet_NaN();
  bool converged = true;
  double c_index_train = std::numeric_limits<double>::quiet_NaN();
  metrics::BootstrapSummary c_index;
  std::vector<HorizonAuc> t_auc;
  double risk_threshold = 0.0;
  int n_high = 0;
  int n_low = 0;
  std::optional<metrics::LogRankResult> log_rank;
  std::optional<metrics::HazardRatio> hazard_ratio;
  std::vector<std::string> notes;
};

struct RunReport {
  std::string schema = "ctsurv.report/1";
  std::uint64_t seed = 0;
  std::vector<double> horizons;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::vector<std::string> excluded;  // spacing outliers
  std::vector<ModelReport> models;
  std::vector<std::string> leakage_violations;
  std::size_t audit_entries = 0;
};

inline json to_json(const ModelReport& m) {
  json auc = json::array();
  for (const auto& h : m.t_auc) {
    auc.push_back({{"horizon_months", h.horizon_months},
                   {"auc", h.auc ? io::to_json(*h.auc) : json(nullptr)},
                   {"note", h.note}});
  }
  json lr = nullptr;
  if (m.log_rank) {
    lr = {{"statistic", io::num(m.log_rank->statistic)}, {"p_value", io::num(m.log_rank->p_value)},
          {"observed_high", io::num(m.log_rank->observed_a)}, {"expected_high", io::num(m.log_rank->expected_a)},
          {"variance", io::num(m.log_rank->variance)}};
  }
  return {{"name", m.name},
          {"kind", m.kind},
          {"harmonization", m.harmonization},
          {"ensemble_mode", m.ensemble_mode},
          {"members", m.members},
          {"n_train", m.n_train},
          {"n_test", m.n_test},
          {"n_features_input", m.n_features_input},
          {"features", m.features},
          {"params", m.params ? io::to_json(*m.params) : json(nullptr)},
          {"cv_cindex", io::num(m.cv_cindex)},
          {"converged", m.converged},
          {"c_index_train", io::num(m.c_index_train)},
          {"c_index", io::to_json(m.c_index)},
          {"t_auc", auc},
          {"risk_threshold", io::num(m.risk_threshold)},
          {"n_high", m.n_high},
          {"n_low", m.n_low},
          {"log_rank", lr},
          {"hazard_ratio", m.hazard_ratio ? io::to_json(*m.hazard_ratio) : json(nullptr)},
          {"notes", m.notes}};
}

inline ModelReport model_report_from_json(const json& j) {
  ModelReport m;
  m.name = j.at("name").get<std::string>();
  m.kind = j.at("kind").get<std::string>();
  m.harmonization = j.at("harmonization").get<std::string>();
  m.ensemble_mode = j.at("ensemble_mode").get<std::string>();
  m.members = j.at("members").get<std::vector<std::string>>();
  m.n_train = j.at("n_train").get<std::size_t>();
  m.n_test = j.at("n_test").get<std::size_t>();
  m.n_features_input = j.at("n_features_input").get<std::size_t>();
  m.features = j.at("features").get<std::vector<std::string>>();
  if (!j.at("params").is_null()) {
    const auto& p = j.at("params");
    tune::TrialParams tp;
    tp.penalty = io::get_num(p.at("penalty"));
    tp.l1_ratio = io::get_num(p.at("l1_ratio"));
    if (!p.at("pca_k").is_null()) tp.pca_k = p.at("pca_k").get<int>();
    m.params = tp;
  }
  m.cv_cindex = io::get_num(j.at("cv_cindex"));
  m.converged = j.at("converged").get<bool>();
  m.c_index_train = io::get_num(j.at("c_index_train"));
  m.c_index = io::bootstrap_from_json(j.at("c_index"));
  for (const auto& h : j.at("t_auc")) {
    HorizonAuc ha;
    ha.horizon_months = h.at("horizon_months").get<double>();
    if (!h.at("auc").is_null()) ha.auc = io::bootstrap_from_json(h.at("auc"));
    ha.note = h.at("note").get<std::string>();
    m.t_auc.push_back(std::move(ha));
  }
  m.risk_threshold = io::get_num(j.at("risk_threshold"));
  m.n_high = j.at("n_high").get<int>();
  m.n_low = j.at("n_low").get<int>();
  if (!j.at("log_rank").is_null()) {
    const auto& l = j.at("log_rank");
    metrics::LogRankResult r;
    r.statistic = io::get_num(l.at("statistic"));
    r.p_value = io::get_num(l.at("p_value"));
    r.observed_a = io::get_num(l.at("observed_high"));
    r.expected_a = io::get_num(l.at("expected_high"));
    r.variance = io::get_num(l.at("variance"));
    m.log_rank = r;
  }
  if (!j.at("hazard_ratio").is_null()) m.hazard_ratio = io::hazard_ratio_from_json(j.at("hazard_ratio"));
  m.notes = j.at("notes").get<std::vector<std::string>>();
  return m;
}

inline json to_json(const RunReport& r) {
  json models = json::array();
  for (const auto& m : r.models) models.push_back(to_json(m));
  return {{"schema", r.schema},
          {"seed", r.seed},
          {"horizons", r.horizons},
          {"n_train", r.n_train},
          {"n_test", r.n_test},
          {"excluded", r.excluded},
          {"models", models},
          {"leakage", {{"audit_entries", r.audit_entries}, {"violations", r.leakage_violations}}}};
}

inline RunReport run_report_from_json(const json& j) {
  try {
    RunReport r;
    r.schema = j.at("schema").get<std::string>();
    if (r.schema != "ctsurv.report/1") throw Error(Errc::parse, "unknown report schema " + r.schema);
    r.seed = j.at("seed").get<std::uint64_t>();
    r.horizons = j.at("horizons").get<std::vector<double>>();
    r.n_train = j.at("n_train").get<std::size_t>();
    r.n_test = j.at("n_test").get<std::size_t>();
    r.excluded = j.at("excluded").get<std::vector<std::string>>();
    for (const auto& m : j.at("models")) r.models.push_back(model_report_from_json(m));
    r.audit_entries = j.at("leakage").at("audit_entries").get<std::size_t>();
    r.leakage_violations = j.at("leakage").at("violations").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::parse, std::string("report: ") + e.what());
  }
}

/// Writes report.json into `out_dir` (created if needed).
inline fs::path emit_report(const RunReport& report, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const auto path = out_dir / "report.json";
  io::write_json(to_json(report), path);
  return path;
}

inline RunReport read_report(const fs::path& path) { return run_report_from_json(io::read_json(path)); }

// ---------------------------------------------------------------------------
// Evaluation shared by single models and ensembles

namespace detail {

template <class T>
std::vector<T> gather(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace detail

struct EvaluationOutput {
  ModelReport report;  // metric fields only
  std::vector<int> test_high;
  std::vector<int> train_high;
  std::string km_csv;
};

/// Test-set metrics for one risk vector. The median split uses `threshold`
/// when given, else the median training risk; train outcomes always supply
/// the censoring distribution for t-AUC.
inline EvaluationOutput evaluate_risks(const OutcomeTable& train, std::span<const double> train_risk,
                                       const OutcomeTable& test, std::span<const double> test_risk,
                                       const std::vector<double>& horizons, int n_bootstrap, std::uint64_t seed,
                                       std::optional<double> threshold = std::nullopt) {
  using detail::gather;
  EvaluationOutput out;
  ModelReport& r = out.report;
  r.n_train = train.size();
  r.n_test = test.size();
  const std::span<const double> tt(test.time_months), trt(train.time_months);
  const std::span<const int> te(test.event), tre(train.event);

  if (!train_risk.empty()) {
    const auto train_counts = metrics::concordance_counts(trt, tre, train_risk);
    if (train_counts.comparable > 0) r.c_index_train = train_counts.value();
  } else if (!threshold) {
    throw Error(Errc::domain, "risk grouping needs training risks or a stored threshold");
  }

  metrics::ResampleMetric cindex = [&](std::span<const std::size_t> idx) -> std::optional<double> {
    const auto c = metrics::concordance_counts(gather(tt, idx), gather(te, idx), gather(test_risk, idx));
    if (c.comparable == 0) return std::nullopt;
    return c.value();
  };
  r.c_index = metrics::bootstrap(cindex, test.size(), n_bootstrap, derive_seed(seed, 0));
  if (std::isnan(r.c_index.point)) throw Error(Errc::no_comparable_pairs, "test set has no comparable pair");

  for (std::size_t k = 0; k < horizons.size(); ++k) {
    HorizonAuc h;
    h.horizon_months = horizons[k];
    metrics::ResampleMetric auc = [&](std::span<const std::size_t> idx) -> std::optional<double> {
      try {
        return metrics::cumulative_dynamic_auc(trt, tre, gather(tt, idx), gather(te, idx), gather(test_risk, idx),
                                               horizons[k]);
      } catch (const Error&) {
        return std::nullopt;
      }
    };
    try {
      std::vector<std::size_t> all(test.size());
      std::iota(all.begin(), all.end(), std::size_t{0});
      const auto point = auc(all);
      if (!point) {
        h.note = "no cases or no controls at the horizon";
      } else {
        h.auc = metrics::bootstrap(auc, test.size(), n_bootstrap, derive_seed(seed, k + 1));
      }
    } catch (const Error& e) {
      h.note = e.what();
    }
    r.t_auc.push_back(std::move(h));
  }

  r.risk_threshold = threshold ? *threshold : cox::median(std::vector<double>(train_risk.begin(), train_risk.end()));
  out.test_high = cox::split_at(test_risk, r.risk_threshold).high;
  out.train_high = cox::split_at(train_risk, r.risk_threshold).high;
  r.n_high = static_cast<int>(std::count(out.test_high.begin(), out.test_high.end(), 1));
  r.n_low = static_cast<int>(test.size()) - r.n_high;

  std::vector<std::size_t> hi, lo;
  for (std::size_t i = 0; i < test.size(); ++i) (out.test_high[i] ? hi : lo).push_back(i);
  std::ostringstream km;
  km << "time,survival,at_risk,group\n";
  if (!hi.empty()) io::write_km_csv(km, metrics::km_curve(gather(tt, hi), gather(te, hi)), "high");
  if (!lo.empty()) io::write_km_csv(km, metrics::km_curve(gather(tt, lo), gather(te, lo)), "low");
  out.km_csv = km.str();

  try {
    r.log_rank = metrics::log_rank(gather(tt, hi), gather(te, hi), gather(tt, lo), gather(te, lo));
  } catch (const Error& e) {
    r.notes.push_back(std::string("log-rank: ") + e.what());
  }
  try {
    r.hazard_ratio = metrics::hazard_ratio(tt, te, out.test_high);
  } catch (const Error& e) {
    r.notes.push_back(std::string("hazard ratio: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run

/// A failed stage: the message carries the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::exception& e)
      : std::runtime_error("[" + stage + "] " + e.what()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

/// Stratified on the event indicator: round(fraction * stratum size) of each
/// stratum goes to test. Lists keep the outcome-table order.
inline Split make_split(const OutcomeTable& o, double test_fraction, std::uint64_t seed) {
  std::vector<char> is_test(o.size(), 0);
  for (int stratum = 0; stratum < 2; ++stratum) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (o.event[i] == stratum) rows.push_back(i);
    }
    Rng rng(derive_seed(seed, 0x5b117, static_cast<std::uint64_t>(stratum)));
    rng.shuffle(rows);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(rows.size())));
    for (std::size_t k = 0; k < n_test; ++k) is_test[rows[k]] = 1;
  }
  Split s;
  for (std::size_t i = 0; i < o.size(); ++i) (is_test[i] ? s.test : s.train).push_back(o.subject_ids[i]);
  return s;
}

inline Split read_split(const fs::path& path) {
  const auto doc = csv::read(path);
  const auto id = std::find(doc.header.begin(), doc.header.end(), "id");
  const auto sp = std::find(doc.header.begin(), doc.header.end(), "split");
  if (id == doc.header.end() || sp == doc.header.end()) throw Error(Errc::missing_column, "split file needs id and split columns");
  const auto ic = static_cast<std::size_t>(id - doc.header.begin()), sc = static_cast<std::size_t>(sp - doc.header.begin());
  Split s;
  for (const auto& row : doc.rows) {
    if (row[sc] == "train") s.train.push_back(row[ic]);
    else if (row[sc] == "test") s.test.push_back(row[ic]);
    else throw Error(Errc::parse, "split must be train or test, got '" + row[sc] + "'");
  }
  return s;
}

struct RunResult {
  RunReport report;
  std::vector<consensus::ConsensusReport> consensus;
  AuditLog audit;
  json manifest;
  Split split;
  fs::path output_dir;
};

namespace detail {

// What later stages need from a fitted single model.
struct FittedModel {
  std::string name;
  std::unordered_map<std::string, double> train_risk, test_risk;
  // horizon index -> id -> S(t)
  std::vector<std::unordered_map<std::string, double>> train_surv, test_surv;
};

class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }

  void text(const std::string& rel, const std::string& content) {
    const auto p = prepare(rel);
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(Errc::io, "cannot write " + p.string());
    out << content;
    if (!out) throw Error(Errc::io, "write failed: " + p.string());
    record(rel);
  }

  void json_file(const std::string& rel, const json& j) { text(rel, j.dump(2) + "\n"); }

  void volume(const std::string& rel, const Volume& v) {
    const auto p = prepare(rel);
    save_volume(v, p);
    record(rel);
    record((fs::path(rel).parent_path() / (fs::path(rel).stem().string() + ".raw")).generic_string());
  }

  void record(const std::string& rel) {
    if (std::find(files_.begin(), files_.end(), rel) == files_.end()) files_.push_back(rel);
  }

  json hashes() const {
    json a = json::array();
    for (const auto& f : files_) a.push_back({{"path", f}, {"fnv1a64", hex64(fnv1a64(read_bytes(root_ / f)))}});
    return a;
  }

 private:
  fs::path prepare(const std::string& rel) {
    const auto p = root_ / rel;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw Error(Errc::io, "cannot create " + p.parent_path().string());
    return p;
  }

  fs::path root_;
  std::vector<std::string> files_;
};

inline std::string risks_csv(const std::vector<std::string>& train_ids, std::span<const double> train_risk,
                             std::span<const int> train_high, const std::vector<std::string>& test_ids,
                             std::span<const double> test_risk, std::span<const int> test_high) {
  std::ostringstream s;
  s << "id,split,risk,group\n";
  for (std::size_t i = 0; i < train_ids.size(); ++i) {
    s << csv::quote(train_ids[i]) << ",train," << format_number(train_risk[i]) << ','
      << (train_high[i] ? "high" : "low") << '\n';
  }
  for (std::size_t i = 0; i < test_ids.size(); ++i) {
    s << csv::quote(test_ids[i]) << ",test," << format_number(test_risk[i]) << ',' << (test_high[i] ? "high" : "low")
      << '\n';
  }
  return s.str();
}

inline std::vector<Spacing> read_spacings(const fs::path& path, std::vector<std::string>& ids) {
  const auto doc = csv::read(path);
  auto col = [&](const char* name) {
    auto it = std::find(doc.header.begin(), doc.header.end(), name);
    if (it == doc.header.end()) throw Error(Errc::missing_column, path.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - doc.header.begin());
  };
  const std::size_t ci = col("id"), cx = col("sx"), cy = col("sy"), cz = col("sz");
  std::vector<Spacing> out;
  for (const auto& row : doc.rows) {
    Spacing s{};
    const std::size_t cols[3] = {cx, cy, cz};
    for (int k = 0; k < 3; ++k) {
      const auto v = parse_number(row[cols[k]]);
      if (!v) throw Error(Errc::non_numeric, path.string() + ": bad spacing for " + row[ci]);
      s[static_cast<std::size_t>(k)] = *v;
    }
    ids.push_back(row[ci]);
    out.push_back(s);
  }
  return out;
}

}  // namespace detail

inline RunResult run_pipeline(const PipelineConfig& cfg) {
  using detail::as_span;
  RunResult res;
  res.output_dir = cfg.output_dir;
  detail::ArtifactWriter out(cfg.output_dir);
  AuditLog& audit = res.audit;
  RunReport& report = res.report;
  report.seed = cfg.seed;
  report.horizons = cfg.horizons;

  json echo = cfg.raw;
  if (echo.is_object()) echo.erase("output_dir");
  json& manifest = res.manifest;
  manifest = {{"schema", "ctsurv.manifest/1"}, {"seed", cfg.seed}, {"config", echo}};
  json seeds = json::object(), thresholds = json::object();
  std::string stage = "ingest";

  auto write_manifest = [&](const std::string& status, const std::string& error) {
    manifest["status"] = status;
    manifest["failed_stage"] = status == "ok" ? json(nullptr) : json(stage);
    manifest["error"] = error.empty() ? json(nullptr) : json(error);
    manifest["seeds"] = seeds;
    manifest["thresholds"] = thresholds;
    manifest["artifacts"] = out.hashes();
    io::write_json(manifest, out.root() / "manifest.json");
  };

  try {
    {
      std::error_code ec;
      fs::create_directories(cfg.output_dir, ec);
      if (ec || !fs::is_directory(cfg.output_dir)) {
        throw Error(Errc::io, "cannot create output directory " + cfg.output_dir.string());
      }
    }
    OutcomeTable outcomes = load_outcomes(cfg.resolve(cfg.outcomes));
    outcomes.validate();

    stage = "split";
    seeds["split"] = derive_seed(cfg.seed, 1);
    Split split = cfg.split_file.empty() ? make_split(outcomes, cfg.test_fraction, derive_seed(cfg.seed, 1))
                                         : read_split(cfg.resolve(cfg.split_file));
    {
      const std::unordered_set<std::string> known(outcomes.subject_ids.begin(), outcomes.subject_ids.end());
      std::unordered_set<std::string> seen;
      for (const auto* list : {&split.train, &split.test}) {
        for (const auto& id : *list) {
          if (!known.contains(id)) throw Error(Errc::name_mismatch, "split lists unknown subject " + id);
          if (!seen.insert(id).second) throw Error(Errc::duplicate_id, "subject " + id + " in both splits");
        }
      }
    }

    if (!cfg.spacings.empty()) {
      stage = "spacing";
      std::vector<std::string> ids;
      const auto sp = detail::read_spacings(cfg.resolve(cfg.spacings), ids);
      const std::unordered_set<std::string> train_set(split.train.begin(), split.train.end());
      std::vector<Spacing> train_sp;
      std::vector<std::string> train_sp_ids;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (train_set.contains(ids[i])) {
          train_sp.push_back(sp[i]);
          train_sp_ids.push_back(ids[i]);
        }
      }
      const auto stats = spacing_stats(train_sp);
      audit.add("spacing_stats", "", train_sp_ids);
      const auto filt = spacing_filter(ids, sp, stats);
      thresholds["spacing_mm"] = filt.thresholds;
      const std::unordered_set<std::string> excluded(filt.excluded.begin(), filt.excluded.end());
      auto drop = [&](std::vector<std::string>& v) {
        std::erase_if(v, [&](const std::string& id) { return excluded.contains(id); });
      };
      drop(split.train);
      drop(split.test);
      report.excluded = filt.excluded;
      std::sort(report.excluded.begin(), report.excluded.end());
    }
    if (split.train.empty() || split.test.empty()) throw Error(Errc::empty_table, "train or test split is empty");
    res.split = split;
    report.n_train = split.train.size();
    report.n_test = split.test.size();
    {
      std::ostringstream s;
      s << "id,split\n";
      for (const auto& id : split.train) s << csv::quote(id) << ",train\n";
      for (const auto& id : split.test) s << csv::quote(id) << ",test\n";
      out.text("split.csv", s.str());
    }

    if (!cfg.rkn_volumes.empty()) {
      stage = "rkn";
      rkn::RknReference ref;
      if (cfg.rkn_reference) {
        ref = *cfg.rkn_reference;
      } else {
        const auto& rv = *cfg.rkn_reference_volume;
        ref = rkn::reference_from(load_volume(cfg.resolve(rv.volume)), load_mask(cfg.resolve(rv.mask)));
      }
      json summary = json::array();
      for (const auto& v : cfg.rkn_volumes) {
        detail::check_name(v.id);
        const auto r = rkn::rkn_normalize(load_volume(cfg.resolve(v.volume)), ref, load_mask(cfg.resolve(v.mask)),
                                          cfg.rkn_max_iters);
        out.volume("rkn/" + v.id + ".json", r.volume);
        summary.push_back({{"id", v.id}, {"iterations", r.iterations}, {"converged", r.converged}, {"gains", r.gains}});
      }
      out.json_file("rkn/summary.json", {{"reference", io::to_json(ref)}, {"volumes", summary}});
    }

    std::optional<FeatureTable> cac_table;
    if (!cfg.cac_volumes.empty()) {
      stage = "cac";
      FeatureTable t;
      t.feature_names = {"cac_score"};
      t.values.resize(static_cast<Eigen::Index>(cfg.cac_volumes.size()), 1);
      std::ostringstream s;
      s << "id,cac_score\n";
      for (std::size_t i = 0; i < cfg.cac_volumes.size(); ++i) {
        const auto& v = cfg.cac_volumes[i];
        detail::check_name(v.id);
        const auto rep = cac::agatston(load_volume(cfg.resolve(v.volume)), load_mask(cfg.resolve(v.mask)));
        out.json_file("cac/" + v.id + ".json", io::to_json(rep));
        s << csv::quote(v.id) << ',' << format_number(rep.total_score) << '\n';
        t.subject_ids.push_back(v.id);
        t.values(static_cast<Eigen::Index>(i), 0) = rep.total_score;
      }
      t.validate();
      out.text("cac_scores.csv", s.str());
      if (cfg.cac_model) cac_table = std::move(t);
    }

    std::vector<ModelInput> inputs = cfg.models;
    if (cac_table) inputs.push_back(ModelInput{"cac", {}, {}, Harmonization::none, 0.90, {}});

    const std::unordered_set<std::string> train_set(split.train.begin(), split.train.end());
    const std::unordered_set<std::string> test_set(split.test.begin(), split.test.end());
    std::vector<double> cons_h = cfg.consensus_members.empty() ? std::vector<double>{} : cfg.consensus_horizons;
    std::vector<detail::FittedModel> fitted;
    json model_seeds = json::object(), model_thresholds = json::object();

    for (std::size_t mi = 0; mi < inputs.size(); ++mi) {
      const auto& in = inputs[mi];
      const std::string dir = "models/" + in.name + "/";
      const std::uint64_t sel_seed = derive_seed(cfg.seed, 2, mi), tune_seed = derive_seed(cfg.seed, 3, mi),
                          boot_seed = derive_seed(cfg.seed, 4, mi);
      model_seeds[in.name] = {{"selection", sel_seed}, {"tuning", tune_seed}, {"bootstrap", boot_seed}};

      stage = "ingest:" + in.name;
      FeatureTable table = cac_table && in.name == "cac" ? *cac_table
                                                         : load_feature_table(cfg.resolve(in.features), in.schema);
      table.validate();
      const auto aligned = align_cohort(table, outcomes);
      std::vector<std::size_t> tr_rows, te_rows;
      for (std::size_t i = 0; i < aligned.features.n_subjects(); ++i) {
        const auto& id = aligned.features.subject_ids[i];
        if (train_set.contains(id)) tr_rows.push_back(i);
        else if (test_set.contains(id)) te_rows.push_back(i);
      }
      if (tr_rows.empty() || te_rows.empty()) throw Error(Errc::empty_intersection, "no train or no test subjects with features");
      FeatureTable tr = aligned.features.select_rows(tr_rows), te = aligned.features.select_rows(te_rows);
      const OutcomeTable otr = aligned.outcomes.select(tr_rows), ote = aligned.outcomes.select(te_rows);

      stage = "impute:" + in.name;
      const auto imputer = featsel::fit_imputer(tr, featsel::ImputeStrategy::median);
      audit.add("imputer", in.name, imputer.fitted_on);
      tr = featsel::apply_imputer(imputer, tr);
      te = featsel::apply_imputer(imputer, te);
      {
        json fill = json::object();
        for (std::size_t k = 0; k < imputer.feature_names.size(); ++k) fill[imputer.feature_names[k]] = io::num(imputer.fill[k]);
        out.json_file(dir + "imputer.json", {{"strategy", "median"}, {"fill", fill}});
      }

      stage = "harmonize:" + in.name;
      if (uses_combat(in.harmonization)) {
        combat::HarmonizationConfig hc;
        hc.reference_batch = cfg.reference_batch == "auto" ? combat::largest_batch(tr.batch) : cfg.reference_batch;
        hc.covariate_names = tr.covariate_names;
        hc.mode = cfg.combat_mode;
        hc.empirical_bayes = cfg.empirical_bayes;
        combat::CombatModel cm;
        if (cfg.combat_mode == combat::FitMode::pooled) {
          std::vector<std::size_t> all_rows = tr_rows;
          all_rows.insert(all_rows.end(), te_rows.begin(), te_rows.end());
          const auto pooled = featsel::apply_imputer(imputer, aligned.features.select_rows(all_rows));
          cm = combat::combat_fit(pooled, hc);
          audit.add("combat", in.name, pooled.subject_ids, true);
        } else {
          cm = combat::combat_fit(tr, hc);
          audit.add("combat", in.name, tr.subject_ids);
        }
        tr = combat::combat_apply(cm, tr);
        te = combat::combat_apply(cm, te);
        out.json_file(dir + "combat.json", io::to_json(cm));
      }

      stage = "select:" + in.name;
      const auto sel = featsel::stability_select(tr.values, tr.feature_names, otr.event, in.corr_threshold,
                                                 cfg.selection_folds, sel_seed, cfg.variance_tol);
      audit.add("selection", in.name, tr.subject_ids);
      out.json_file(dir + "selection.json", io::to_json(sel));
      if (sel.retained.empty()) throw Error(Errc::empty_table, "no feature retained by selection");
      const Eigen::MatrixXd xtr = tr.select_features(sel.retained).values;
      const Eigen::MatrixXd xte = te.select_features(sel.retained).values;

      stage = "tune:" + in.name;
      tune::SearchSpace space{cfg.penalty_min, cfg.penalty_max, cfg.l1_min, cfg.l1_max, in.pca_k};
      const auto tuned = tune::tune(xtr, otr.time_months, otr.event, space, cfg.trials, cfg.tune_folds, tune_seed);
      audit.add("tuning", in.name, tr.subject_ids);
      out.json_file(dir + "tune.json", io::to_json(tuned));

      stage = "fit:" + in.name;
      io::Predictor pred;
      pred.input_features = sel.retained;
      Eigen::MatrixXd dtr = xtr, dte = xte;
      std::vector<std::string> names = sel.retained;
      if (tuned.best.pca_k) {
        pred.pca = featsel::pca_fit(xtr, *tuned.best.pca_k);
        audit.add("pca", in.name, tr.subject_ids);
        dtr = featsel::pca_transform(*pred.pca, xtr);
        dte = featsel::pca_transform(*pred.pca, xte);
        names.clear();
        for (int k = 0; k < *tuned.best.pca_k; ++k) names.push_back("pc" + std::to_string(k + 1));
      }
      cox::FitOptions opt;
      opt.penalty = tuned.best.penalty;
      opt.l1_ratio = tuned.best.l1_ratio;
      pred.cox = cox::cox_fit(dtr, otr.time_months, otr.event, opt, names);
      audit.add("cox", in.name, tr.subject_ids);
      const Eigen::VectorXd rtr = cox::partial_hazards(pred.cox, dtr), rte = cox::partial_hazards(pred.cox, dte);

      stage = "evaluate:" + in.name;
      auto ev = evaluate_risks(otr, as_span(rtr), ote, as_span(rte), cfg.horizons, cfg.bootstrap, boot_seed);
      pred.cox.train_median_risk = ev.report.risk_threshold;
      audit.add("median_threshold", in.name, tr.subject_ids);
      out.json_file(dir + "model.json", io::to_json(pred));
      out.text(dir + "km.csv", ev.km_csv);
      out.text(dir + "risks.csv", detail::risks_csv(tr.subject_ids, as_span(rtr), ev.train_high, te.subject_ids,
                                                    as_span(rte), ev.test_high));
      ModelReport mr = std::move(ev.report);
      mr.name = in.name;
      mr.kind = "cox";
      mr.harmonization = harmonization_name(in.harmonization);
      mr.n_features_input = table.n_features();
      mr.features = names;
      mr.params = tuned.best;
      mr.cv_cindex = tuned.best_score;
      mr.converged = pred.cox.diagnostics.converged;
      if (!mr.converged) mr.notes.push_back("final fit did not converge");
      model_thresholds[in.name] = {{"corr_threshold", in.corr_threshold},
                                   {"variance_tol", cfg.variance_tol},
                                   {"risk_threshold", io::num(mr.risk_threshold)}};

      stage = "explain:" + in.name;
      {
        const auto attr = explain::shap_linear(pred.cox, dte);
        std::ostringstream phi, summary;
        phi << "id";
        for (const auto& n : attr.feature_names) phi << ',' << csv::quote(n);
        phi << '\n';
        for (Eigen::Index i = 0; i < attr.phi.rows(); ++i) {
          phi << csv::quote(te.subject_ids[static_cast<std::size_t>(i)]);
          for (Eigen::Index c = 0; c < attr.phi.cols(); ++c) phi << ',' << format_number(attr.phi(i, c));
          phi << '\n';
        }
        summary << "feature,mean_abs_phi,direction\n";
        for (const auto& f : explain::shap_summary(attr, cfg.shap_top_k)) {
          summary << csv::quote(f.feature) << ',' << format_number(f.mean_abs_phi) << ',' << f.direction << '\n';
        }
        out.text(dir + "shap_phi.csv", phi.str());
        out.text(dir + "shap_summary.csv", summary.str());
      }

      detail::FittedModel fm;
      fm.name = in.name;
      for (std::size_t i = 0; i < tr.n_subjects(); ++i) fm.train_risk[tr.subject_ids[i]] = rtr(static_cast<Eigen::Index>(i));
      for (std::size_t i = 0; i < te.n_subjects(); ++i) fm.test_risk[te.subject_ids[i]] = rte(static_cast<Eigen::Index>(i));
      for (double h : cons_h) {
        const Eigen::VectorXd s_tr = cox::survival_at(pred.cox, dtr, h), s_te = cox::survival_at(pred.cox, dte, h);
        auto& a = fm.train_surv.emplace_back();
        auto& b = fm.test_surv.emplace_back();
        for (std::size_t i = 0; i < tr.n_subjects(); ++i) a[tr.subject_ids[i]] = s_tr(static_cast<Eigen::Index>(i));
        for (std::size_t i = 0; i < te.n_subjects(); ++i) b[te.subject_ids[i]] = s_te(static_cast<Eigen::Index>(i));
      }
      fitted.push_back(std::move(fm));
      report.models.push_back(std::move(mr));
    }
    seeds["models"] = model_seeds;
    thresholds["models"] = model_thresholds;

    auto find_fitted = [&](const std::string& n) -> const detail::FittedModel& {
      for (const auto& f : fitted) {
        if (f.name == n) return f;
      }
      throw Error(Errc::invalid_config, "unknown model " + n);
    };
    // Ids (in split order) that every member scored.
    auto shared_ids = [&](const std::vector<std::string>& ids, const std::vector<std::string>& members, bool train) {
      std::vector<std::string> outv;
      for (const auto& id : ids) {
        bool all = true;
        for (const auto& m : members) {
          const auto& f = find_fitted(m);
          all = all && (train ? f.train_risk : f.test_risk).contains(id);
        }
        if (all) outv.push_back(id);
      }
      return outv;
    };
    auto outcomes_for = [&](const std::vector<std::string>& ids) { return outcomes.select(outcomes.rows_of(ids)); };

    json ens_seeds = json::object();
    for (std::size_t ei = 0; ei < cfg.ensembles.size(); ++ei) {
      const auto& es = cfg.ensembles[ei];
      stage = "ensemble:" + es.name;
      const auto boot_seed = derive_seed(cfg.seed, 5, ei);
      ens_seeds[es.name] = {{"bootstrap", boot_seed}};
      const auto tr_ids = shared_ids(split.train, es.members, true);
      const auto te_ids = shared_ids(split.test, es.members, false);
      if (tr_ids.empty() || te_ids.empty()) throw Error(Errc::empty_intersection, "members share no subjects");
      std::vector<std::vector<double>> rtr, rte;
      std::vector<std::pair<double, double>> stats;
      for (const auto& m : es.members) {
        const auto& f = find_fitted(m);
        auto& a = rtr.emplace_back();
        auto& b = rte.emplace_back();
        for (const auto& id : tr_ids) a.push_back(f.train_risk.at(id));
        for (const auto& id : te_ids) b.push_back(f.test_risk.at(id));
        stats.push_back(consensus::mean_sd(a));
      }
      if (es.mode == consensus::EnsembleMode::zscore_mean) audit.add("zscore_stats", es.name, tr_ids);
      const auto etr = consensus::ensemble_risk(rtr, es.mode, stats);
      const auto ete = consensus::ensemble_risk(rte, es.mode, stats);
      const auto otr = outcomes_for(tr_ids), ote = outcomes_for(te_ids);
      auto ev = evaluate_risks(otr, etr, ote, ete, cfg.horizons, cfg.bootstrap, boot_seed);
      audit.add("median_threshold", es.name, tr_ids);
      const std::string dir = "ensembles/" + es.name + "/";
      out.text(dir + "km.csv", ev.km_csv);
      out.text(dir + "risks.csv", detail::risks_csv(tr_ids, etr, ev.train_high, te_ids, ete, ev.test_high));
      ModelReport mr = std::move(ev.report);
      mr.name = es.name;
      mr.kind = "ensemble";
      mr.harmonization = "";
      mr.ensemble_mode = ensemble_mode_name(es.mode);
      mr.members = es.members;
      mr.converged = true;
      model_thresholds[es.name] = {{"risk_threshold", io::num(mr.risk_threshold)}};
      report.models.push_back(std::move(mr));
    }
    seeds["ensembles"] = ens_seeds;
    thresholds["models"] = model_thresholds;

    json cons_thresholds = json::array();
    for (std::size_t hk = 0; hk < cons_h.size(); ++hk) {
      const double h = cons_h[hk];
      stage = "consensus:" + format_number(h);
      const auto tr_ids = shared_ids(split.train, cfg.consensus_members, true);
      const auto te_ids = shared_ids(split.test, cfg.consensus_members, false);
      if (tr_ids.empty() || te_ids.empty()) throw Error(Errc::empty_intersection, "consensus members share no subjects");
      const auto otr = outcomes_for(tr_ids), ote = outcomes_for(te_ids);
      std::vector<consensus::ModelHorizonInputs> inputs_h;
      for (const auto& m : cfg.consensus_members) {
        const auto& f = find_fitted(m);
        consensus::ModelHorizonInputs mh;
        mh.name = m;
        for (const auto& id : tr_ids) mh.train_survival.push_back(f.train_surv[hk].at(id));
        for (const auto& id : te_ids) mh.test_survival.push_back(f.test_surv[hk].at(id));
        inputs_h.push_back(std::move(mh));
        audit.add("youden_tau@" + format_number(h), m, tr_ids);
      }
      auto cr = consensus::consensus_report(h, te_ids, otr.time_months, otr.event, ote.time_months, ote.event, inputs_h);
      json taus = json::object();
      for (const auto& m : cr.models) taus[m.name] = io::num(m.tau);
      cons_thresholds.push_back({{"horizon_months", h}, {"tau", taus}});
      res.consensus.push_back(std::move(cr));
    }
    thresholds["consensus"] = cons_thresholds;

    stage = "report";
    report.audit_entries = audit.entries.size();
    report.leakage_violations = audit.violations(split.test);
    out.json_file("report.json", to_json(report));
    {
      json c = json::array();
      for (const auto& r : res.consensus) c.push_back(io::to_json(r));
      out.json_file("consensus.json", c);
    }
    out.json_file("audit.json", {{"test_ids", [&] {
                                    auto t = split.test;
                                    std::sort(t.begin(), t.end());
                                    return t;
                                  }()},
                                  {"entries", audit.to_json()},
                                  {"violations", report.leakage_violations}});
    write_manifest("ok", "");
  } catch (const std::exception& e) {
    try {
      write_manifest("failed", e.what());
    } catch (...) {
      // The output directory itself may be the problem.
    }
    throw StageError(stage, e);
  }
  return res;
}

}  // namespace ctsurv::pipeline

#endif  // CTSURV_PIPELINE_HPP
