// ctsurv: command-line front end. One subcommand per pipeline stage plus
// `run` for config-driven end-to-end runs. Exit code 0 on success, 1 on a
// stage error (message tagged with the stage), 2 on bad usage, 3 when RKN
// does not converge, 4 when the leakage audit reports violations.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctsurv/ctsurv.hpp"

namespace fs = std::filesystem;
using namespace ctsurv;
using json = nlohmann::json;

namespace {

struct TableOpts {
  std::string id_column = "id";
  std::string batch_column;
  std::vector<std::string> covariates;
  std::vector<std::string> ignore;

  void attach(CLI::App* app) {
    app->add_option("--id-column", id_column, "Subject id column")->capture_default_str();
    app->add_option("--batch-column", batch_column, "Batch label column (excluded from features)");
    app->add_option("--covariates", covariates, "Covariate columns (excluded from features)")->delimiter(',');
    app->add_option("--ignore", ignore, "Columns to skip")->delimiter(',');
  }

  TableSchema schema() const { return {id_column, batch_column, covariates, ignore}; }
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + p.string());
  out << s;
}

std::vector<std::string> read_ids(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::io, "cannot open " + p.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

// Loads a feature table restricted to subjects with outcomes, median-imputed
// on its own rows.
AlignedCohort load_aligned(const std::string& features, const std::string& outcomes, const TableSchema& schema) {
  auto table = load_feature_table(features, schema);
  table.validate();
  auto o = load_outcomes(outcomes);
  o.validate();
  auto a = align_cohort(table, o);
  if (a.features.missing_count() > 0) a.features = featsel::impute(a.features, featsel::ImputeStrategy::median);
  return a;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& spec_path, const std::string& prefix) {
  const json spec = io::read_json(spec_path);
  const std::string kind = spec.value("kind", std::string("cohort"));
  if (kind == "phantom") {
    json body = spec;
    body.erase("kind");
    const auto ph = synth::gen_cac_phantom(io::phantom_spec_from_json(body));
    save_volume(ph.volume, prefix + "_volume.json");
    save_mask(ph.artery_mask, prefix + "_mask.json");
    io::write_json({{"expected_score", ph.expected_score}}, prefix + "_expected.json");
    std::cout << json{{"expected_score", ph.expected_score}}.dump() << '\n';
    return 0;
  }
  if (kind != "cohort") throw Error(Errc::invalid_config, "spec kind must be cohort or phantom");
  const auto cs = io::cohort_spec_from_json(spec);
  const auto c = synth::gen_cohort(cs);
  save_feature_table(c.features, prefix + "_features.csv");
  save_outcomes(c.outcomes, prefix + "_outcomes.csv");
  json truth = {{"spec", io::to_json(cs)},
                {"beta", c.truth.beta},
                {"achieved_censoring", c.truth.achieved_censoring},
                {"linear_predictor", io::vec(c.truth.linear_predictor)}};
  io::write_json(truth, prefix + "_truth.json");
  std::cout << json{{"n_subjects", c.outcomes.size()}, {"achieved_censoring", c.truth.achieved_censoring}}.dump()
            << '\n';
  return 0;
}

int cmd_rkn(const std::string& input, const std::string& mask, const std::string& ref_path, const std::string& output,
            int max_iters) {
  const json rj = io::read_json(ref_path);
  rkn::RknReference ref;
  if (rj.contains("band_sds")) {
    ref = io::rkn_reference_from_json(rj);
  } else {
    const fs::path base = fs::path(ref_path).parent_path();
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
    ref = rkn::reference_from(load_volume(resolve(rj.at("volume").get<std::string>())),
                              load_mask(resolve(rj.at("mask").get<std::string>())));
  }
  const auto r = rkn::rkn_normalize(load_volume(input), ref, load_mask(mask), max_iters);
  save_volume(r.volume, output);
  std::cout << json{{"iterations", r.iterations}, {"converged", r.converged}, {"gains", r.gains}}.dump() << '\n';
  return r.converged ? 0 : 3;
}

int cmd_cac(const std::string& volume, const std::string& mask, const std::string& report) {
  const auto rep = cac::agatston(load_volume(volume), load_mask(mask));
  const json j = io::to_json(rep);
  if (!report.empty()) io::write_json(j, report);
  std::cout << json{{"total_score", rep.total_score}, {"lesions", rep.lesions.size()}}.dump() << '\n';
  return 0;
}

int cmd_combat(const std::string& features, const TableOpts& t, const std::string& reference, const std::string& mode,
               const std::string& model_out, const std::string& model_in, const std::string& output,
               const std::string& train_ids) {
  if (t.batch_column.empty()) throw Error(Errc::invalid_config, "--batch-column is required");
  auto table = load_feature_table(features, t.schema());
  table.validate();
  combat::CombatModel model;
  if (!model_in.empty()) {
    model = io::combat_from_json(io::read_json(model_in));
  } else {
    combat::HarmonizationConfig hc;
    hc.covariate_names = t.covariates;
    if (mode == "pooled") hc.mode = combat::FitMode::pooled;
    else if (mode == "train-only") hc.mode = combat::FitMode::train_only;
    else throw Error(Errc::invalid_config, "--mode must be pooled or train-only");
    FeatureTable fit_on = table;
    if (!train_ids.empty()) {
      if (hc.mode == combat::FitMode::pooled) throw Error(Errc::invalid_config, "--train-ids only applies to train-only mode");
      const auto ids = read_ids(train_ids);
      fit_on = table.select_rows(table.rows_of(ids));
    }
    hc.reference_batch = reference == "auto" ? combat::largest_batch(fit_on.batch) : reference;
    model = combat::combat_fit(fit_on, hc);
  }
  if (!model_out.empty()) io::write_json(io::to_json(model), model_out);
  if (!output.empty()) save_feature_table(combat::combat_apply(model, table), output, t.batch_column);
  std::cout << json{{"reference_batch", model.reference_batch}, {"batches", model.batches}}.dump() << '\n';
  return 0;
}

int cmd_select(const std::string& features, const std::string& outcomes, const TableOpts& t, double threshold,
               int folds, std::uint64_t seed, const std::string& report) {
  const auto a = load_aligned(features, outcomes, t.schema());
  const auto rep = featsel::stability_select(a.features.values, a.features.feature_names, a.outcomes.event, threshold,
                                             folds, seed);
  const json j = io::to_json(rep);
  if (!report.empty()) io::write_json(j, report);
  std::cout << json{{"retained", rep.retained}}.dump() << '\n';
  return 0;
}

std::vector<std::string> chosen_features(const FeatureTable& t, const std::vector<std::string>& list,
                                         const std::string& selection) {
  if (!list.empty()) return list;
  if (!selection.empty()) return io::read_json(selection).at("retained").get<std::vector<std::string>>();
  return t.feature_names;
}

int cmd_fit(const std::string& features, const std::string& outcomes, const TableOpts& t, double penalty, double l1,
            const std::vector<std::string>& list, const std::string& selection, const std::string& model_out) {
  const auto a = load_aligned(features, outcomes, t.schema());
  const auto names = chosen_features(a.features, list, selection);
  const Eigen::MatrixXd x = a.features.select_features(names).values;
  cox::FitOptions opt;
  opt.penalty = penalty;
  opt.l1_ratio = l1;
  auto m = cox::cox_fit(x, a.outcomes.time_months, a.outcomes.event, opt, names);
  const Eigen::VectorXd r = cox::partial_hazards(m, x);
  m.train_median_risk = cox::median(std::vector<double>(r.begin(), r.end()));
  if (!model_out.empty()) io::write_json(io::to_json(io::plain_predictor(m)), model_out);
  std::cout << json{{"converged", m.diagnostics.converged},
                    {"iterations", m.diagnostics.iterations},
                    {"objective", m.diagnostics.objective},
                    {"beta", io::vec(m.beta)}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_tune(const std::string& features, const std::string& outcomes, const TableOpts& t, int trials, int folds,
             std::uint64_t seed, const std::vector<int>& pca_k, double pmin, double pmax,
             const std::vector<std::string>& list, const std::string& selection, const std::string& report,
             const std::string& model_out) {
  const auto a = load_aligned(features, outcomes, t.schema());
  const auto names = chosen_features(a.features, list, selection);
  const Eigen::MatrixXd x = a.features.select_features(names).values;
  tune::SearchSpace space;
  space.penalty_min = pmin;
  space.penalty_max = pmax;
  space.pca_k = pca_k;
  const auto res = tune::tune(x, a.outcomes.time_months, a.outcomes.event, space, trials, folds, seed);
  if (!report.empty()) io::write_json(io::to_json(res), report);
  if (!model_out.empty()) {
    io::Predictor p;
    p.input_features = names;
    Eigen::MatrixXd d = x;
    std::vector<std::string> dn = names;
    if (res.best.pca_k) {
      p.pca = featsel::pca_fit(x, *res.best.pca_k);
      d = featsel::pca_transform(*p.pca, x);
      dn.clear();
      for (int k = 0; k < *res.best.pca_k; ++k) dn.push_back("pc" + std::to_string(k + 1));
    }
    cox::FitOptions opt;
    opt.penalty = res.best.penalty;
    opt.l1_ratio = res.best.l1_ratio;
    p.cox = cox::cox_fit(d, a.outcomes.time_months, a.outcomes.event, opt, dn);
    const Eigen::VectorXd r = cox::partial_hazards(p.cox, d);
    p.cox.train_median_risk = cox::median(std::vector<double>(r.begin(), r.end()));
    io::write_json(io::to_json(p), model_out);
  }
  std::cout << json{{"best", io::to_json(res.best)}, {"best_score", res.best_score}, {"best_trial", res.best_trial}}.dump()
            << '\n';
  return 0;
}

int cmd_evaluate(const std::vector<std::string>& models, const std::vector<std::string>& features,
                 const std::string& outcomes, const std::string& train_outcomes, const TableOpts& t,
                 const std::vector<double>& horizons, int n_boot, std::uint64_t seed, const std::string& report,
                 const std::string& km_csv) {
  if (features.size() != 1 && features.size() != models.size()) {
    throw Error(Errc::length_mismatch, "give one --features table, or one per model");
  }
  auto test_o = load_outcomes(outcomes);
  test_o.validate();
  OutcomeTable train_o = test_o;
  std::vector<std::string> notes;
  if (!train_outcomes.empty()) {
    train_o = load_outcomes(train_outcomes);
    train_o.validate();
  } else {
    notes.push_back("no --train-outcomes: censoring weights estimated on the evaluation outcomes");
  }
  json out_models = json::array();
  std::ostringstream km;
  km << "time,survival,at_risk,group\n";
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto pred = io::load_predictor(models[k]);
    if (!pred.cox.train_median_risk) throw Error(Errc::domain, models[k] + ": model has no stored training median risk");
    auto table = load_feature_table(features.size() == 1 ? features[0] : features[k], t.schema());
    table.validate();
    auto a = align_cohort(table, test_o);
    if (a.features.missing_count() > 0) throw Error(Errc::missing_values, "evaluation features have missing values");
    const Eigen::VectorXd risk = pred.risk(a.features);
    auto ev = pipeline::evaluate_risks(train_o, {}, a.outcomes, as_span(risk), horizons, n_boot,
                                       derive_seed(seed, k), *pred.cox.train_median_risk);
    ev.report.name = fs::path(models[k]).stem().string();
    ev.report.features = pred.cox.feature_names;
    ev.report.n_train = 0;
    ev.report.notes.insert(ev.report.notes.end(), notes.begin(), notes.end());
    std::istringstream lines(ev.km_csv);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) km << line.substr(0, line.rfind(',') + 1) << csv::quote(ev.report.name + ":" + line.substr(line.rfind(',') + 1)) << '\n';
    out_models.push_back(pipeline::to_json(ev.report));
  }
  const json j = {{"horizons", horizons}, {"seed", seed}, {"models", out_models}};
  if (!report.empty()) io::write_json(j, report);
  else std::cout << j.dump(2) << '\n';
  if (!km_csv.empty()) write_text(km_csv, km.str());
  return 0;
}

int cmd_explain(const std::string& model, const std::string& features, const TableOpts& t, std::size_t top_k,
                const std::string& phi_out, const std::string& summary_out) {
  const auto pred = io::load_predictor(model);
  auto table = load_feature_table(features, t.schema());
  table.validate();
  if (table.missing_count() > 0) throw Error(Errc::missing_values, "features have missing values");
  const auto attr = explain::shap_linear(pred.cox, pred.design(table));
  std::ostringstream phi, sum;
  phi << "id";
  for (const auto& n : attr.feature_names) phi << ',' << csv::quote(n);
  phi << '\n';
  for (Eigen::Index i = 0; i < attr.phi.rows(); ++i) {
    phi << csv::quote(table.subject_ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index c = 0; c < attr.phi.cols(); ++c) phi << ',' << format_number(attr.phi(i, c));
    phi << '\n';
  }
  sum << "feature,mean_abs_phi,direction\n";
  for (const auto& f : explain::shap_summary(attr, top_k)) {
    sum << csv::quote(f.feature) << ',' << format_number(f.mean_abs_phi) << ',' << f.direction << '\n';
  }
  if (!phi_out.empty()) write_text(phi_out, phi.str());
  if (!summary_out.empty()) write_text(summary_out, sum.str());
  else std::cout << sum.str();
  return 0;
}

int cmd_consensus(const std::vector<std::string>& models, const std::vector<std::string>& features,
                  const std::string& outcomes, const std::string& split_path, const TableOpts& t,
                  const std::vector<double>& horizons, const std::string& report) {
  if (models.size() < 2) throw Error(Errc::domain, "consensus needs at least two models");
  if (features.size() != models.size()) throw Error(Errc::length_mismatch, "give one --features-per-model table per model");
  auto o = load_outcomes(outcomes);
  o.validate();
  const auto split = pipeline::read_split(split_path);
  std::vector<io::Predictor> preds;
  std::vector<FeatureTable> tables;
  for (std::size_t k = 0; k < models.size(); ++k) {
    preds.push_back(io::load_predictor(models[k]));
    tables.push_back(load_feature_table(features[k], t.schema()));
    tables.back().validate();
  }
  auto shared = [&](const std::vector<std::string>& ids) {
    std::vector<std::string> outv;
    for (const auto& id : ids) {
      bool all = true;
      for (const auto& tb : tables) {
        all = all && std::find(tb.subject_ids.begin(), tb.subject_ids.end(), id) != tb.subject_ids.end();
      }
      if (all) outv.push_back(id);
    }
    return outv;
  };
  const auto tr_ids = shared(split.train), te_ids = shared(split.test);
  const auto otr = o.select(o.rows_of(tr_ids)), ote = o.select(o.rows_of(te_ids));
  json reps = json::array();
  for (double h : horizons) {
    std::vector<consensus::ModelHorizonInputs> in;
    for (std::size_t k = 0; k < models.size(); ++k) {
      consensus::ModelHorizonInputs mh;
      mh.name = fs::path(models[k]).stem().string();
      const auto dtr = preds[k].design(tables[k].select_rows(tables[k].rows_of(tr_ids)));
      const auto dte = preds[k].design(tables[k].select_rows(tables[k].rows_of(te_ids)));
      const Eigen::VectorXd s_tr = cox::survival_at(preds[k].cox, dtr, h), s_te = cox::survival_at(preds[k].cox, dte, h);
      mh.train_survival.assign(s_tr.begin(), s_tr.end());
      mh.test_survival.assign(s_te.begin(), s_te.end());
      in.push_back(std::move(mh));
    }
    reps.push_back(io::to_json(
        consensus::consensus_report(h, te_ids, otr.time_months, otr.event, ote.time_months, ote.event, in)));
  }
  if (!report.empty()) io::write_json(reps, report);
  else std::cout << reps.dump(2) << '\n';
  return 0;
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
  auto cfg = pipeline::load_config(config);
  if (seed) {
    cfg.seed = *seed;
    cfg.raw["seed"] = *seed;
  }
  if (!out.empty()) cfg.output_dir = out;
  const auto res = pipeline::run_pipeline(cfg);
  std::cout << json{{"output_dir", cfg.output_dir.string()},
                    {"models", res.report.models.size()},
                    {"leakage_violations", res.report.leakage_violations}}
                   .dump()
            << '\n';
  return res.report.leakage_violations.empty() ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CT survival modelling toolkit"};
  app.require_subcommand(1);

  std::string features, outcomes, report, output, model_out, model_in, spec, prefix, mask, ref_stats, volume,
      train_outcomes, train_ids, selection, km_csv, phi_out, summary_out, split_path, config, out_dir;
  std::string reference = "auto", mode = "pooled";
  std::vector<std::string> models, features_list, feature_list;
  std::vector<double> horizons;
  std::vector<int> pca_k;
  double corr = 0.90, penalty = 0.1, l1 = 0.5, pmin = 1e-4, pmax = 10.0;
  int folds = 5, trials = 100, n_boot = 1000, max_iters = 10;
  std::size_t top_k = 20;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> run_seed;
  TableOpts table;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort or CAC phantom");
  synth->add_option("--spec", spec, "JSON spec (kind: cohort | phantom)")->required();
  synth->add_option("--out-prefix", prefix, "Output path prefix")->required();

  auto* rkn = app.add_subcommand("rkn", "Reconstruction kernel normalization of a volume");
  rkn->add_option("--input", volume, "Input volume header")->required();
  rkn->add_option("--mask", mask, "Mask volume header")->required();
  rkn->add_option("--reference-stats", ref_stats, "JSON {band_sds:[5]} or {volume, mask}")->required();
  rkn->add_option("--output", output, "Output volume header")->required();
  rkn->add_option("--max-iters", max_iters, "Iteration cap")->capture_default_str();

  auto* cac = app.add_subcommand("cac", "Agatston score of a volume");
  cac->add_option("--volume", volume, "Volume header")->required();
  cac->add_option("--mask", mask, "Artery mask header")->required();
  cac->add_option("--report", report, "Report JSON");

  auto* cb = app.add_subcommand("combat", "Reference-batch ComBat harmonization");
  cb->add_option("--features", features, "Feature CSV")->required();
  table.attach(cb);
  cb->add_option("--reference-batch", reference, "Reference batch label or auto")->capture_default_str();
  cb->add_option("--mode", mode, "pooled | train-only")->capture_default_str();
  cb->add_option("--train-ids", train_ids, "Ids to fit on in train-only mode (one per line)");
  cb->add_option("--model-out", model_out, "Write fitted model JSON");
  cb->add_option("--model-in", model_in, "Apply a saved model instead of fitting");
  cb->add_option("--output", output, "Harmonized feature CSV");

  auto* sel = app.add_subcommand("select", "Stability feature selection");
  sel->add_option("--features", features, "Feature CSV")->required();
  sel->add_option("--outcomes", outcomes, "Outcome CSV")->required();
  table.attach(sel);
  sel->add_option("--corr-threshold", corr, "Correlation threshold (0.90 ROI-only, 0.70 combined)")->capture_default_str();
  sel->add_option("--folds", folds, "Folds")->capture_default_str();
  sel->add_option("--seed", seed, "Seed")->capture_default_str();
  sel->add_option("--report", report, "SelectionReport JSON");

  auto* fit = app.add_subcommand("fit", "Fit an elastic-net Cox model");
  fit->add_option("--features", features, "Feature CSV")->required();
  fit->add_option("--outcomes", outcomes, "Outcome CSV")->required();
  table.attach(fit);
  fit->add_option("--penalty", penalty, "Penalty")->capture_default_str();
  fit->add_option("--l1-ratio", l1, "L1 ratio")->capture_default_str();
  fit->add_option("--feature-list", feature_list, "Features to use")->delimiter(',');
  fit->add_option("--selection", selection, "Use the retained set of a SelectionReport");
  fit->add_option("--model-out", model_out, "Model JSON");

  auto* tn = app.add_subcommand("tune", "Random-search hyperparameter tuning");
  tn->add_option("--features", features, "Feature CSV")->required();
  tn->add_option("--outcomes", outcomes, "Outcome CSV")->required();
  table.attach(tn);
  tn->add_option("--trials", trials, "Trials")->capture_default_str();
  tn->add_option("--folds", folds, "Folds")->capture_default_str();
  tn->add_option("--seed", seed, "Seed")->capture_default_str();
  tn->add_option("--pca-k", pca_k, "PCA sizes to search")->delimiter(',');
  tn->add_option("--penalty-min", pmin, "Smallest penalty")->capture_default_str();
  tn->add_option("--penalty-max", pmax, "Largest penalty")->capture_default_str();
  tn->add_option("--feature-list", feature_list, "Features to use")->delimiter(',');
  tn->add_option("--selection", selection, "Use the retained set of a SelectionReport");
  tn->add_option("--report", report, "TuneResult JSON");
  tn->add_option("--model-out", model_out, "Refit the best setting and write the model");

  auto* ev = app.add_subcommand("evaluate", "Test-set metrics for fitted models");
  ev->add_option("--model,--models", models, "Model JSON (repeatable)")->required()->delimiter(',');
  ev->add_option("--features", features_list, "Feature CSV, one or one per model")->required()->delimiter(',');
  ev->add_option("--outcomes", outcomes, "Evaluation outcome CSV")->required();
  ev->add_option("--train-outcomes", train_outcomes, "Training outcomes (censoring weights)");
  table.attach(ev);
  ev->add_option("--horizon-months", horizons, "t-AUC horizons (default 60)")->delimiter(',');
  ev->add_option("--bootstrap", n_boot, "Bootstrap replicates")->capture_default_str();
  ev->add_option("--seed", seed, "Seed")->capture_default_str();
  ev->add_option("--report", report, "Metrics JSON");
  ev->add_option("--km-csv", km_csv, "Kaplan-Meier CSV");

  auto* ex = app.add_subcommand("explain", "Exact linear SHAP attributions");
  ex->add_option("--model", model_in, "Model JSON")->required();
  ex->add_option("--features", features, "Feature CSV")->required();
  table.attach(ex);
  ex->add_option("--top-k", top_k, "Summary rows")->capture_default_str();
  ex->add_option("--phi-out", phi_out, "Per-subject phi CSV");
  ex->add_option("--summary-out", summary_out, "Summary CSV");

  auto* cs = app.add_subcommand("consensus", "Strict multi-model consensus at horizons");
  cs->add_option("--models", models, "Model JSONs")->required()->delimiter(',');
  cs->add_option("--features-per-model", features_list, "Feature CSV per model")->required()->delimiter(',');
  cs->add_option("--outcomes", outcomes, "Outcome CSV covering train and test")->required();
  cs->add_option("--split", split_path, "CSV id,split (train|test)")->required();
  table.attach(cs);
  cs->add_option("--horizon-months", horizons, "Horizons (default 24,60)")->delimiter(',');
  cs->add_option("--report", report, "ConsensusReport JSON");

  auto* run = app.add_subcommand("run", "Config-driven end-to-end run");
  run->add_option("--config", config, "Pipeline config JSON")->required();
  run->add_option("--seed", run_seed, "Override the config seed");
  run->add_option("--out", out_dir, "Override the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "synth") return cmd_synth(spec, prefix);
    if (name == "rkn") return cmd_rkn(volume, mask, ref_stats, output, max_iters);
    if (name == "cac") return cmd_cac(volume, mask, report);
    if (name == "combat") return cmd_combat(features, table, reference, mode, model_out, model_in, output, train_ids);
    if (name == "select") return cmd_select(features, outcomes, table, corr, folds, seed, report);
    if (name == "fit") return cmd_fit(features, outcomes, table, penalty, l1, feature_list, selection, model_out);
    if (name == "tune") {
      return cmd_tune(features, outcomes, table, trials, folds, seed, pca_k, pmin, pmax, feature_list, selection, report,
                      model_out);
    }
    if (name == "evaluate") {
      if (horizons.empty()) horizons = {60.0};
      return cmd_evaluate(models, features_list, outcomes, train_outcomes, table, horizons, n_boot, seed, report, km_csv);
    }
    if (name == "explain") return cmd_explain(model_in, features, table, top_k, phi_out, summary_out);
    if (name == "consensus") {
      if (horizons.empty()) horizons = {24.0, 60.0};
      return cmd_consensus(models, features_list, outcomes, split_path, table, horizons, report);
    }
    if (name == "run") return cmd_run(config, run_seed, out_dir);
  } catch (const pipeline::StageError& e) {
    std::cerr << "ctsurv run: error " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ctsurv " << name << ": error [" << (name == "run" ? "config" : name) << "] " << e.what() << '\n';
    return 1;
  }
  return 2;
}
