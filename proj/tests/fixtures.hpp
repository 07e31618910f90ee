#ifndef CTSURV_TESTS_FIXTURES_HPP
#define CTSURV_TESTS_FIXTURES_HPP

// On-disk synthetic cohorts and pipeline configs shared by the unit tests and
// the acceptance runner.

#include <filesystem>
#include <string>

#include "ctsurv/io.hpp"
#include "ctsurv/pipeline.hpp"
#include "ctsurv/synth.hpp"

namespace fixture {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Writes <stem>_features.csv (with a batch column) and outcomes.csv.
inline ctsurv::synth::Cohort write_cohort(const fs::path& dir, const ctsurv::synth::CohortSpec& spec,
                                          const std::string& stem = "roi") {
  fs::create_directories(dir);
  auto c = ctsurv::synth::gen_cohort(spec);
  ctsurv::save_feature_table(c.features, dir / (stem + "_features.csv"));
  ctsurv::save_outcomes(c.outcomes, dir / "outcomes.csv");
  return c;
}

inline json model_entry(const std::string& name, const std::string& features, const std::string& harmonization = "none") {
  return {{"name", name}, {"features", features}, {"batch_column", "batch"}, {"harmonization", harmonization}};
}

/// Small, fast settings: few trials and replicates.
inline json base_config(const fs::path& out, std::uint64_t seed = 5) {
  return {{"seed", seed},
          {"output_dir", out.string()},
          {"outcomes", "outcomes.csv"},
          {"split", {{"test_fraction", 0.3}}},
          {"models", json::array()},
          {"tuning", {{"trials", 6}, {"folds", 3}, {"penalty_min", 1e-3}, {"penalty_max", 0.5}}},
          {"selection", {{"folds", 3}}},
          {"evaluation", {{"horizons", {24.0, 60.0}}, {"bootstrap", 50}}}};
}

inline ctsurv::pipeline::RunResult run(const json& cfg, const fs::path& base_dir) {
  return ctsurv::pipeline::run_pipeline(ctsurv::pipeline::parse_config(cfg, base_dir));
}

}  // namespace fixture

#endif  // CTSURV_TESTS_FIXTURES_HPP
