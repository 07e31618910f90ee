#ifndef CTSURV_SYNTH_HPP
#define CTSURV_SYNTH_HPP

// Synthetic cohorts with known ground truth, and Agatston phantoms.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ctsurv/cac.hpp"
#include "ctsurv/dataio.hpp"
#include "ctsurv/error.hpp"
#include "ctsurv/random.hpp"

namespace ctsurv::synth {

struct BatchEffect {
  std::string label;
  double fraction = 1.0;
  double shift = 0.0;
  double factor = 1.0;
};

struct CohortSpec {
  std::size_t n_subjects = 200;
  std::vector<double> beta{1.0, -0.5};
  std::size_t n_noise_features = 0;
  double weibull_shape = 1.0;
  double weibull_scale = 60.0;  // months
  double censoring_rate = 0.3;
  std::vector<BatchEffect> batches{{"A", 1.0, 0.0, 1.0}};
  std::uint64_t seed = 1;
};

struct GroundTruth {
  std::vector<double> beta;
  Eigen::MatrixXd clean_features;  // before batch effects
  std::vector<double> linear_predictor;
  std::vector<double> event_time;  // latent T
  std::vector<double> censor_time;  // latent C (inf when uncensored by design)
  std::vector<BatchEffect> batches;
  double achieved_censoring = 0.0;
};

struct Cohort {
  FeatureTable features;
  OutcomeTable outcomes;
  GroundTruth truth;
};

inline void validate(const CohortSpec& s) {
  if (s.n_subjects == 0) throw Error(Errc::domain, "cohort needs subjects");
  if (!(s.weibull_shape > 0.0) || !(s.weibull_scale > 0.0)) throw Error(Errc::domain, "Weibull shape and scale must be positive");
  if (!(s.censoring_rate >= 0.0 && s.censoring_rate < 1.0)) throw Error(Errc::unachievable_censoring, "censoring rate must be in [0, 1)");
  if (s.batches.empty()) throw Error(Errc::domain, "cohort needs at least one batch");
  double total = 0.0;
  for (const auto& b : s.batches) {
    if (b.fraction < 0.0) throw Error(Errc::domain, "batch fractions must be nonnegative");
    total += b.fraction;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(Errc::domain, "batch fractions must sum to 1");
}

/// x ~ N(0, 1); T ~ Weibull with hazard scaled by exp(beta . x); C ~ U(0, c_max)
/// with c_max tuned so the censored fraction matches the target; batch
/// shift/scale applied to every feature after outcomes are drawn.
inline Cohort gen_cohort(const CohortSpec& spec) {
  validate(spec);
  const std::size_t n = spec.n_subjects;
  const std::size_t p_signal = spec.beta.size();
  const std::size_t p = p_signal + spec.n_noise_features;
  Rng rng(derive_seed(spec.seed, 0xc0407));

  Cohort c;
  c.truth.beta = spec.beta;
  c.truth.batches = spec.batches;
  c.truth.clean_features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) c.truth.clean_features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
  }
  std::vector<double> u_event(n), u_censor(n);
  for (std::size_t i = 0; i < n; ++i) {
    double eta = 0.0;
    for (std::size_t j = 0; j < p_signal; ++j) eta += spec.beta[j] * c.truth.clean_features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    c.truth.linear_predictor.push_back(eta);
    u_event[i] = rng.uniform_open0();
    u_censor[i] = rng.uniform_open0();
    // S(t | x) = exp(-(t / scale)^shape * exp(eta))
    c.truth.event_time.push_back(spec.weibull_scale *
                                 std::pow(-std::log(u_event[i]) / std::exp(eta), 1.0 / spec.weibull_shape));
  }

  auto censored_fraction = [&](double cmax) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) k += cmax * u_censor[i] < c.truth.event_time[i];
    return static_cast<double>(k) / static_cast<double>(n);
  };
  double cmax = HUGE_VAL;
  if (spec.censoring_rate > 0.0) {
    double lo = 0.0, hi = *std::max_element(c.truth.event_time.begin(), c.truth.event_time.end()) * 1e6;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (censored_fraction(mid) > spec.censoring_rate ? lo : hi) = mid;
    }
    cmax = hi;
    if (std::abs(censored_fraction(cmax) - spec.censoring_rate) > 0.05) {
      throw Error(Errc::unachievable_censoring, "cannot reach the censoring target within 5%");
    }
  }

  OutcomeTable& o = c.outcomes;
  std::size_t n_censored = 0;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "S%05zu", i + 1);
    const double ct = std::isinf(cmax) ? HUGE_VAL : cmax * u_censor[i];
    c.truth.censor_time.push_back(ct);
    const bool event = c.truth.event_time[i] <= ct;
    o.subject_ids.push_back(id);
    o.time_months.push_back(event ? c.truth.event_time[i] : ct);
    o.event.push_back(event ? 1 : 0);
    n_censored += !event;
  }
  c.truth.achieved_censoring = static_cast<double>(n_censored) / static_cast<double>(n);

  // Batch assignment: exact counts per fraction (remainder to the last batch), shuffled.
  std::vector<std::size_t> assignment;
  for (std::size_t b = 0; b < spec.batches.size(); ++b) {
    const std::size_t count = b + 1 == spec.batches.size()
                                  ? n - assignment.size()
                                  : std::min(n - assignment.size(),
                                             static_cast<std::size_t>(std::llround(spec.batches[b].fraction * static_cast<double>(n))));
    assignment.insert(assignment.end(), count, b);
  }
  rng.shuffle(assignment);

  FeatureTable& f = c.features;
  f.subject_ids = o.subject_ids;
  for (std::size_t j = 0; j < p; ++j) {
    f.feature_names.push_back(j < p_signal ? "signal" + std::to_string(j + 1)
                                           : "noise" + std::to_string(j - p_signal + 1));
  }
  f.values = c.truth.clean_features;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& b = spec.batches[assignment[i]];
    f.batch.push_back(b.label);
    f.values.row(static_cast<Eigen::Index>(i)) = (f.values.row(static_cast<Eigen::Index>(i)).array() * b.factor + b.shift).matrix();
  }
  f.covariates.resize(0, 0);
  return c;
}

// ---------------------------------------------------------------------------
// Agatston phantoms

struct Lesion {
  std::size_t x = 0, y = 0, z = 0;  // top-left corner on slice z
  std::size_t width = 1, height = 1;
  double hu = 300.0;
};

struct PhantomSpec {
  Dims dims{32, 32, 4};
  Spacing spacing_mm{1.0, 1.0, 3.0};
  double background_hu = -50.0;
  std::vector<Lesion> lesions;
};

struct Phantom {
  Volume volume;
  Mask artery_mask;  // whole grid
  double expected_score = 0.0;
};

/// Rectangular lesions; lesions on the same slice may not overlap or touch
/// (8-neighbourhood), so each one is exactly one connected component.
inline Phantom gen_cac_phantom(const PhantomSpec& spec) {
  for (const auto& l : spec.lesions) {
    if (l.width == 0 || l.height == 0 || l.x + l.width > spec.dims[0] || l.y + l.height > spec.dims[1] ||
        l.z >= spec.dims[2]) {
      throw Error(Errc::out_of_range, "lesion outside the volume");
    }
  }
  for (std::size_t a = 0; a < spec.lesions.size(); ++a) {
    for (std::size_t b = a + 1; b < spec.lesions.size(); ++b) {
      const auto& p = spec.lesions[a];
      const auto& q = spec.lesions[b];
      if (p.z != q.z) continue;
      const bool apart_x = p.x + p.width + 1 <= q.x || q.x + q.width + 1 <= p.x;
      const bool apart_y = p.y + p.height + 1 <= q.y || q.y + q.height + 1 <= p.y;
      if (!apart_x && !apart_y) throw Error(Errc::overlap, "lesions overlap or touch");
    }
  }
  Phantom ph;
  ph.volume = Volume(spec.dims, spec.spacing_mm, spec.background_hu, DType::f32);
  ph.artery_mask = Mask(spec.dims, spec.spacing_mm, 1);
  for (const auto& l : spec.lesions) {
    for (std::size_t y = l.y; y < l.y + l.height; ++y) {
      for (std::size_t x = l.x; x < l.x + l.width; ++x) ph.volume.at(x, y, l.z) = l.hu;
    }
  }
  // Expected score by direct rule application, accumulated per slice in the
  // raster order of each lesion's first voxel.
  std::vector<Lesion> sorted = spec.lesions;
  std::sort(sorted.begin(), sorted.end(), [](const Lesion& a, const Lesion& b) {
    if (a.z != b.z) return a.z < b.z;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  const double pixel_area = spec.spacing_mm[0] * spec.spacing_mm[1];
  for (std::size_t i = 0; i < sorted.size();) {
    double slice_total = 0.0;
    std::size_t j = i;
    for (; j < sorted.size() && sorted[j].z == sorted[i].z; ++j) {
      const auto& l = sorted[j];
      if (!(l.hu >= cac::kCalciumThresholdHu)) continue;
      const double area = static_cast<double>(l.width * l.height) * pixel_area;
      if (area < cac::kMinLesionAreaMm2) continue;
      const int w = l.hu >= 400.0 ? 4 : l.hu >= 300.0 ? 3 : l.hu >= 200.0 ? 2 : 1;
      slice_total += area * w;
    }
    ph.expected_score += slice_total;
    i = j;
  }
  return ph;
}

}  // namespace ctsurv::synth

#endif  // CTSURV_SYNTH_HPP
