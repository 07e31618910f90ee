#ifndef CTSURV_CAC_HPP
#define CTSURV_CAC_HPP

// Agatston coronary-artery-calcium scoring.
//
// Per axial slice: voxels >= 130 HU inside the artery mask are labelled into
// 8-connected components; components below 1 mm^2 are dropped; each remaining
// lesion scores area_mm2 * weight(peak HU). No slice-thickness rescaling and
// no merging across slices.

#include <cstdint>
#include <vector>

#include "ctsurv/dataio.hpp"
#include "ctsurv/error.hpp"

namespace ctsurv::cac {

inline constexpr double kCalciumThresholdHu = 130.0;
inline constexpr double kMinLesionAreaMm2 = 1.0;

struct LesionComponent {
  std::size_t slice_index = 0;
  std::size_t voxel_count = 0;
  double area_mm2 = 0.0;
  double peak_hu = 0.0;
  int weight = 0;
  double score = 0.0;
};

struct CacReport {
  std::vector<LesionComponent> lesions;
  double total_score = 0.0;
};

inline Mask candidate_mask(const Volume& volume, const Mask& artery_mask) {
  require_grid_compatible(volume, artery_mask);
  Mask out(volume.dims, volume.spacing_mm);
  for (std::size_t i = 0; i < volume.size(); ++i) {
    out.voxels[i] = artery_mask.voxels[i] && volume.voxels[i] >= kCalciumThresholdHu ? 1 : 0;
  }
  return out;
}

/// Labels of an nx * ny slice (x fastest). 0 is background; components are
/// numbered 1.. in raster order of their first voxel.
struct SliceLabels {
  std::vector<int> labels;
  int count = 0;
};

inline SliceLabels label_components_2d(std::span<const std::uint8_t> slice, std::size_t nx,
                                       std::size_t ny) {
  if (slice.size() != nx * ny) throw Error(Errc::size_mismatch, "slice size does not match nx*ny");
  SliceLabels out{std::vector<int>(slice.size(), 0), 0};
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < slice.size(); ++start) {
    if (!slice[start] || out.labels[start]) continue;
    const int label = ++out.count;
    out.labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const auto px = static_cast<std::ptrdiff_t>(p % nx);
      const auto py = static_cast<std::ptrdiff_t>(p / nx);
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          const auto qx = px + dx;
          const auto qy = py + dy;
          if (qx < 0 || qy < 0 || qx >= static_cast<std::ptrdiff_t>(nx) ||
              qy >= static_cast<std::ptrdiff_t>(ny)) {
            continue;
          }
          const auto q = static_cast<std::size_t>(qx) + nx * static_cast<std::size_t>(qy);
          if (slice[q] && !out.labels[q]) {
            out.labels[q] = label;
            stack.push_back(q);
          }
        }
      }
    }
  }
  return out;
}

/// 1 for [130, 200), 2 for [200, 300), 3 for [300, 400), 4 from 400 up.
inline int density_weight(double peak_hu) {
  if (!(peak_hu >= kCalciumThresholdHu)) {
    throw Error(Errc::domain, "peak " + format_number(peak_hu) + " HU is below 130");
  }
  if (peak_hu >= 400.0) return 4;
  if (peak_hu >= 300.0) return 3;
  if (peak_hu >= 200.0) return 2;
  return 1;
}

inline CacReport score_slice(const Volume& volume, const Mask& candidates, std::size_t z) {
  const std::size_t nx = volume.dims[0], ny = volume.dims[1];
  const std::size_t offset = nx * ny * z;
  const std::span<const std::uint8_t> slice(candidates.voxels.data() + offset, nx * ny);
  const auto labelled = label_components_2d(slice, nx, ny);
  const double pixel_area = volume.spacing_mm[0] * volume.spacing_mm[1];

  std::vector<LesionComponent> comps(static_cast<std::size_t>(labelled.count));
  for (std::size_t p = 0; p < slice.size(); ++p) {
    const int l = labelled.labels[p];
    if (!l) continue;
    auto& c = comps[static_cast<std::size_t>(l - 1)];
    const double hu = volume.voxels[offset + p];
    if (c.voxel_count == 0 || hu > c.peak_hu) c.peak_hu = hu;
    ++c.voxel_count;
  }
  CacReport report;
  for (auto& c : comps) {
    c.slice_index = z;
    c.area_mm2 = static_cast<double>(c.voxel_count) * pixel_area;
    if (c.area_mm2 < kMinLesionAreaMm2) continue;
    c.weight = density_weight(c.peak_hu);
    c.score = c.area_mm2 * c.weight;
    report.total_score += c.score;
    report.lesions.push_back(c);
  }
  return report;
}

inline CacReport agatston(const Volume& volume, const Mask& artery_mask) {
  const auto candidates = candidate_mask(volume, artery_mask);
  CacReport report;
  for (std::size_t z = 0; z < volume.dims[2]; ++z) {
    auto slice = score_slice(volume, candidates, z);
    report.total_score += slice.total_score;
    report.lesions.insert(report.lesions.end(), slice.lesions.begin(), slice.lesions.end());
  }
  return report;
}

}  // namespace ctsurv::cac

#endif  // CTSURV_CAC_HPP
