#ifndef CTSURV_RKN_HPP
#define CTSURV_RKN_HPP

// Reconstruction-kernel normalization.
//
// A volume is split into difference-of-Gaussian bands
//   F^i = L(s_{i-1}) - L(s_i),  i = 1..5,   F^6 = L(s_5)
// over the scale ladder s = (0, 1, 2, 4, 8, 16), with L(0) the input. The
// bands telescope back to the input exactly. Normalization rescales bands
// 1..5 so their SDs inside a region mask match a reference, iterating until
// every gain r_i / e_i lies in [0.95, 1.05].
//
// Sigmas are in voxel units of the (already resampled) grid; references and
// inputs must therefore share a grid spacing.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "ctsurv/dataio.hpp"
#include "ctsurv/error.hpp"

namespace ctsurv::rkn {

inline constexpr std::array<double, 6> kScaleLadder{0.0, 1.0, 2.0, 4.0, 8.0, 16.0};
inline constexpr int kBands = 6;
inline constexpr int kScaledBands = 5;
inline constexpr double kGainLow = 0.95;
inline constexpr double kGainHigh = 1.05;

/// Normalized 1-D Gaussian, radius ceil(4 sigma). Index `radius` is the centre tap.
inline std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (auto& w : k) w /= sum;
  return k;
}

namespace detail {

// One separable pass along `axis` with edge replication. Each output voxel
// sums its taps in a fixed order.
inline void convolve_axis(const std::vector<double>& in, std::vector<double>& out, const Dims& dims,
                          int axis, const std::vector<double>& kernel) {
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const std::size_t stride = axis == 0 ? 1 : axis == 1 ? dims[0] : dims[0] * dims[1];
  const auto len = static_cast<std::ptrdiff_t>(dims[static_cast<std::size_t>(axis)]);
  std::vector<double> line(static_cast<std::size_t>(len));
  const std::size_t total = dims[0] * dims[1] * dims[2];
  for (std::size_t base = 0; base < total; ++base) {
    // Visit each line once, from its first voxel.
    const std::size_t coord = (base / stride) % static_cast<std::size_t>(len);
    if (coord != 0) continue;
    for (std::ptrdiff_t i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = in[base + static_cast<std::size_t>(i) * stride];
    for (std::ptrdiff_t i = 0; i < len; ++i) {
      double acc = 0.0;
      for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
        const std::ptrdiff_t j = std::clamp<std::ptrdiff_t>(i + t, 0, len - 1);
        acc += kernel[static_cast<std::size_t>(t + radius)] * line[static_cast<std::size_t>(j)];
      }
      out[base + static_cast<std::size_t>(i) * stride] = acc;
    }
  }
}

}  // namespace detail

/// Separable 3-D Gaussian smoothing; sigma in voxels, edges replicated.
inline Volume gaussian_smooth(const Volume& volume, double sigma) {
  if (sigma < 0.0 || !std::isfinite(sigma)) throw Error(Errc::domain, "sigma must be nonnegative");
  if (sigma == 0.0) return volume;
  const auto kernel = gaussian_kernel(sigma);
  Volume out = volume;
  std::vector<double> tmp(volume.size());
  detail::convolve_axis(volume.voxels, tmp, volume.dims, 0, kernel);
  detail::convolve_axis(tmp, out.voxels, volume.dims, 1, kernel);
  detail::convolve_axis(out.voxels, tmp, volume.dims, 2, kernel);
  out.voxels.swap(tmp);
  return out;
}

struct BandDecomposition {
  std::array<Volume, kBands> bands;  // bands[0] is F^1 (finest)
  std::array<double, kBands> sigmas = kScaleLadder;

  /// F^6 + sum_i gains[i] * F^(i+1).
  Volume reconstruct(const std::array<double, kScaledBands>& gains) const {
    Volume out = bands[kBands - 1];
    for (std::size_t v = 0; v < out.size(); ++v) {
      double acc = out.voxels[v];
      for (int i = 0; i < kScaledBands; ++i) acc += gains[static_cast<std::size_t>(i)] * bands[static_cast<std::size_t>(i)].voxels[v];
      out.voxels[v] = acc;
    }
    return out;
  }

  Volume sum() const { return reconstruct({1.0, 1.0, 1.0, 1.0, 1.0}); }
};

inline BandDecomposition decompose(const Volume& volume) {
  BandDecomposition d;
  Volume previous = volume;
  for (int i = 1; i < kBands; ++i) {
    Volume smoothed = gaussian_smooth(volume, kScaleLadder[static_cast<std::size_t>(i)]);
    Volume band = previous;
    for (std::size_t v = 0; v < band.size(); ++v) band.voxels[v] -= smoothed.voxels[v];
    d.bands[static_cast<std::size_t>(i - 1)] = std::move(band);
    previous = std::move(smoothed);
  }
  d.bands[kBands - 1] = std::move(previous);
  return d;
}

/// Per-band SDs r_1..r_5 of a reference region.
struct RknReference {
  std::array<double, kScaledBands> band_sds{};
};

/// Population SD of bands 1..5 over the mask voxels (two-pass).
inline RknReference band_sds(const BandDecomposition& d, const Mask& mask) {
  require_grid_compatible(d.bands[0], mask);
  const std::size_t n = mask.count();
  if (n == 0) throw Error(Errc::empty_mask, "band statistics need a nonempty mask");
  RknReference r;
  for (int i = 0; i < kScaledBands; ++i) {
    const auto& band = d.bands[static_cast<std::size_t>(i)].voxels;
    double sum = 0.0;
    for (std::size_t v = 0; v < band.size(); ++v) {
      if (mask.voxels[v]) sum += band[v];
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t v = 0; v < band.size(); ++v) {
      if (mask.voxels[v]) ss += (band[v] - mean) * (band[v] - mean);
    }
    r.band_sds[static_cast<std::size_t>(i)] = std::sqrt(ss / static_cast<double>(n));
  }
  return r;
}

inline RknReference reference_from(const Volume& volume, const Mask& mask) {
  return band_sds(decompose(volume), mask);
}

struct RknResult {
  Volume volume;
  int iterations = 0;
  std::array<double, kScaledBands> gains{};  // lambda of the returned volume
  bool converged = false;
};

namespace detail {

inline std::array<double, kScaledBands> gains_for(const RknReference& current,
                                                  const RknReference& reference) {
  std::array<double, kScaledBands> g{};
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double e = current.band_sds[i];
    g[i] = e == 0.0 ? 1.0 : reference.band_sds[i] / e;
  }
  return g;
}

// Accept when every gain is inside the window and every band SD is inside
// the same window relative to the reference. The second condition is the
// first one read from the output side; both hold at the fixed point.
inline bool accepted(const std::array<double, kScaledBands>& gains) {
  return std::all_of(gains.begin(), gains.end(), [](double g) {
    return g >= kGainLow && g <= kGainHigh && 1.0 / g >= kGainLow && 1.0 / g <= kGainHigh;
  });
}

inline double worst_gain(const std::array<double, kScaledBands>& gains) {
  double w = 0.0;
  for (double g : gains) w = std::max(w, std::abs(std::log(g)));
  return w;
}

}  // namespace detail

/// Iterative band-energy matching. Band statistics come from the mask;
/// the gains are applied to the whole volume. Iteration k measures the
/// current volume's bands; when the gains are accepted the current volume
/// is returned, otherwise it is replaced by F^6 + sum lambda_i F^i. If
/// max_iters measurements never accept, the best measured iterate is
/// returned with converged = false.
inline RknResult rkn_normalize(const Volume& volume, const RknReference& reference,
                               const Mask& mask, int max_iters = 10) {
  if (max_iters < 1) throw Error(Errc::domain, "max_iters must be at least 1");
  for (double r : reference.band_sds) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw Error(Errc::domain, "reference SDs must be nonnegative");
  }
  require_grid_compatible(volume, mask);

  RknResult best;
  double best_score = HUGE_VAL;
  Volume current = volume;
  for (int iter = 1; iter <= max_iters; ++iter) {
    const auto bands = decompose(current);
    const auto gains = detail::gains_for(band_sds(bands, mask), reference);
    if (detail::accepted(gains)) return {std::move(current), iter, gains, true};
    const double score = detail::worst_gain(gains);
    if (score < best_score) {
      best_score = score;
      best = {current, iter, gains, false};
    }
    current = bands.reconstruct(gains);
  }
  // The final reconstruction has not been measured yet.
  const auto gains = detail::gains_for(band_sds(decompose(current), mask), reference);
  if (detail::accepted(gains)) return {std::move(current), max_iters, gains, true};
  if (detail::worst_gain(gains) < best_score) best = {std::move(current), max_iters, gains, false};
  best.iterations = max_iters;
  return best;
}

}  // namespace ctsurv::rkn

#endif  // CTSURV_RKN_HPP
