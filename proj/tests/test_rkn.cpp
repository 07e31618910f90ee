#include <gtest/gtest.h>

#include "ctsurv/rkn.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ctsurv;

namespace {

Volume noise_volume(Dims dims, std::uint64_t seed, double scale = 100.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Volume v(dims, {0.7, 0.7, 1.0});
  for (auto& x : v.voxels) x = n(rng);
  return v;
}

Mask central_mask(Dims dims, std::size_t margin) {
  Mask m(dims, {0.7, 0.7, 1.0});
  for (std::size_t z = margin; z + margin < dims[2]; ++z)
    for (std::size_t y = margin; y + margin < dims[1]; ++y)
      for (std::size_t x = margin; x + margin < dims[0]; ++x) m.at(x, y, z) = 1;
  return m;
}

}  // namespace

TEST(GaussianSmooth, ZeroSigmaIsIdentity) {
  const auto v = noise_volume({6, 5, 4}, 1);
  EXPECT_EQ(rkn::gaussian_smooth(v, 0.0).voxels, v.voxels);
}

TEST(GaussianSmooth, ConstantPreserved) {
  Volume v({7, 7, 7}, {1, 1, 1}, 42.5);
  for (double s : {0.5, 1.0, 4.0, 16.0}) {
    for (double x : rkn::gaussian_smooth(v, s).voxels) EXPECT_NEAR(x, 42.5, 1e-10);
  }
}

TEST(GaussianSmooth, ImpulseCenterIsKernelCenterCubed) {
  Volume v({9, 9, 9}, {1, 1, 1});
  v.at(4, 4, 4) = 1.0;
  const auto k = oracle::gaussian_kernel(1.0);
  const double c = k[k.size() / 2];
  const auto out = rkn::gaussian_smooth(v, 1.0);
  EXPECT_NEAR(out.at(4, 4, 4), c * c * c, 1e-15);
  const auto dense = oracle::dense_smooth(v, 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out.voxels[i], dense.voxels[i], 1e-14);
}

TEST(GaussianSmooth, MatchesDenseConvolutionWithEdgeReplication) {
  const auto v = noise_volume({7, 6, 5}, 2);
  for (double s : {0.7, 1.0, 2.0}) {
    const auto a = rkn::gaussian_smooth(v, s);
    const auto b = oracle::dense_smooth(v, s);
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(a.voxels[i], b.voxels[i], 1e-9);
  }
}

TEST(Decompose, ConstantVolumeHasOnlyResidualBand) {
  Volume v({8, 8, 8}, {1, 1, 1}, -300.0);
  const auto d = rkn::decompose(v);
  for (int i = 0; i < rkn::kScaledBands; ++i)
    for (double x : d.bands[static_cast<std::size_t>(i)].voxels) EXPECT_NEAR(x, 0.0, 1e-10);
  for (double x : d.bands[5].voxels) EXPECT_NEAR(x, -300.0, 1e-10);
  const auto r = rkn::band_sds(d, Mask(v.dims, v.spacing_mm, 1));
  for (double s : r.band_sds) EXPECT_NEAR(s, 0.0, 1e-10);
}

TEST(Decompose, BandsTelescopeToInput) {
  const auto v = noise_volume({16, 16, 16}, 3, 500.0);
  const auto d = rkn::decompose(v);
  const auto s = d.sum();
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(s.voxels[i], v.voxels[i], 1e-4);
  // band definition: F1 = I - L1
  const auto l1 = rkn::gaussian_smooth(v, 1.0);
  for (std::size_t i = 0; i < v.size(); i += 97) EXPECT_NEAR(d.bands[0].voxels[i], v.voxels[i] - l1.voxels[i], 1e-9);
}

TEST(Decompose, PreSmoothedInputHasLittleFineEnergy) {
  const auto coarse = rkn::gaussian_smooth(noise_volume({20, 20, 20}, 4), 16.0);
  const auto d = rkn::decompose(coarse);
  auto norm = [](const Volume& v) {
    double s = 0.0;
    for (double x : v.voxels) s += x * x;
    return std::sqrt(s);
  };
  EXPECT_LT(norm(d.bands[0]) / norm(d.bands[5]), 0.2);
}

TEST(BandSds, TwoPointAndEmptyMask) {
  rkn::BandDecomposition d;
  for (auto& b : d.bands) b = Volume({2, 1, 1}, {1, 1, 1});
  d.bands[0].voxels = {-1.0, 1.0};
  const auto r = rkn::band_sds(d, Mask({2, 1, 1}, {1, 1, 1}, 1));
  EXPECT_DOUBLE_EQ(r.band_sds[0], 1.0);
  EXPECT_EQ(code_of([&] { rkn::band_sds(d, Mask({2, 1, 1}, {1, 1, 1}, 0)); }), Errc::empty_mask);
}

TEST(BandSds, MatchesTwoPassOracle) {
  const auto v = noise_volume({10, 10, 10}, 5);
  const auto m = central_mask(v.dims, 2);
  const auto d = rkn::decompose(v);
  const auto r = rkn::band_sds(d, m);
  for (int i = 0; i < rkn::kScaledBands; ++i) {
    const double o = oracle::masked_sd(d.bands[static_cast<std::size_t>(i)], m);
    EXPECT_NEAR(r.band_sds[static_cast<std::size_t>(i)], o, 1e-10 * o);
  }
}

TEST(RknNormalize, SelfReferenceIsFixedPoint) {
  const auto v = noise_volume({16, 16, 16}, 6);
  const auto m = central_mask(v.dims, 3);
  const auto res = rkn::rkn_normalize(v, rkn::reference_from(v, m), m, 10);
  EXPECT_TRUE(res.converged);
  EXPECT_EQ(res.iterations, 1);
  for (double g : res.gains) EXPECT_EQ(g, 1.0);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(res.volume.voxels[i], v.voxels[i], 1e-4);
}

TEST(RknNormalize, ConstantVolumeUnchanged) {
  Volume v({8, 8, 8}, {1, 1, 1}, 40.0);
  rkn::RknReference ref;
  ref.band_sds = {10, 20, 30, 40, 50};
  const auto res = rkn::rkn_normalize(v, ref, Mask(v.dims, v.spacing_mm, 1), 5);
  for (double g : res.gains) EXPECT_EQ(g, 1.0);
  EXPECT_EQ(res.volume.voxels, v.voxels);
}

TEST(RknNormalize, DoubledFineBandIsRestored) {
  const auto ref_img = noise_volume({20, 20, 20}, 7);
  const auto m = central_mask(ref_img.dims, 3);
  const auto ref = rkn::reference_from(ref_img, m);
  const auto d = rkn::decompose(ref_img);
  Volume input = ref_img;
  for (std::size_t i = 0; i < input.size(); ++i) input.voxels[i] += d.bands[0].voxels[i];

  const auto res = rkn::rkn_normalize(input, ref, m, 10);
  ASSERT_TRUE(res.converged);
  const auto out = rkn::band_sds(rkn::decompose(res.volume), m);
  for (int i = 0; i < rkn::kScaledBands; ++i) {
    const auto k = static_cast<std::size_t>(i);
    EXPECT_GE(out.band_sds[k], 0.95 * ref.band_sds[k]);
    EXPECT_LE(out.band_sds[k], 1.05 * ref.band_sds[k]);
  }
  // idempotent once converged
  const auto again = rkn::rkn_normalize(res.volume, ref, m, 10);
  EXPECT_EQ(again.iterations, 1);
  EXPECT_TRUE(again.converged);
}

TEST(RknNormalize, RejectsBadArguments) {
  const auto v = noise_volume({4, 4, 4}, 8);
  const Mask m(v.dims, v.spacing_mm, 1);
  EXPECT_EQ(code_of([&] { rkn::rkn_normalize(v, rkn::reference_from(v, m), m, 0); }), Errc::domain);
  const Mask other({4, 4, 3}, v.spacing_mm, 1);
  EXPECT_EQ(code_of([&] { rkn::rkn_normalize(v, rkn::reference_from(v, m), other, 3); }), Errc::grid_mismatch);
}
