#include <gtest/gtest.h>

#include <random>

#include "cgfusion/cam.hpp"
#include "cgfusion/errors.hpp"
#include "oracles.hpp"

using cgf::Tensor;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST(CgCam, MatchesOracleOnRandomRecords) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 100; ++t) {
    const auto rec = oracle::random_record(rng);
    const cgf::Heatmap got = cgf::cg_cam_stage(rec, 2);
    const Tensor want = oracle::cg_cam(rec.activations, rec.gradients, 2);
    ASSERT_EQ(got.values.shape(), want.shape());
    EXPECT_LE(max_abs_diff(got.values, want), 1e-9);
  }
}

TEST(CgCam, WeightsAreExactlyTileConstant) {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 20; ++t) {
    const auto rec = oracle::random_record(rng);
    const Tensor w = cgf::cg_cam_weights(rec.gradients, 2);
    for (int c = 0; c < w.dim(0); ++c)
      for (int y = 0; y < w.dim(1); ++y)
        for (int x = 0; x < w.dim(2); ++x) EXPECT_EQ(w.at(c, y, x), w.at(c, y / 2 * 2, x / 2 * 2));
  }
}

TEST(CgCam, TileMeanExample) {
  // One channel, one 2x2 tile: weights become the mean gradient 0.25.
  const cgf::CaptureRecord rec{"s", Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4}),
                               Tensor({1, 2, 2}, std::vector<double>{1, 0, 0, 0})};
  const Tensor w = cgf::cg_cam_weights(rec.gradients, 2);
  for (double v : w.data()) EXPECT_EQ(v, 0.25);
  EXPECT_EQ(cgf::cg_cam_stage(rec).values.storage(), (std::vector<double>{0.25, 0.5, 0.75, 1.0}));
  // LayerCAM on the same record only sees the single nonzero position.
  EXPECT_EQ(cgf::layer_cam(rec).values.storage(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(CgCam, FullExtentKernelEqualsGradCam) {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 10; ++t) {
    cgf::CaptureRecord rec{"s", oracle::random_tensor({3, 6, 6}, rng, 0, 1), oracle::random_tensor({3, 6, 6}, rng)};
    EXPECT_LE(max_abs_diff(cgf::cg_cam_stage(rec, 6).values, cgf::grad_cam(rec).values), 1e-12);
  }
}

TEST(CgCam, UnitKernelWithNonNegativeGradientsEqualsLayerCam) {
  std::mt19937_64 rng(24);
  cgf::CaptureRecord rec{"s", oracle::random_tensor({4, 4, 6}, rng, 0, 1), oracle::random_tensor({4, 4, 6}, rng, 0, 1)};
  EXPECT_LE(max_abs_diff(cgf::cg_cam_stage(rec, 1).values, cgf::layer_cam(rec).values), 1e-12);
}

TEST(CgCam, NonDivisibleExtentIsConfigError) {
  const cgf::CaptureRecord rec{"s", Tensor({1, 3, 4}), Tensor({1, 3, 4})};
  EXPECT_THROW(cgf::cg_cam_stage(rec, 2), cgf::ConfigError);
}

TEST(GradCam, MatchesOracleOnRandomRecords) {
  std::mt19937_64 rng(25);
  for (int t = 0; t < 100; ++t) {
    const auto rec = oracle::random_record(rng);
    EXPECT_LE(max_abs_diff(cgf::grad_cam(rec).values, oracle::grad_cam(rec.activations, rec.gradients)), 1e-9);
  }
}

TEST(LayerCam, MatchesOracleOnRandomRecords) {
  std::mt19937_64 rng(26);
  for (int t = 0; t < 100; ++t) {
    const auto rec = oracle::random_record(rng);
    EXPECT_LE(max_abs_diff(cgf::layer_cam(rec).values, oracle::layer_cam(rec.activations, rec.gradients)), 1e-9);
  }
}

TEST(Cams, NonNegativeAndZeroForZeroActivations) {
  std::mt19937_64 rng(27);
  for (int t = 0; t < 20; ++t) {
    auto rec = oracle::random_record(rng);
    for (const auto& m : {cgf::grad_cam(rec), cgf::layer_cam(rec), cgf::cg_cam_stage(rec)}) {
      for (double v : m.values.data()) EXPECT_GE(v, 0.0);
    }
    rec.activations.fill(0.0);
    for (const auto& m : {cgf::grad_cam(rec), cgf::layer_cam(rec), cgf::cg_cam_stage(rec)}) {
      for (double v : m.values.data()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(Cams, NegativeGradientsGiveEmptyLayerCam) {
  std::mt19937_64 rng(28);
  const cgf::CaptureRecord rec{"s", oracle::random_tensor({2, 4, 4}, rng, 0, 1),
                               oracle::random_tensor({2, 4, 4}, rng, -1, -0.1)};
  const Tensor lc = cgf::layer_cam(rec).values, gc = cgf::grad_cam(rec).values;
  for (double v : lc.data()) EXPECT_EQ(v, 0.0);
  for (double v : gc.data()) EXPECT_EQ(v, 0.0);
}

TEST(Cams, ShapeMismatchIsConfigError) {
  const cgf::CaptureRecord rec{"s", Tensor({2, 4, 4}), Tensor({2, 4, 2})};
  EXPECT_THROW(cgf::grad_cam(rec), cgf::ConfigError);
  EXPECT_THROW(cgf::layer_cam(rec), cgf::ConfigError);
  EXPECT_THROW(cgf::cg_cam_stage(rec), cgf::ConfigError);
}

TEST(Cams, HeatmapKeepsSourceLayerAndResolution) {
  std::mt19937_64 rng(29);
  cgf::CaptureRecord rec{"stage3", oracle::random_tensor({2, 8, 4}, rng), oracle::random_tensor({2, 8, 4}, rng)};
  const cgf::Heatmap m = cgf::cg_cam_stage(rec);
  EXPECT_EQ(m.source_layer, "stage3");
  EXPECT_EQ(m.height(), 8);
  EXPECT_EQ(m.width(), 4);
}
