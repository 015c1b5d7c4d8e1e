#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cgfusion/errors.hpp"
#include "cgfusion/evaluation.hpp"
#include "json.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using cgf::Tensor;

namespace {

Tensor rect_mask(int h, int w, int y0, int x0, int y1, int x1) {
  Tensor m({h, w});
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m.at(y, x) = 1.0;
  return m;
}

Tensor random_mask(std::mt19937_64& rng, int h, int w, int one_in) {
  Tensor m({h, w});
  for (auto& v : m.storage()) v = rng() % one_in == 0 ? 1.0 : 0.0;
  return m;
}

}  // namespace

TEST(PixelMetrics, IdenticalMasksArePerfect) {
  const Tensor m = rect_mask(8, 8, 2, 2, 5, 5);
  const auto r = cgf::pixel_metrics(m, m);
  EXPECT_EQ(*r.precision, 1.0);
  EXPECT_EQ(*r.recall, 1.0);
  EXPECT_EQ(*r.f1, 1.0);
  EXPECT_EQ(*r.iou, 1.0);
}

TEST(PixelMetrics, DisjointMasksScoreZero) {
  const auto r = cgf::pixel_metrics(rect_mask(8, 8, 0, 0, 1, 1), rect_mask(8, 8, 5, 5, 7, 7));
  EXPECT_EQ(*r.precision, 0.0);
  EXPECT_EQ(*r.recall, 0.0);
  EXPECT_EQ(*r.f1, 0.0);
  EXPECT_EQ(*r.iou, 0.0);
}

TEST(PixelMetrics, HalfOverlap) {
  // Prediction covers columns 0..3, truth columns 2..5: 2 of 4 columns shared.
  const auto r = cgf::pixel_metrics(rect_mask(4, 8, 0, 0, 3, 3), rect_mask(4, 8, 0, 2, 3, 5));
  EXPECT_EQ(*r.precision, 0.5);
  EXPECT_EQ(*r.recall, 0.5);
  EXPECT_EQ(*r.f1, 0.5);
  EXPECT_NEAR(*r.iou, 1.0 / 3.0, 1e-15);
}

TEST(PixelMetrics, EmptyPredictionAndTruthAreUndefined) {
  const auto r = cgf::pixel_metrics(Tensor({4, 4}), Tensor({4, 4}));
  EXPECT_FALSE(r.precision.has_value());
  EXPECT_FALSE(r.recall.has_value());
  EXPECT_FALSE(r.f1.has_value());
  EXPECT_FALSE(r.iou.has_value());
  EXPECT_EQ(cgf::format_rate(r.iou), "NA");
  const auto only_gt = cgf::pixel_metrics(Tensor({4, 4}), rect_mask(4, 4, 0, 0, 0, 0));
  EXPECT_FALSE(only_gt.precision.has_value());
  EXPECT_EQ(*only_gt.recall, 0.0);
}

TEST(PixelMetrics, ResolutionMismatchIsConfigError) {
  EXPECT_THROW(cgf::pixel_metrics(Tensor({4, 4}), Tensor({4, 5})), cgf::ConfigError);
}

TEST(PixelMetrics, HarmonicAndIouIdentitiesOnRandomMasks) {
  std::mt19937_64 rng(51);
  for (int t = 0; t < 200; ++t) {
    const auto r = cgf::pixel_metrics(random_mask(rng, 16, 16, 3), random_mask(rng, 16, 16, 4));
    if (!r.precision || !r.recall || *r.precision + *r.recall == 0.0) continue;
    const double p = *r.precision, rc = *r.recall;
    EXPECT_NEAR(*r.f1, 2.0 * p * rc / (p + rc), 1e-12);
    EXPECT_LE(*r.iou, std::min(p, rc) + 1e-15);
    // IoU and F1 are monotone transforms of each other: F1 = 2 IoU / (1 + IoU).
    EXPECT_NEAR(*r.f1, 2.0 * *r.iou / (1.0 + *r.iou), 1e-12);
  }
}

TEST(Fdr, ThreeHitsOneFalseAlarm) {
  Tensor gt({10, 20}), pred({10, 20});
  for (int i = 0; i < 3; ++i) {
    gt.at(2, 2 + 4 * i) = gt.at(2, 3 + 4 * i) = 1.0;
    pred.at(2, 2 + 4 * i) = 1.0;
  }
  pred.at(8, 18) = 1.0;
  const auto r = cgf::fdr(cgf::extract_regions(pred, 0), gt);
  EXPECT_EQ(r.tp, 3);
  EXPECT_EQ(r.fp, 1);
  EXPECT_EQ(*r.fdr, 0.25);
}

TEST(Fdr, FiveRegionFixtureWithDelta) {
  // Three regions exactly on truth, one half on truth (IoU 0.5) and one off it.
  Tensor gt({10, 30}), pred({10, 30});
  for (int i = 0; i < 4; ++i) {
    for (int x = 0; x < 2; ++x) gt.at(1, 6 * i + x) = 1.0;
  }
  for (int i = 0; i < 3; ++i) {
    for (int x = 0; x < 2; ++x) pred.at(1, 6 * i + x) = 1.0;
  }
  pred.at(1, 18) = 1.0;
  pred.at(8, 28) = 1.0;
  const auto seg = cgf::extract_regions(pred, 0);
  ASSERT_EQ(seg.regions.size(), 5u);
  EXPECT_EQ(*cgf::fdr(seg, gt, {0.0, false}).fdr, 0.2);
  EXPECT_EQ(*cgf::fdr(seg, gt, {0.6, false}).fdr, 0.4);
  EXPECT_EQ(*cgf::fdr(seg, gt, {0.5, false}).fdr, 0.2);
  // Literal IoU >= 0 accepts every region.
  EXPECT_EQ(*cgf::fdr(seg, gt, {0.0, true}).fdr, 0.0);
}

TEST(Fdr, RegionSpanningTwoTruthComponentsUsesTheirUnion) {
  Tensor gt({3, 9}), pred({3, 9});
  gt.at(1, 1) = gt.at(1, 7) = 1.0;
  for (int x = 1; x <= 7; ++x) pred.at(1, x) = 1.0;
  const auto r = cgf::fdr(cgf::extract_regions(pred, 0), gt);
  ASSERT_EQ(r.verdicts.size(), 1u);
  EXPECT_NEAR(r.verdicts[0].iou, 2.0 / 7.0, 1e-15);
}

TEST(Fdr, NoRegionsIsUndefined) {
  const auto r = cgf::fdr(cgf::extract_regions(Tensor({4, 4}), 0), rect_mask(4, 4, 0, 0, 1, 1));
  EXPECT_FALSE(r.fdr.has_value());
  EXPECT_THROW(cgf::fdr(cgf::extract_regions(Tensor({4, 4}), 0), Tensor({4, 4}), {1.0, false}), cgf::ConfigError);
}

TEST(Aggregate, PoolsCountsAcrossImages) {
  std::mt19937_64 rng(52);
  std::vector<cgf::ImageReport> images;
  cgf::PixelCounts total;
  std::int64_t tp = 0, fp = 0;
  for (int i = 0; i < 6; ++i) {
    const Tensor gt = random_mask(rng, 12, 12, 5);
    const auto seg = cgf::extract_regions(random_mask(rng, 12, 12, 6), 0);
    images.push_back(cgf::evaluate_image("im" + std::to_string(i), seg, gt));
    total.tp += images.back().pixels.counts.tp;
    total.fp += images.back().pixels.counts.fp;
    total.fn += images.back().pixels.counts.fn;
    tp += images.back().targets.tp;
    fp += images.back().targets.fp;
  }
  auto shuffled = images;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto a = cgf::aggregate(images);
  const auto b = cgf::aggregate(shuffled);
  EXPECT_EQ(*a.pixels.iou, static_cast<double>(total.tp) / static_cast<double>(total.tp + total.fp + total.fn));
  EXPECT_EQ(*a.fdr, static_cast<double>(fp) / static_cast<double>(tp + fp));
  EXPECT_EQ(*a.pixels.iou, *b.pixels.iou);
  EXPECT_EQ(*a.fdr, *b.fdr);
}

TEST(Reports, CsvAndJsonSchemas) {
  const fs::path dir = fs::temp_directory_path() / "cgfusion_tests";
  fs::create_directories(dir);
  const Tensor gt = rect_mask(6, 6, 1, 1, 2, 2);
  const auto rep = cgf::aggregate({cgf::evaluate_image("a", cgf::extract_regions(gt, 0), gt),
                                   cgf::evaluate_image("b", cgf::extract_regions(Tensor({6, 6}), 0), Tensor({6, 6}))});
  cgf::write_report_csv(dir / "r.csv", rep);
  std::ifstream is(dir / "r.csv");
  std::string header, row_a, row_b;
  std::getline(is, header);
  std::getline(is, row_a);
  std::getline(is, row_b);
  EXPECT_EQ(header, "schema_version,image,tp_px,fp_px,fn_px,tn_px,p_precision,p_recall,p_f1,iou,tp_regions,fp_regions,fdr");
  EXPECT_EQ(row_a, "1,a,4,0,0,32,1.000000,1.000000,1.000000,1.000000,1,0,0.000000");
  EXPECT_EQ(row_b, "1,b,0,0,0,36,NA,NA,NA,NA,0,0,NA");

  cgf::write_report_json(dir / "r.json", rep, {{"method", "cgfusion"}});
  const auto j = nlohmann::json::parse(std::ifstream(dir / "r.json"));
  EXPECT_TRUE(j.contains("schema_version"));
  EXPECT_EQ(j.dump().find("cgfusion") != std::string::npos, true);
}
