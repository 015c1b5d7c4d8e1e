#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cgfusion/postprocess.hpp"
#include "cgfusion/tensor.hpp"

namespace cgf {

struct PixelCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Undefined rates (0/0) are empty and serialised as "NA".
struct PixelMetrics {
  PixelCounts counts;
  std::optional<double> precision, recall, f1, iou;
};

PixelCounts pixel_counts(const Tensor& pred_mask, const Tensor& gt_mask);
PixelMetrics metrics_from_counts(const PixelCounts& counts);
PixelMetrics pixel_metrics(const Tensor& pred_mask, const Tensor& gt_mask);

struct RegionVerdict {
  int region_index = 0;
  double iou = 0.0;
  bool true_positive = false;
};

struct FdrOptions {
  double delta = 0.0;
  // With delta == 0 a region counts only when its IoU is strictly positive;
  // `literal` switches to the unmodified IoU >= delta test.
  bool literal = false;
};

struct FdrResult {
  std::int64_t tp = 0, fp = 0;
  std::optional<double> fdr;
  std::vector<RegionVerdict> verdicts;
};

// Each predicted region is compared with the union of the ground-truth
// components (8-connected) it touches.
FdrResult fdr(const SegmentationResult& regions, const Tensor& gt_mask, const FdrOptions& opts = {});

struct ImageReport {
  std::string name;
  PixelMetrics pixels;
  FdrResult targets;
};

ImageReport evaluate_image(std::string name, const SegmentationResult& pred, const Tensor& gt_mask,
                           const FdrOptions& opts = {});

struct EvalReport {
  std::vector<ImageReport> images;
  PixelMetrics pixels;  // micro-averaged over pooled counts
  std::int64_t tp_regions = 0, fp_regions = 0;
  std::optional<double> fdr;
  FdrOptions fdr_options;
};

EvalReport aggregate(std::vector<ImageReport> images, const FdrOptions& opts = {});

inline constexpr int kReportSchemaVersion = 1;

// Per-image rows:
// schema_version,image,tp_px,fp_px,fn_px,tn_px,p_precision,p_recall,p_f1,iou,tp_regions,fp_regions,fdr
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
// Aggregate metrics plus caller-supplied config echo (flat key/value pairs).
void write_report_json(const std::filesystem::path& path, const EvalReport& report,
                       const std::vector<std::pair<std::string, std::string>>& config_echo);

std::string format_rate(const std::optional<double>& v);

}  // namespace cgf
