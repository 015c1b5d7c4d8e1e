#include "cgfusion/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include "json.hpp"

#include "cgfusion/errors.hpp"

namespace cgf {
namespace {

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json rate_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json("NA");
}

}  // namespace

std::string format_rate(const std::optional<double>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

PixelCounts pixel_counts(const Tensor& pred_mask, const Tensor& gt_mask) {
  if (pred_mask.shape() != gt_mask.shape()) {
    throw ConfigError("mask resolution mismatch: " + shape_string(pred_mask.shape()) + " vs " +
                      shape_string(gt_mask.shape()));
  }
  PixelCounts c;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    const bool p = pred_mask[i] > 0.5;
    const bool g = gt_mask[i] > 0.5;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

PixelMetrics metrics_from_counts(const PixelCounts& c) {
  PixelMetrics m;
  m.counts = c;
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  if (m.precision && m.recall) {
    const double s = *m.precision + *m.recall;
    m.f1 = s > 0.0 ? 2.0 * *m.precision * *m.recall / s : 0.0;
  }
  return m;
}

PixelMetrics pixel_metrics(const Tensor& pred_mask, const Tensor& gt_mask) {
  return metrics_from_counts(pixel_counts(pred_mask, gt_mask));
}

FdrResult fdr(const SegmentationResult& pred, const Tensor& gt_mask, const FdrOptions& opts) {
  if (!(opts.delta >= 0.0 && opts.delta < 1.0)) throw ConfigError("FDR delta must lie in [0, 1)");
  if (gt_mask.rank() != 2 || gt_mask.height() != pred.height || gt_mask.width() != pred.width) {
    throw ConfigError("FDR: ground truth resolution differs from segmentation");
  }
  const SegmentationResult gt = extract_regions(gt_mask, 0);
  std::vector<int> gt_label(gt_mask.size(), -1);
  for (std::size_t c = 0; c < gt.regions.size(); ++c) {
    for (int p : gt.regions[c].pixels) gt_label[static_cast<std::size_t>(p)] = static_cast<int>(c);
  }

  FdrResult r;
  std::vector<char> touched(gt.regions.size(), 0);
  for (std::size_t i = 0; i < pred.regions.size(); ++i) {
    const Region& reg = pred.regions[i];
    std::fill(touched.begin(), touched.end(), 0);
    std::int64_t inter = 0;
    for (int p : reg.pixels) {
      const int lbl = gt_label[static_cast<std::size_t>(p)];
      if (lbl >= 0) {
        ++inter;
        touched[static_cast<std::size_t>(lbl)] = 1;
      }
    }
    std::int64_t gt_area = 0;
    for (std::size_t c = 0; c < gt.regions.size(); ++c) {
      if (touched[c]) gt_area += gt.regions[c].area();
    }
    const std::int64_t uni = reg.area() + gt_area - inter;
    const double iou = uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
    const bool hit = (opts.delta == 0.0 && !opts.literal) ? iou > 0.0 : iou >= opts.delta;
    r.verdicts.push_back({static_cast<int>(i), iou, hit});
    (hit ? r.tp : r.fp) += 1;
  }
  r.fdr = ratio(r.fp, r.tp + r.fp);
  return r;
}

ImageReport evaluate_image(std::string name, const SegmentationResult& pred, const Tensor& gt_mask,
                           const FdrOptions& opts) {
  return ImageReport{std::move(name), pixel_metrics(pred.mask, gt_mask), fdr(pred, gt_mask, opts)};
}

EvalReport aggregate(std::vector<ImageReport> images, const FdrOptions& opts) {
  EvalReport rep;
  rep.fdr_options = opts;
  PixelCounts total;
  for (const auto& im : images) {
    total.tp += im.pixels.counts.tp;
    total.fp += im.pixels.counts.fp;
    total.fn += im.pixels.counts.fn;
    total.tn += im.pixels.counts.tn;
    rep.tp_regions += im.targets.tp;
    rep.fp_regions += im.targets.fp;
  }
  rep.pixels = metrics_from_counts(total);
  rep.fdr = ratio(rep.fp_regions, rep.tp_regions + rep.fp_regions);
  rep.images = std::move(images);
  return rep;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "schema_version,image,tp_px,fp_px,fn_px,tn_px,p_precision,p_recall,p_f1,iou,tp_regions,fp_regions,fdr\n";
  for (const auto& im : report.images) {
    const auto& c = im.pixels.counts;
    os << kReportSchemaVersion << ',' << im.name << ',' << c.tp << ',' << c.fp << ',' << c.fn << ','
       << c.tn << ',' << format_rate(im.pixels.precision) << ',' << format_rate(im.pixels.recall)
       << ',' << format_rate(im.pixels.f1) << ',' << format_rate(im.pixels.iou) << ','
       << im.targets.tp << ',' << im.targets.fp << ',' << format_rate(im.targets.fdr) << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report,
                       const std::vector<std::pair<std::string, std::string>>& config_echo) {
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["averaging"] = "micro";
  j["region_iou"] = "region vs. union of touched ground-truth components";
  j["delta"] = report.fdr_options.delta;
  j["delta_literal"] = report.fdr_options.literal;
  j["images"] = report.images.size();
  const auto& c = report.pixels.counts;
  j["tp_px"] = c.tp;
  j["fp_px"] = c.fp;
  j["fn_px"] = c.fn;
  j["tn_px"] = c.tn;
  j["p_precision"] = rate_json(report.pixels.precision);
  j["p_recall"] = rate_json(report.pixels.recall);
  j["p_f1"] = rate_json(report.pixels.f1);
  j["iou"] = rate_json(report.pixels.iou);
  j["tp_regions"] = report.tp_regions;
  j["fp_regions"] = report.fp_regions;
  j["fdr"] = rate_json(report.fdr);
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_echo) cfg[k] = v;
  j["config"] = cfg;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace cgf
