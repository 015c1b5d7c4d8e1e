// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cgfusion/cam.hpp"
#include "cgfusion/classifier.hpp"
#include "cgfusion/evaluation.hpp"
#include "cgfusion/fusion.hpp"
#include "cgfusion/pipeline.hpp"
#include "cgfusion/postprocess.hpp"
#include "cgfusion/synth.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using cgf::Tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  double worst_param = 0.0, worst_act = 0.0;
  int checked = 0;
  const int networks = 6;
  for (int s = 1; s <= networks; ++s) {
    const auto r = gradcheck::check_random_network(static_cast<std::uint64_t>(1000 + s), 1e-4, 8);
    worst_param = std::max(worst_param, r.param_error);
    worst_act = std::max(worst_act, r.activation_error);
    checked += r.checked;
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_param <= 1e-3 && worst_act <= 1e-3 && checked >= 100 && secs < 60.0;
  report(2, ok, "gradient check",
         std::to_string(networks) + " networks, " + std::to_string(checked) + " probes, max rel err param " +
             fmt("%.2e", worst_param) + " activation " + fmt("%.2e", worst_act) + " (<= 1e-3), " +
             fmt("%.1fs", secs));
}

// Criteria 3 and 4 share one fixture set.
void criteria_cams() {
  std::mt19937_64 rng(3);
  double cg = 0.0, gc = 0.0, lc = 0.0;
  bool tiles = true;
  for (int t = 0; t < 100; ++t) {
    const auto rec = oracle::random_record(rng);
    cg = std::max(cg, max_abs_diff(cgf::cg_cam_stage(rec, 2).values, oracle::cg_cam(rec.activations, rec.gradients, 2)));
    gc = std::max(gc, max_abs_diff(cgf::grad_cam(rec).values, oracle::grad_cam(rec.activations, rec.gradients)));
    lc = std::max(lc, max_abs_diff(cgf::layer_cam(rec).values, oracle::layer_cam(rec.activations, rec.gradients)));
    const Tensor w = cgf::cg_cam_weights(rec.gradients, 2);
    for (int c = 0; c < w.dim(0); ++c)
      for (int y = 0; y < w.dim(1); ++y)
        for (int x = 0; x < w.dim(2); ++x) tiles = tiles && w.at(c, y, x) == w.at(c, y / 2 * 2, x / 2 * 2);
  }
  report(3, cg <= 1e-9 && tiles, "CG-CAM oracle",
         "100 records, max abs diff " + fmt("%.2e", cg) + " (<= 1e-9), weights tile-constant: " + (tiles ? "yes" : "no"));
  report(4, gc <= 1e-9 && lc <= 1e-9, "Grad-CAM/LayerCAM oracles",
         "100 records, max abs diff Grad-CAM " + fmt("%.2e", gc) + " LayerCAM " + fmt("%.2e", lc) + " (<= 1e-9)");
}

void criterion_sauvola() {
  std::mt19937_64 rng(5);
  int mismatched = 0;
  double t_diff = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int h = 3 + static_cast<int>(rng() % 62), w = 3 + static_cast<int>(rng() % 62);
    const int win = 3 + 2 * static_cast<int>(rng() % ((std::min(h, w) - 1) / 2));
    const double k = -0.3 + 0.9 * static_cast<double>(rng() % 1000) / 1000.0;
    const Tensor m = oracle::random_tensor({h, w}, rng, 0.0, 255.0);
    cgf::ThresholdConfig cfg;
    cfg.window = win;
    cfg.k = k;
    const Tensor got = cgf::sauvola_threshold_map(m, cfg);
    const Tensor want = oracle::sauvola_t(m, win, k, cfg.r);
    t_diff = std::max(t_diff, max_abs_diff(got, want));
    const Tensor mask = cgf::sauvola_threshold(m, cfg);
    for (std::size_t i = 0; i < m.size(); ++i) mismatched += (mask[i] > 0.5) != (m[i] > want[i]);
  }
  cgf::ThresholdConfig hand;
  hand.window = 3;
  hand.k = 0.5;
  const Tensor fixture({3, 3}, std::vector<double>{196, 4, 100, 196, 4, 100, 100, 100, 100});
  const double centre = cgf::sauvola_threshold_map(fixture, hand).at(1, 1);
  report(5, mismatched == 0 && t_diff <= 1e-9 && centre == 75.0, "Sauvola exactness",
         "50 maps up to 64x64: " + std::to_string(mismatched) + " mask mismatches, max |T - T_naive| " +
             fmt("%.2e", t_diff) + "; mu=100 sigma=64 k=0.5 R=128 gives T=" + fmt("%g", centre));
}

void criterion_metrics() {
  bool ok = true;
  std::string detail;
  auto check = [&](bool c, const std::string& name) {
    if (!c) {
      ok = false;
      detail += name + " failed; ";
    }
  };
  Tensor gt({8, 8});
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) gt.at(y, x) = 1.0;
  const auto same = cgf::pixel_metrics(gt, gt);
  check(same.precision == 1.0 && same.recall == 1.0 && same.f1 == 1.0 && same.iou == 1.0, "identity");
  Tensor disjoint({8, 8});
  disjoint.at(0, 0) = 1.0;
  const auto dis = cgf::pixel_metrics(disjoint, gt);
  check(dis.precision == 0.0 && dis.recall == 0.0 && dis.iou == 0.0, "disjoint");
  Tensor half({8, 8});
  for (int y = 2; y < 6; ++y)
    for (int x = 4; x < 8; ++x) half.at(y, x) = 1.0;
  const auto hm = cgf::pixel_metrics(half, gt);
  check(hm.precision == 0.5 && hm.recall == 0.5 && hm.f1 == 0.5 && std::abs(*hm.iou - 1.0 / 3.0) < 1e-15, "half overlap");

  std::mt19937_64 rng(6);
  double harmonic = 0.0;
  for (int t = 0; t < 200; ++t) {
    Tensor p({16, 16}), g({16, 16});
    for (auto& v : p.storage()) v = rng() % 3 == 0 ? 1.0 : 0.0;
    for (auto& v : g.storage()) v = rng() % 3 == 0 ? 1.0 : 0.0;
    const auto m = cgf::pixel_metrics(p, g);
    if (m.precision && m.recall && m.f1 && *m.precision + *m.recall > 0.0) {
      harmonic = std::max(harmonic, std::abs(*m.f1 - 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall)));
    }
  }
  check(harmonic <= 1e-12, "harmonic identity");

  // Three regions touching ground truth, one in empty space.
  Tensor gmask({12, 12}), pred({12, 12});
  for (int i = 0; i < 3; ++i) {
    gmask.at(1, 1 + 4 * i) = gmask.at(1, 2 + 4 * i) = 1.0;
    pred.at(1, 1 + 4 * i) = pred.at(2, 1 + 4 * i) = 1.0;
  }
  pred.at(9, 9) = pred.at(9, 10) = 1.0;
  const auto f = cgf::fdr(cgf::extract_regions(pred, 1), gmask);
  check(f.tp == 3 && f.fp == 1 && f.fdr == 0.25, "FDR fixture");
  report(6, ok, "metric identities",
         ok ? "identity/disjoint/half-overlap exact, max |F1 - 2PR/(P+R)| " + fmt("%.1e", harmonic) +
                  ", FDR(TP=3, FP=1) = " + fmt("%g", *f.fdr)
            : detail);
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::map<cgf::CamMethod, cgf::EvalReport> reports;
  cgf::Network net;
  bool ok = false;
};

// Settings shared by the ordering runs and the compensation fixture.
cgf::RunConfig ordering_config(std::uint64_t seed) {
  cgf::RunConfig c;
  c.seed = seed;
  for (auto& st : c.net.stages) st.conv_layers = 1;
  c.train.learning_rate = 0.01;
  c.train.batch_size = 16;
  c.train.epochs = 30;
  c.train.lr_decay_epoch = 20;
  c.target = cgf::TargetMode::damage;
  return c.resolved();
}

SeedOutcome ordering_run(std::uint64_t seed) {
  const cgf::RunConfig c = ordering_config(seed);
  const auto data = cgf::synth::build_dataset(c.data);
  std::vector<cgf::Sample> train;
  for (const auto& crop : data.train) train.push_back({cgf::network_input(crop.image), crop.label, crop.name});
  SeedOutcome out;
  out.seed = seed;
  out.net = cgf::train(train, c.net, c.train).network;

  std::vector<int> pred, labels;
  std::vector<cgf::EvalItem> items;
  for (const auto& crop : data.test) {
    pred.push_back(cgf::classify(out.net, cgf::network_input(crop.image)).predicted());
    labels.push_back(crop.label);
    if (crop.label == cgf::kDamageClass) items.push_back({crop.name, crop.image, crop.mask});
  }
  out.accuracy = cgf::classification_metrics(pred, labels).accuracy.value_or(0.0);

  std::set<cgf::synth::StrayKind> kinds;
  for (const auto& s : data.scenes)
    for (const auto& e : s.stray) kinds.insert(e.kind);
  const bool fixture_ok = data.test.size() >= 200 && kinds.size() >= 3 && c.data.scene.min_radius <= 2.0 &&
                          c.data.scene.max_radius >= 40.0;

  using M = cgf::CamMethod;
  const std::vector<M> methods{M::gradcam, M::layercam, M::cgcam, M::cgfusion};
  for (auto& mr : cgf::evaluate_methods(out.net, items, methods, c)) out.reports[mr.method] = mr.report;
  auto iou = [&](M m) { return out.reports[m].pixels.iou.value_or(0.0); };
  auto fdr = [&](M m) { return out.reports[m].fdr.value_or(1.0); };
  const bool iou_order = iou(M::cgfusion) > iou(M::cgcam) && iou(M::cgcam) > iou(M::layercam) &&
                         iou(M::layercam) > iou(M::gradcam);
  const bool fdr_order = fdr(M::cgfusion) < fdr(M::cgcam) && fdr(M::cgcam) < fdr(M::layercam);
  out.ok = fixture_ok && out.accuracy >= 0.95 && iou_order && fdr_order;

  std::printf("    seed %llu: %zu test crops (%zu damage), %zu stray kinds, accuracy %.4f%s\n",
              static_cast<unsigned long long>(seed), data.test.size(), items.size(), kinds.size(), out.accuracy,
              out.accuracy >= 0.95 ? "" : " (< 0.95)");
  for (M m : methods) {
    std::printf("      %-9s IoU %.4f  FDR %.4f  (TP %lld, FP %lld)\n", cgf::method_name(m), iou(m), fdr(m),
                static_cast<long long>(out.reports[m].tp_regions), static_cast<long long>(out.reports[m].fp_regions));
  }
  std::printf("      IoU ordering %s, FDR ordering %s\n", iou_order ? "holds" : "violated",
              fdr_order ? "holds" : "violated");
  std::fflush(stdout);
  return out;
}

std::vector<SeedOutcome> criterion_ordering() {
  const auto t0 = Clock::now();
  std::vector<SeedOutcome> runs;
  for (std::uint64_t seed : {1, 2, 3}) runs.push_back(ordering_run(seed));
  const double secs = seconds_since(t0);
  int good = 0;
  for (const auto& r : runs) good += r.ok;
  report(7, good == 3 && secs < 1800.0, "synthetic end-to-end ordering",
         std::to_string(good) + "/3 seeds satisfy accuracy >= 0.95, IoU and FDR orderings; " + fmt("%.0fs", secs) +
             " (< 1800s)");
  return runs;
}

// Regions overlapping `site` and the share of the site they cover.
std::pair<int, double> site_coverage(const cgf::SegmentationResult& seg, const Tensor& site) {
  int regions = 0;
  double covered = 0.0, area = 0.0;
  for (double v : site.data()) area += v;
  for (const auto& r : seg.regions) {
    int hit = 0;
    for (int p : r.pixels) hit += site[static_cast<std::size_t>(p)] > 0.5;
    if (hit > 0) ++regions;
    covered += hit;
  }
  return {regions, area > 0.0 ? covered / area : 0.0};
}

void criterion_compensation(cgf::Network* net) {
  if (net == nullptr) {
    report(8, false, "under-activation compensation", "no trained network");
    return;
  }
  const cgf::RunConfig c = ordering_config(1);
  cgf::synth::SceneSpec spec;
  spec.width = spec.height = 128;
  spec.seed = 8;
  spec.sites.push_back({48.0, 60.0, 32.0, 150.0});  // large
  spec.sites.push_back({110.0, 108.0, 3.0, 150.0});  // small
  const auto scene = cgf::synth::generate_scene(spec);

  Tensor large({128, 128});
  const double r2 = 32.0 * 32.0;
  for (int y = 0; y < 128; ++y)
    for (int x = 0; x < 128; ++x)
      large.at(y, x) = scene.mask.at(y, x) > 0.5 && (x - 48.0) * (x - 48.0) + (y - 60.0) * (y - 60.0) <= r2 ? 1.0 : 0.0;

  const auto ex = cgf::explain(*net, scene.image, cgf::TargetMode::damage, c.fusion);
  const auto fused = cgf::segment_heatmap(cgf::method_heatmap(ex, cgf::CamMethod::cgfusion, c.fusion), c.threshold);
  const auto shallow = cgf::segment_heatmap(cgf::to_input_resolution(ex.layer_cam[0].values, 128, 128), c.threshold);
  const auto [fr, fc] = site_coverage(fused, large);
  const auto [lr, lc] = site_coverage(shallow, large);
  // Present: overlapping regions cover at least half the site. Absent: they
  // cover less; fragmented: more than one region touches it.
  const bool fused_present = fc >= 0.5;
  const bool shallow_missing = lc < 0.5 || lr > 1;
  report(8, fused_present && shallow_missing, "under-activation compensation",
         "large site (r=32) covered " + fmt("%.0f%%", 100.0 * fc) + " by " + std::to_string(fr) +
             " CG-fusion region(s); stage-1 LayerCAM covers " + fmt("%.0f%%", 100.0 * lc) + " with " +
             std::to_string(lr) + " region(s)");
}

std::map<std::string, std::string> snapshot(const fs::path& run) {
  std::map<std::string, std::string> files;
  for (const char* sub : {"reports", "checkpoints", "predictions", "heatmaps", "overlays"}) {
    if (!fs::exists(run / sub)) continue;
    for (const auto& e : fs::recursive_directory_iterator(run / sub)) {
      if (!e.is_regular_file()) continue;
      std::ifstream is(e.path(), std::ios::binary);
      std::ostringstream ss;
      ss << is.rdbuf();
      files[fs::relative(e.path(), run).string()] = ss.str();
    }
  }
  return files;
}

void criterion_determinism() {
  auto run_once = [](int jobs) {
    cgf::RunConfig c;
    cgf::parse_config_text(c, R"(
run.name = determinism
data.canvas = 256
data.window = 32
data.stride = 16
data.scenes_per_split = 2
data.train_size = 80
data.test_size = 40
data.sites = 12
data.max_radius = 8
net.widths = 4,8
net.convs = 1,1
net.hidden = 8
net.input_size = 32
train.epochs = 2
train.batch_size = 8
train.lr = 0.01
fusion.stages = 1,2
threshold.window = 7
)");
    c.run_root = (fs::temp_directory_path() / "cgfusion_acceptance").string();
    c.jobs = jobs;
    fs::remove_all(c.run_dir());
    cgf::cmd_gen_data(c);
    cgf::cmd_train(c);
    c.input = (c.data_path() / "test" / "damage").string();
    c.gt_dir = (c.data_path() / "test" / "masks" / "damage").string();
    cgf::cmd_infer(c);
    cgf::cmd_evaluate(c);
    cgf::cmd_ablate(c);
    return snapshot(c.run_dir());
  };
  const auto a = run_once(1);
  const auto b = run_once(2);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) ++differing;
  }
  const bool ok = !a.empty() && a.size() == b.size() && differing == 0;
  report(9, ok, "determinism",
         std::to_string(a.size()) + " output files compared across two runs (1 and 2 workers), " +
             std::to_string(differing) + " differ");
}

void criterion_crops() {
  const int per_axis = cgf::synth::crop_count_1d(4096, 128, 64);
  // Cross-check the formula against an actual sliding crop at 1024.
  cgf::synth::SceneSpec spec;
  spec.width = spec.height = 1024;
  const auto scene = cgf::synth::generate_scene(spec);
  int dropped = 0;
  const auto crops = cgf::synth::crop_sliding(scene, 128, 64, 4, "c", 20.0, &dropped);
  const int small = cgf::synth::crop_count_1d(1024, 128, 64);
  const bool ok = per_axis * per_axis == 3969 && static_cast<int>(crops.size()) + dropped == small * small;
  report(10, ok, "crop arithmetic",
         "4096x4096, window 128, stride 64: " + std::to_string(per_axis * per_axis) + " crops (3969); 1024 scene yields " +
             std::to_string(crops.size() + static_cast<std::size_t>(dropped)) + " = " + std::to_string(small * small));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  std::printf("1 (paper-number reproduction) is out of scope: the dataset is private.\n");
  criterion_gradients();
  criteria_cams();
  criterion_sauvola();
  criterion_metrics();
  auto runs = criterion_ordering();
  criterion_compensation(runs.empty() ? nullptr : &runs.front().net);
  criterion_determinism();
  criterion_crops();
  std::printf("%d criteria failed, %.0fs total\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
