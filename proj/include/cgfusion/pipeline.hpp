#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cgfusion/cam.hpp"
#include "cgfusion/classifier.hpp"
#include "cgfusion/evaluation.hpp"
#include "cgfusion/fusion.hpp"
#include "cgfusion/postprocess.hpp"
#include "cgfusion/synth.hpp"

// End-to-end orchestration: configuration, the method switch and the five
// pipeline commands.
namespace cgf {

enum class CamMethod { gradcam, layercam, cgcam, cgfusion };

const char* method_name(CamMethod m);
CamMethod parse_method(const std::string& name);

// Which class the CAMs explain. `predicted` yields an empty map whenever the
// classifier calls the image background.
enum class TargetMode { predicted, damage, background };

const char* target_mode_name(TargetMode t);
TargetMode parse_target_mode(const std::string& name);

struct RunConfig {
  std::string run_name = "default";
  std::string run_root;  // empty: $CGFUSION_RUNS, else "runs"
  std::uint64_t seed = 7;
  int jobs = 1;

  std::string data_dir;    // empty: <run>/data
  std::string checkpoint;  // empty: <run>/checkpoints/model.ckpt
  std::string input;       // infer: image file or directory
  std::string pred_dir;    // evaluate: empty means <run>/predictions
  std::string gt_dir;      // evaluate (required) / infer overlays (optional)

  synth::DatasetConfig data;
  NetworkSpec net;
  bool full_width = false;
  TrainConfig train;
  CamMethod method = CamMethod::cgfusion;
  TargetMode target = TargetMode::predicted;
  FusionConfig fusion;
  ThresholdConfig threshold;
  FdrOptions fdr;

  // Copies the global seed into the data and training settings and applies
  // the full-width preset.
  RunConfig resolved() const;
  std::filesystem::path run_dir() const;
  std::filesystem::path data_path() const;
  std::filesystem::path checkpoint_path() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Every configurable field, in echo order.
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError for unknown keys and unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

// "key = value" lines; '#' starts a comment.
void load_config_file(RunConfig& cfg, const std::filesystem::path& path);
void parse_config_text(RunConfig& cfg, const std::string& text);
std::string config_echo(const RunConfig& cfg);

// Settings that affect numeric results (no paths, no worker count); copied
// into report JSON.
std::vector<std::pair<std::string, std::string>> report_settings(const RunConfig& cfg);

// Gray image (H x W, 0..255) to network input (1 x H x W, value / 255).
Tensor network_input(const Tensor& gray);

// Everything derivable from one capture pass, at input resolution unless noted.
struct Explanation {
  ClassScores scores;
  int target_class = kDamageClass;
  bool suppressed = false;            // predicted mode and image classified background
  std::vector<Heatmap> layer_cam;     // native resolution, one per stage
  std::vector<Heatmap> cg_cam;        // native resolution, one per stage
  Heatmap grad_cam;                   // last stage, native resolution
  FusionProducts fusion;
};

Explanation explain(Network& net, const Tensor& gray, TargetMode target, const FusionConfig& fusion);

// Heatmap in [0, 1] at input resolution that feeds post-processing.
Tensor method_heatmap(const Explanation& ex, CamMethod method, const FusionConfig& fusion);

struct EvalItem {
  std::string name;
  Tensor gray;  // H x W, 0..255
  Tensor mask;  // H x W, {0, 1}
};

// Pairs <image_dir>/*.png|pgm with same-named masks in `mask_dir`.
std::vector<EvalItem> load_eval_items(const std::filesystem::path& image_dir,
                                      const std::filesystem::path& mask_dir);

struct MethodReport {
  CamMethod method;
  EvalReport report;
};

// Scores every method on every item with identical post-processing. Each
// worker owns a copy of `net`; results do not depend on `jobs`.
std::vector<MethodReport> evaluate_methods(const Network& net, const std::vector<EvalItem>& items,
                                           const std::vector<CamMethod>& methods,
                                           const RunConfig& cfg);

// Runs fn(worker, index) for index in [0, n) on `jobs` threads.
void parallel_for(std::size_t n, int jobs, const std::function<void(int, std::size_t)>& fn);

using LogSink = std::function<void(const std::string&)>;

void cmd_gen_data(const RunConfig& cfg, const LogSink& log = {});
void cmd_train(const RunConfig& cfg, const LogSink& log = {});
void cmd_infer(const RunConfig& cfg, const LogSink& log = {});
void cmd_evaluate(const RunConfig& cfg, const LogSink& log = {});

struct AblationRow {
  CamMethod method;
  PixelMetrics pixels;
  std::optional<double> fdr;
};

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const LogSink& log = {});

// Loads the configured checkpoint and checks it against the configured network.
Network load_checkpoint(const RunConfig& cfg);

}  // namespace cgf
