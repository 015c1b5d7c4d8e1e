#include "cgfusion/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "cgfusion/errors.hpp"
#include "cgfusion/image_io.hpp"

namespace cgf {
namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("config '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<int>(key, trim(item)));
  if (out.empty()) throw ConfigError("config '" + key + "': empty list");
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

ConfigKey str_key(std::string name, std::string help, std::string RunConfig::*field) {
  return {std::move(name), std::move(help), [field](const RunConfig& c) { return c.*field; },
          [field](RunConfig& c, const std::string& v) { c.*field = v; }};
}

template <typename Get, typename Set>
ConfigKey key(std::string name, std::string help, Get get, Set set) {
  return {std::move(name), std::move(help), get, set};
}

#define CGF_INT_KEY(NAME, HELP, EXPR)                                                 \
  key(NAME, HELP, [](const RunConfig& c) { return std::to_string(c.EXPR); },         \
      [](RunConfig& c, const std::string& v) { c.EXPR = parse_int<int>(NAME, v); })
#define CGF_DOUBLE_KEY(NAME, HELP, EXPR)                                              \
  key(NAME, HELP, [](const RunConfig& c) { return fmt_double(c.EXPR); },             \
      [](RunConfig& c, const std::string& v) { c.EXPR = parse_double(NAME, v); })
#define CGF_BOOL_KEY(NAME, HELP, EXPR)                                                \
  key(NAME, HELP, [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); }, \
      [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(NAME, v); })

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back(str_key("run.name", "run directory name under the output root", &RunConfig::run_name));
  k.push_back(str_key("run.root", "output root (default: $CGFUSION_RUNS or ./runs)", &RunConfig::run_root));
  k.push_back(key(
      "seed", "seed for data generation, initialization and training",
      [](const RunConfig& c) { return std::to_string(c.seed); },
      [](RunConfig& c, const std::string& v) { c.seed = parse_int<std::uint64_t>("seed", v); }));
  k.push_back(CGF_INT_KEY("jobs", "worker threads for per-image work", jobs));
  k.push_back(str_key("data.dir", "dataset root (default: <run>/data)", &RunConfig::data_dir));
  k.push_back(str_key("checkpoint", "checkpoint file (default: <run>/checkpoints/model.ckpt)", &RunConfig::checkpoint));
  k.push_back(str_key("input", "infer: image file or directory", &RunConfig::input));
  k.push_back(str_key("pred_dir", "evaluate: predicted masks (default: <run>/predictions)", &RunConfig::pred_dir));
  k.push_back(str_key("gt_dir", "ground-truth masks for evaluate and infer overlays", &RunConfig::gt_dir));

  k.push_back(CGF_INT_KEY("data.canvas", "scene side length in pixels", data.canvas));
  k.push_back(CGF_INT_KEY("data.window", "crop window", data.window));
  k.push_back(CGF_INT_KEY("data.stride", "crop stride", data.stride));
  k.push_back(CGF_INT_KEY("data.label_min_pixels", "mask pixels needed for a damage label", data.label_min_pixels));
  k.push_back(CGF_INT_KEY("data.scenes_per_split", "damage scenes per split (plus as many stray-only scenes)",
                          data.scenes_per_split));
  k.push_back(CGF_INT_KEY("data.train_size", "training crops", data.train_size));
  k.push_back(CGF_INT_KEY("data.test_size", "test crops", data.test_size));
  k.push_back(CGF_DOUBLE_KEY("data.damage_fraction", "share of damage crops", data.damage_fraction));
  k.push_back(CGF_DOUBLE_KEY("data.superimpose_fraction", "share of damage crops made by superimposition",
                             data.superimpose_fraction));
  k.push_back(CGF_INT_KEY("data.min_test_stray_pixels", "stray-light pixels required in plain damage test crops",
                          data.min_test_stray_pixels));
  k.push_back(CGF_INT_KEY("data.sites", "damage sites per scene", data.scene.sites));
  k.push_back(CGF_DOUBLE_KEY("data.min_radius", "smallest site radius (px)", data.scene.min_radius));
  k.push_back(CGF_DOUBLE_KEY("data.max_radius", "largest site radius (px)", data.scene.max_radius));
  k.push_back(CGF_DOUBLE_KEY("data.min_peak", "dimmest site peak (gray levels)", data.scene.min_peak));
  k.push_back(CGF_DOUBLE_KEY("data.max_peak", "brightest site peak (gray levels)", data.scene.max_peak));
  k.push_back(CGF_INT_KEY("data.stray_elements", "stray-light elements per damage scene", data.scene.stray_elements));

  k.push_back(key(
      "net.widths", "channels per stage",
      [](const RunConfig& c) {
        std::vector<int> w;
        for (const auto& s : c.net.stages) w.push_back(s.width);
        return join_ints(w);
      },
      [](RunConfig& c, const std::string& v) {
        const auto w = parse_int_list("net.widths", v);
        c.net.stages.resize(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) c.net.stages[i].width = w[i];
      }));
  k.push_back(key(
      "net.convs", "conv layers per stage",
      [](const RunConfig& c) {
        std::vector<int> n;
        for (const auto& s : c.net.stages) n.push_back(s.conv_layers);
        return join_ints(n);
      },
      [](RunConfig& c, const std::string& v) {
        const auto n = parse_int_list("net.convs", v);
        c.net.stages.resize(n.size());
        for (std::size_t i = 0; i < n.size(); ++i) c.net.stages[i].conv_layers = n[i];
      }));
  k.push_back(CGF_INT_KEY("net.hidden", "hidden units of the classifier head", net.hidden_units));
  k.push_back(CGF_INT_KEY("net.input_size", "input side length", net.input_size));
  k.push_back(CGF_DOUBLE_KEY("net.input_mean", "subtracted from value/255 at the network input", net.input_mean));
  k.push_back(CGF_DOUBLE_KEY("net.input_std", "divides the centred network input", net.input_std));
  k.push_back(CGF_BOOL_KEY("net.full_width", "use VGG-16 widths (64..512, 4096 hidden)", full_width));

  k.push_back(CGF_DOUBLE_KEY("train.lr", "initial learning rate", train.learning_rate));
  k.push_back(CGF_INT_KEY("train.lr_decay_epoch", "epoch (0-based) from which the decay factor applies",
                          train.lr_decay_epoch));
  k.push_back(CGF_DOUBLE_KEY("train.lr_decay_factor", "learning-rate decay factor", train.lr_decay_factor));
  k.push_back(CGF_INT_KEY("train.batch_size", "mini-batch size", train.batch_size));
  k.push_back(CGF_INT_KEY("train.epochs", "training epochs", train.epochs));
  k.push_back(CGF_DOUBLE_KEY("train.flip", "flip probability per axis", train.flip_probability));
  k.push_back(CGF_DOUBLE_KEY("train.momentum", "SGD momentum", train.momentum));
  k.push_back(CGF_DOUBLE_KEY("train.weight_decay", "L2 weight decay", train.weight_decay));

  k.push_back(key(
      "method", "heatmap fed to post-processing: gradcam, layercam, cgcam, cgfusion",
      [](const RunConfig& c) { return std::string(method_name(c.method)); },
      [](RunConfig& c, const std::string& v) { c.method = parse_method(v); }));
  k.push_back(key(
      "target", "class explained: predicted, damage, background",
      [](const RunConfig& c) { return std::string(target_mode_name(c.target)); },
      [](RunConfig& c, const std::string& v) { c.target = parse_target_mode(v); }));
  k.push_back(key(
      "fusion.stages", "stages summed into M_CG-CAM",
      [](const RunConfig& c) { return join_ints(c.fusion.stages_to_fuse); },
      [](RunConfig& c, const std::string& v) { c.fusion.stages_to_fuse = parse_int_list("fusion.stages", v); }));
  k.push_back(CGF_DOUBLE_KEY("fusion.v_thr", "mask threshold on normalized M_deep", fusion.v_thr));

  k.push_back(CGF_INT_KEY("threshold.window", "local threshold window (odd)", threshold.window));
  k.push_back(CGF_DOUBLE_KEY("threshold.k", "local threshold sensitivity", threshold.k));
  k.push_back(CGF_DOUBLE_KEY("threshold.r", "assumed maximum standard deviation", threshold.r));
  k.push_back(CGF_INT_KEY("threshold.min_area", "smallest kept region (px)", threshold.min_area));
  k.push_back(CGF_BOOL_KEY("threshold.invert", "threshold the inverted map (dark-foreground convention)",
                           threshold.invert));

  k.push_back(CGF_DOUBLE_KEY("eval.delta", "region IoU needed for a true positive", fdr.delta));
  k.push_back(CGF_BOOL_KEY("eval.delta_literal", "use IoU >= delta even when delta is 0", fdr.literal));
  return k;
}

#undef CGF_INT_KEY
#undef CGF_DOUBLE_KEY
#undef CGF_BOOL_KEY

const ConfigKey& find_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return k;
  }
  throw ConfigError("unknown config key '" + name + "'");
}

bool is_path_key(const std::string& name) {
  return name == "run.name" || name == "run.root" || name == "jobs" || name == "data.dir" ||
         name == "checkpoint" || name == "input" || name == "pred_dir" || name == "gt_dir";
}

std::string describe(const NetworkSpec& s) {
  std::vector<int> w, n;
  for (const auto& st : s.stages) {
    w.push_back(st.width);
    n.push_back(st.conv_layers);
  }
  return "widths " + join_ints(w) + ", convs " + join_ints(n) + ", hidden " + std::to_string(s.hidden_units) +
         ", input " + std::to_string(s.input_channels) + "x" + std::to_string(s.input_size) + "x" +
         std::to_string(s.input_size);
}

void emit(const LogSink& log, const std::string& line) {
  if (log) log(line);
}

void prepare_run_dir(const RunConfig& cfg, const std::string& command) {
  const fs::path dir = cfg.run_dir();
  for (const char* sub : {"config", "checkpoints", "heatmaps", "overlays", "reports"}) {
    fs::create_directories(dir / sub);
  }
  std::ofstream os(dir / "config" / (command + ".cfg"));
  if (!os) throw IoError("cannot write config echo in " + (dir / "config").string());
  os << config_echo(cfg);
}

std::vector<int> configured_stages(const FusionConfig& f) { return f.stages_to_fuse; }

std::vector<Heatmap> pick_stages(const std::vector<Heatmap>& maps, const std::vector<int>& stages) {
  std::vector<Heatmap> out;
  for (int s : stages) out.push_back(maps[static_cast<std::size_t>(s - 1)]);
  return out;
}

void write_map(const fs::path& dir, const std::string& stem, const Tensor& map) {
  io::write_heatmap_png(dir / (stem + ".png"), map);
  io::write_float_dump(dir / (stem + ".cgfd"), map);
}

void write_overlay(const fs::path& path, const Tensor& gray, const SegmentationResult& seg,
                   const FdrResult* verdicts) {
  const int h = gray.height(), w = gray.width();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    const auto g = static_cast<std::uint8_t>(std::clamp(std::round(gray[i]), 0.0, 255.0));
    rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = g;
  }
  for (std::size_t r = 0; r < seg.regions.size(); ++r) {
    // red: matched damage, green: false positive
    const bool matched = verdicts == nullptr || verdicts->verdicts[r].true_positive;
    const int channel = matched ? 0 : 1;
    for (int p : seg.regions[r].pixels) {
      auto* px = &rgb[3 * static_cast<std::size_t>(p)];
      for (int c = 0; c < 3; ++c) px[c] = static_cast<std::uint8_t>(px[c] * 0.4);
      px[channel] = static_cast<std::uint8_t>(std::min(255.0, px[channel] + 0.6 * 255.0));
    }
  }
  io::write_rgb_png(path, h, w, rgb);
}

nlohmann::ordered_json rate(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json("NA");
}

nlohmann::ordered_json settings_json(const RunConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report_settings(cfg)) j[k] = v;
  return j;
}

}  // namespace

const char* method_name(CamMethod m) {
  switch (m) {
    case CamMethod::gradcam: return "gradcam";
    case CamMethod::layercam: return "layercam";
    case CamMethod::cgcam: return "cgcam";
    case CamMethod::cgfusion: return "cgfusion";
  }
  return "?";
}

CamMethod parse_method(const std::string& name) {
  for (auto m : {CamMethod::gradcam, CamMethod::layercam, CamMethod::cgcam, CamMethod::cgfusion}) {
    if (name == method_name(m)) return m;
  }
  throw ConfigError("unknown method '" + name + "' (gradcam, layercam, cgcam, cgfusion)");
}

const char* target_mode_name(TargetMode t) {
  switch (t) {
    case TargetMode::predicted: return "predicted";
    case TargetMode::damage: return "damage";
    case TargetMode::background: return "background";
  }
  return "?";
}

TargetMode parse_target_mode(const std::string& name) {
  for (auto t : {TargetMode::predicted, TargetMode::damage, TargetMode::background}) {
    if (name == target_mode_name(t)) return t;
  }
  throw ConfigError("unknown target '" + name + "' (predicted, damage, background)");
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.data.seed = seed;
  r.train.seed = seed;
  if (full_width) {
    NetworkSpec full = NetworkSpec::full_width();
    r.net.stages = full.stages;
    r.net.hidden_units = full.hidden_units;
  }
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  r.net.validate();
  r.train.validate();
  r.data.validate();
  r.threshold.validate();
  r.fusion.validate(static_cast<int>(r.net.stages.size()));
  if (!(r.fdr.delta >= 0.0 && r.fdr.delta < 1.0)) throw ConfigError("eval.delta must lie in [0, 1)");
  return r;
}

fs::path RunConfig::run_dir() const {
  fs::path root = run_root;
  if (root.empty()) {
    const char* env = std::getenv("CGFUSION_RUNS");
    root = env && *env ? fs::path(env) : fs::path("runs");
  }
  return root / run_name;
}

fs::path RunConfig::data_path() const { return data_dir.empty() ? run_dir() / "data" : fs::path(data_dir); }

fs::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? run_dir() / "checkpoints" / "model.ckpt" : fs::path(checkpoint);
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_key(key).set(cfg, trim(value));
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return find_key(key).get(cfg); }

void parse_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

void load_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  parse_config_text(cfg, ss.str());
}

std::string config_echo(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> report_settings(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) {
    if (!is_path_key(k.name)) out.emplace_back(k.name, k.get(cfg));
  }
  return out;
}

Tensor network_input(const Tensor& gray) {
  if (gray.rank() != 2) throw ConfigError("expected an H x W gray image, got " + shape_string(gray.shape()));
  Tensor x = gray.reshaped({1, gray.height(), gray.width()});
  for (auto& v : x.storage()) v /= 255.0;
  return x;
}

Explanation explain(Network& net, const Tensor& gray, TargetMode target, const FusionConfig& fusion) {
  const NetworkSpec spec = infer_spec(net);
  const int stages = static_cast<int>(spec.stages.size());
  fusion.validate(stages);
  if (gray.rank() != 2 || gray.height() != spec.input_size || gray.width() != spec.input_size) {
    throw ConfigError("image is " + shape_string(gray.shape()) + " but the network expects " +
                      std::to_string(spec.input_size) + "x" + std::to_string(spec.input_size));
  }
  std::vector<std::string> ids;
  for (int s = 1; s <= stages; ++s) ids.push_back(stage_capture_id(spec, s));
  std::optional<int> cls;
  if (target == TargetMode::damage) cls = kDamageClass;
  if (target == TargetMode::background) cls = kBackgroundClass;
  const CaptureResult cr = classify_with_capture(net, network_input(gray), ids, cls);

  Explanation ex;
  ex.scores = cr.scores;
  ex.target_class = cr.target_class;
  ex.suppressed = target == TargetMode::predicted && cr.target_class != kDamageClass;
  for (const auto& rec : cr.records) {
    ex.layer_cam.push_back(layer_cam(rec));
    ex.cg_cam.push_back(cg_cam_stage(rec, 2));
  }
  ex.grad_cam = grad_cam(cr.records.back());

  Tensor image = gray;
  for (auto& v : image.storage()) v /= 255.0;
  if (ex.suppressed) {
    const Tensor zero(gray.shape());
    ex.fusion = {image, zero, zero, zero, zero, zero};
  } else {
    ex.fusion = nm_fusion(image, pick_stages(ex.cg_cam, configured_stages(fusion)), ex.grad_cam, fusion);
  }
  return ex;
}

Tensor method_heatmap(const Explanation& ex, CamMethod method, const FusionConfig& fusion) {
  const int h = ex.fusion.image.height(), w = ex.fusion.image.width();
  if (ex.suppressed) return Tensor({h, w});
  switch (method) {
    case CamMethod::gradcam: return to_input_resolution(ex.grad_cam.values, h, w);
    case CamMethod::layercam: return fuse_stages(pick_stages(ex.layer_cam, configured_stages(fusion)), h, w);
    case CamMethod::cgcam: return ex.fusion.cg_cam;
    case CamMethod::cgfusion: return ex.fusion.fusion;
  }
  throw ConfigError("unknown method");
}

std::vector<EvalItem> load_eval_items(const fs::path& image_dir, const fs::path& mask_dir) {
  if (!fs::is_directory(image_dir)) throw IoError("image directory not found: " + image_dir.string());
  if (!fs::is_directory(mask_dir)) throw IoError("mask directory not found: " + mask_dir.string());
  std::vector<EvalItem> items;
  for (const auto& p : io::list_images(image_dir)) {
    const fs::path m = mask_dir / p.filename();
    if (!fs::exists(m)) throw DataError("no ground-truth mask for " + p.filename().string());
    items.push_back({p.stem().string(), io::read_gray(p), io::read_mask(m)});
  }
  if (items.empty()) throw DataError("no images in " + image_dir.string());
  return items;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(int, std::size_t)>& fn) {
  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(0, i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(w, i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<MethodReport> evaluate_methods(const Network& net, const std::vector<EvalItem>& items,
                                           const std::vector<CamMethod>& methods, const RunConfig& cfg) {
  std::vector<std::vector<ImageReport>> per(methods.size(), std::vector<ImageReport>(items.size()));
  std::vector<Network> nets(static_cast<std::size_t>(std::max(cfg.jobs, 1)), net);
  parallel_for(items.size(), cfg.jobs, [&](int worker, std::size_t i) {
    const auto& item = items[i];
    const Explanation ex = explain(nets[static_cast<std::size_t>(worker)], item.gray, cfg.target, cfg.fusion);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const SegmentationResult seg = segment_heatmap(method_heatmap(ex, methods[m], cfg.fusion), cfg.threshold);
      per[m][i] = evaluate_image(item.name, seg, item.mask, cfg.fdr);
    }
  });
  std::vector<MethodReport> out;
  for (std::size_t m = 0; m < methods.size(); ++m) out.push_back({methods[m], aggregate(std::move(per[m]), cfg.fdr)});
  return out;
}

Network load_checkpoint(const RunConfig& cfg) {
  const fs::path path = cfg.checkpoint_path();
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string());
  Network net = Network::load(path);
  const NetworkSpec have = infer_spec(net);
  const NetworkSpec& want = cfg.net;
  bool same = have.stages.size() == want.stages.size() && have.hidden_units == want.hidden_units &&
              have.input_size == want.input_size && have.input_channels == want.input_channels;
  for (std::size_t i = 0; same && i < have.stages.size(); ++i) {
    same = have.stages[i].width == want.stages[i].width && have.stages[i].conv_layers == want.stages[i].conv_layers;
  }
  if (!same) {
    throw ConfigError("checkpoint/network mismatch: checkpoint has " + describe(have) + "; config has " +
                      describe(want));
  }
  return net;
}

void cmd_gen_data(const RunConfig& raw, const LogSink& log) {
  const RunConfig cfg = raw.resolved();
  prepare_run_dir(cfg, "gen-data");
  const synth::Dataset data = synth::build_dataset(cfg.data);
  synth::write_dataset(cfg.data_path(), data, cfg.data);
  emit(log, "wrote " + std::to_string(data.train.size()) + " training and " + std::to_string(data.test.size()) +
                " test crops to " + cfg.data_path().string());
}

void cmd_train(const RunConfig& raw, const LogSink& log) {
  const RunConfig cfg = raw.resolved();
  const fs::path train_dir = cfg.data_path() / "train";
  if (!fs::is_directory(train_dir)) throw IoError("training data not found: " + train_dir.string());
  prepare_run_dir(cfg, "train");
  std::vector<Sample> samples = load_dataset(train_dir);
  for (const auto& s : samples) {
    if (s.image.height() != cfg.net.input_size || s.image.width() != cfg.net.input_size) {
      throw ConfigError("sample '" + s.name + "' does not match net.input_size " +
                        std::to_string(cfg.net.input_size));
    }
  }
  const fs::path log_path = cfg.run_dir() / "reports" / "train_log.csv";
  std::ofstream csv(log_path);
  if (!csv) throw IoError("cannot write " + log_path.string());
  csv << "epoch,loss,accuracy,learning_rate\n";
  const TrainResult res = train(samples, cfg.net, cfg.train, [&](const EpochLog& e) {
    csv << e.epoch << ',' << fmt_double(e.loss) << ',' << fmt_double(e.accuracy) << ','
        << fmt_double(e.learning_rate) << '\n';
    emit(log, "epoch " + std::to_string(e.epoch) + "  loss " + fmt_double(e.loss) + "  accuracy " +
                  fmt_double(e.accuracy));
  });
  csv.flush();
  fs::create_directories(cfg.checkpoint_path().parent_path());
  res.network.save(cfg.checkpoint_path());
  emit(log, "checkpoint " + cfg.checkpoint_path().string());

  const fs::path test_dir = cfg.data_path() / "test";
  if (fs::is_directory(test_dir)) {
    const std::vector<Sample> test = load_dataset(test_dir);
    std::vector<int> pred(test.size()), labels(test.size());
    std::vector<Network> nets(static_cast<std::size_t>(cfg.jobs), res.network);
    parallel_for(test.size(), cfg.jobs, [&](int w, std::size_t i) {
      pred[i] = classify(nets[static_cast<std::size_t>(w)], test[i].image).predicted();
      labels[i] = test[i].label;
    });
    const ClassificationMetrics m = classification_metrics(pred, labels);
    nlohmann::ordered_json j;
    j["schema_version"] = kReportSchemaVersion;
    j["split"] = "test";
    j["samples"] = test.size();
    j["tp"] = m.counts.tp;
    j["fp"] = m.counts.fp;
    j["fn"] = m.counts.fn;
    j["tn"] = m.counts.tn;
    j["accuracy"] = rate(m.accuracy);
    j["precision"] = rate(m.precision);
    j["recall"] = rate(m.recall);
    j["fpr"] = rate(m.fpr);
    j["f1"] = rate(m.f1);
    j["config"] = settings_json(cfg);
    std::ofstream os(cfg.run_dir() / "reports" / "classification.json");
    os << j.dump(2) << '\n';
    emit(log, "test accuracy " + format_rate(m.accuracy));
  }
}

void cmd_infer(const RunConfig& raw, const LogSink& log) {
  const RunConfig cfg = raw.resolved();
  if (cfg.input.empty()) throw ConfigError("infer needs an input image or directory");
  const fs::path input = cfg.input;
  std::vector<fs::path> images;
  if (fs::is_directory(input)) {
    images = io::list_images(input);
  } else if (fs::exists(input)) {
    images.push_back(input);
  } else {
    throw IoError("input not found: " + input.string());
  }
  if (images.empty()) throw DataError("no images in " + input.string());
  const Network net = load_checkpoint(cfg);
  prepare_run_dir(cfg, "infer");
  const fs::path run = cfg.run_dir();
  fs::create_directories(run / "predictions");

  struct Row {
    std::string name;
    ClassScores scores;
    int target = 0;
    std::size_t regions = 0;
  };
  std::vector<Row> rows(images.size());
  std::vector<Network> nets(static_cast<std::size_t>(cfg.jobs), net);
  parallel_for(images.size(), cfg.jobs, [&](int w, std::size_t i) {
    const fs::path& path = images[i];
    const std::string stem = path.stem().string();
    const Tensor gray = io::read_gray(path);
    const Explanation ex = explain(nets[static_cast<std::size_t>(w)], gray, cfg.target, cfg.fusion);
    const Tensor heat = method_heatmap(ex, cfg.method, cfg.fusion);
    const SegmentationResult seg = segment_heatmap(heat, cfg.threshold);

    const fs::path bundle = run / "heatmaps" / stem;
    fs::create_directories(bundle);
    write_map(bundle, "image", ex.fusion.image);
    for (std::size_t s = 0; s < ex.cg_cam.size(); ++s) {
      write_map(bundle, "stage" + std::to_string(s + 1) + "_cgcam", ex.cg_cam[s].values);
      write_map(bundle, "stage" + std::to_string(s + 1) + "_layercam", ex.layer_cam[s].values);
    }
    write_map(bundle, "m_cgcam", ex.fusion.cg_cam);
    write_map(bundle, "m_multi", ex.fusion.multi);
    write_map(bundle, "mask", ex.fusion.mask);
    write_map(bundle, "m_deep", ex.fusion.deep);
    write_map(bundle, "m_fusion", ex.fusion.fusion);
    write_map(bundle, std::string("heatmap_") + method_name(cfg.method), heat);

    io::write_mask(run / "predictions" / (stem + ".png"), seg.mask);
    std::optional<FdrResult> verdicts;
    if (!cfg.gt_dir.empty()) {
      const fs::path gt = fs::path(cfg.gt_dir) / path.filename();
      if (fs::exists(gt)) verdicts = fdr(seg, io::read_mask(gt), cfg.fdr);
    }
    write_overlay(run / "overlays" / (stem + ".png"), gray, seg, verdicts ? &*verdicts : nullptr);
    rows[i] = {stem, ex.scores, ex.target_class, seg.regions.size()};
  });

  std::ofstream csv(run / "reports" / "infer.csv");
  if (!csv) throw IoError("cannot write infer report");
  csv << "schema_version,image,logit_background,logit_damage,predicted,target,suppressed,regions\n";
  for (const auto& r : rows) {
    const int pred = r.scores.predicted();
    const bool suppressed = cfg.target == TargetMode::predicted && pred != kDamageClass;
    csv << kReportSchemaVersion << ',' << r.name << ',' << fmt_double(r.scores.logits[0]) << ','
        << fmt_double(r.scores.logits[1]) << ',' << pred << ',' << r.target << ',' << (suppressed ? 1 : 0) << ','
        << r.regions << '\n';
  }
  emit(log, "explained " + std::to_string(rows.size()) + " image(s) with " + method_name(cfg.method) + " into " +
                run.string());
}

void cmd_evaluate(const RunConfig& raw, const LogSink& log) {
  const RunConfig cfg = raw.resolved();
  if (cfg.gt_dir.empty()) throw ConfigError("evaluate needs gt_dir");
  const fs::path pred_dir = cfg.pred_dir.empty() ? cfg.run_dir() / "predictions" : fs::path(cfg.pred_dir);
  if (!fs::is_directory(pred_dir)) throw IoError("prediction directory not found: " + pred_dir.string());
  const auto items = load_eval_items(pred_dir, cfg.gt_dir);
  prepare_run_dir(cfg, "evaluate");
  std::vector<ImageReport> reports(items.size());
  parallel_for(items.size(), cfg.jobs, [&](int, std::size_t i) {
    Tensor pred = items[i].gray;
    for (auto& v : pred.storage()) v = v > 127.0 ? 1.0 : 0.0;
    reports[i] = evaluate_image(items[i].name, extract_regions(pred, 0), items[i].mask, cfg.fdr);
  });
  const EvalReport rep = aggregate(std::move(reports), cfg.fdr);
  const fs::path dir = cfg.run_dir() / "reports";
  write_report_csv(dir / "evaluation.csv", rep);
  write_report_json(dir / "evaluation.json", rep, report_settings(cfg));
  emit(log, "p-P " + format_rate(rep.pixels.precision) + "  p-R " + format_rate(rep.pixels.recall) + "  p-F1 " +
                format_rate(rep.pixels.f1) + "  IoU " + format_rate(rep.pixels.iou) + "  FDR " +
                format_rate(rep.fdr));
}

std::vector<AblationRow> cmd_ablate(const RunConfig& raw, const LogSink& log) {
  const RunConfig cfg = raw.resolved();
  const fs::path test = cfg.data_path() / "test";
  const auto items = load_eval_items(test / "damage", test / "masks" / "damage");
  const Network net = load_checkpoint(cfg);
  prepare_run_dir(cfg, "ablate");
  const std::vector<CamMethod> methods{CamMethod::layercam, CamMethod::cgcam, CamMethod::cgfusion};
  const auto reports = evaluate_methods(net, items, methods, cfg);

  auto label = [](CamMethod m) {
    switch (m) {
      case CamMethod::layercam: return "LayerCAM";
      case CamMethod::cgcam: return "CG-CAM";
      case CamMethod::cgfusion: return "CG-CAM+NM-Fusion";
      default: return "Grad-CAM";
    }
  };
  std::vector<AblationRow> rows;
  const fs::path dir = cfg.run_dir() / "reports";
  std::ofstream csv(dir / "ablation.csv");
  if (!csv) throw IoError("cannot write ablation table");
  csv << "method,p_precision,p_recall,p_f1,t_fdr,iou\n";
  nlohmann::ordered_json j;
  j["schema_version"] = kReportSchemaVersion;
  j["images"] = items.size();
  j["averaging"] = "micro";
  j["methods"] = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    rows.push_back({r.method, r.report.pixels, r.report.fdr});
    const auto& p = r.report.pixels;
    csv << label(r.method) << ',' << format_rate(p.precision) << ',' << format_rate(p.recall) << ','
        << format_rate(p.f1) << ',' << format_rate(r.report.fdr) << ',' << format_rate(p.iou) << '\n';
    j["methods"].push_back({{"method", label(r.method)},
                            {"key", method_name(r.method)},
                            {"p_precision", rate(p.precision)},
                            {"p_recall", rate(p.recall)},
                            {"p_f1", rate(p.f1)},
                            {"t_fdr", rate(r.report.fdr)},
                            {"iou", rate(p.iou)},
                            {"tp_regions", r.report.tp_regions},
                            {"fp_regions", r.report.fp_regions}});
    emit(log, std::string(label(r.method)) + "  p-P " + format_rate(p.precision) + "  p-R " +
                  format_rate(p.recall) + "  p-F1 " + format_rate(p.f1) + "  t-FDR " + format_rate(r.report.fdr) +
                  "  IoU " + format_rate(p.iou));
  }
  j["config"] = settings_json(cfg);
  std::ofstream os(dir / "ablation.json");
  os << j.dump(2) << '\n';
  return rows;
}

}  // namespace cgf
