#include "cgfusion/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "cgfusion/errors.hpp"
#include "cgfusion/image_io.hpp"

namespace cgf::synth {
namespace {

namespace fs = std::filesystem;

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 over the combined key
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (a * 1000003ULL + b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx), dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

void add_stray(Tensor& stray, const StrayElement& e) {
  const int h = stray.height(), w = stray.width();
  auto box = [&](double x0, double y0, double x1, double y1, auto&& fn) {
    const int bx0 = std::max(0, static_cast<int>(std::floor(x0)));
    const int by0 = std::max(0, static_cast<int>(std::floor(y0)));
    const int bx1 = std::min(w - 1, static_cast<int>(std::ceil(x1)));
    const int by1 = std::min(h - 1, static_cast<int>(std::ceil(y1)));
    for (int y = by0; y <= by1; ++y) {
      for (int x = bx0; x <= bx1; ++x) stray.at(y, x) += fn(x + 0.0, y + 0.0);
    }
  };
  switch (e.kind) {
    case StrayKind::streak: {
      const double hx = 0.5 * e.length * std::cos(e.angle), hy = 0.5 * e.length * std::sin(e.angle);
      const double ax = e.cx - hx, ay = e.cy - hy, bx = e.cx + hx, by = e.cy + hy;
      const double reach = 5.0 * e.width;
      box(std::min(ax, bx) - reach, std::min(ay, by) - reach, std::max(ax, bx) + reach,
          std::max(ay, by) + reach, [&](double x, double y) {
            const double d = segment_distance(x, y, ax, ay, bx, by);
            return e.intensity * std::exp(-d * d / (2.0 * e.width * e.width));
          });
      break;
    }
    case StrayKind::ghost_blob: {
      const double reach = e.length + 5.0 * e.width;
      box(e.cx - reach, e.cy - reach, e.cx + reach, e.cy + reach, [&](double x, double y) {
        const double r = std::hypot(x - e.cx, y - e.cy) - e.length;
        return e.intensity * std::exp(-r * r / (2.0 * e.width * e.width));
      });
      break;
    }
    case StrayKind::edge_glow: {
      const double nx = std::cos(e.angle), ny = std::sin(e.angle);
      box(0, 0, w - 1, h - 1, [&](double x, double y) {
        const double d = (x - e.cx) * nx + (y - e.cy) * ny;
        return e.intensity * std::exp(-std::abs(d) / e.width);
      });
      break;
    }
  }
}

int count_stray(const Tensor& stray, int y0, int x0, int window, double threshold) {
  int n = 0;
  for (int y = y0; y < y0 + window; ++y) {
    for (int x = x0; x < x0 + window; ++x) n += stray.at(y, x) > threshold ? 1 : 0;
  }
  return n;
}

Tensor sub_image(const Tensor& t, int y0, int x0, int window) {
  Tensor out({window, window});
  for (int y = 0; y < window; ++y) {
    for (int x = 0; x < window; ++x) out.at(y, x) = t.at(y0 + y, x0 + x);
  }
  return out;
}

void flip_tensor(Tensor& t, bool horizontal, bool vertical) {
  const int h = t.height(), w = t.width();
  if (horizontal) {
    for (int y = 0; y < h; ++y) std::reverse(t.raw() + static_cast<std::size_t>(y) * w, t.raw() + static_cast<std::size_t>(y + 1) * w);
  }
  if (vertical) {
    for (int y = 0; y < h / 2; ++y) {
      std::swap_ranges(t.raw() + static_cast<std::size_t>(y) * w, t.raw() + static_cast<std::size_t>(y + 1) * w,
                       t.raw() + static_cast<std::size_t>(h - 1 - y) * w);
    }
  }
}

int mask_area(const Tensor& m) {
  int n = 0;
  for (double v : m.data()) n += v > 0.5 ? 1 : 0;
  return n;
}

}  // namespace

const char* stray_kind_name(StrayKind kind) {
  switch (kind) {
    case StrayKind::streak: return "streak";
    case StrayKind::ghost_blob: return "ghost-blob";
    case StrayKind::edge_glow: return "edge-glow";
  }
  return "?";
}

StrayKind parse_stray_kind(const std::string& name) {
  if (name == "streak") return StrayKind::streak;
  if (name == "ghost-blob") return StrayKind::ghost_blob;
  if (name == "edge-glow") return StrayKind::edge_glow;
  throw ConfigError("unknown stray-light kind '" + name + "'");
}

void SceneSpec::validate() const {
  if (width < 1 || height < 1) throw ConfigError("scene extent must be positive");
  if (!(label_threshold > 0.0)) throw ConfigError("label threshold must be positive");
  if (noise_sigma < 0.0) throw ConfigError("noise sigma must be non-negative");
  auto in_gray = [](double v) { return v >= 0.0 && v <= 255.0; };
  if (!in_gray(background)) throw ConfigError("background level outside [0, 255]");
  for (const auto& s : sites) {
    if (!in_gray(s.peak) || !(s.peak > label_threshold)) {
      throw ConfigError("site peak must lie in (label_threshold, 255]");
    }
    if (!(s.radius > 0.0)) throw ConfigError("site radius must be positive");
    if (s.cx < 0 || s.cy < 0 || s.cx > width - 1 || s.cy > height - 1) {
      throw ConfigError("damage site centre outside the canvas");
    }
  }
  for (const auto& e : stray) {
    if (!in_gray(e.intensity)) throw ConfigError("stray intensity outside [0, 255]");
    if (!(e.width > 0.0) || e.length < 0.0) throw ConfigError("stray geometry must be positive");
  }
}

double site_sigma(const DamageSite& site, double label_threshold) {
  return site.radius / std::sqrt(2.0 * std::log(site.peak / label_threshold));
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const int h = spec.height, w = spec.width;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double ramp_angle = 2.0 * std::numbers::pi * uni(rng);
  const double rc = std::cos(ramp_angle), rs = std::sin(ramp_angle);

  Scene scene{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
  for (const auto& e : spec.stray) add_stray(scene.stray, e);

  Tensor damage({h, w});
  for (const auto& s : spec.sites) {
    const double sigma = site_sigma(s, spec.label_threshold);
    // Contribution drops below 0.25 gray level past this distance.
    const double reach = sigma * std::sqrt(2.0 * std::log(s.peak / 0.25));
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - reach)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(s.cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - reach)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(s.cy + reach)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double r2 = (x - s.cx) * (x - s.cx) + (y - s.cy) * (y - s.cy);
        const double v = s.peak * std::exp(-r2 / (2.0 * sigma * sigma));
        damage.at(y, x) = std::max(damage.at(y, x), v);
      }
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  const double diag = static_cast<double>(w + h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ramp = spec.illumination * (0.5 + ((x * rc + y * rs) / diag));
      double v = spec.background + ramp + scene.stray.at(y, x) + damage.at(y, x);
      if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
      scene.image.at(y, x) = std::clamp(std::round(v), 0.0, 255.0);
      scene.mask.at(y, x) = damage.at(y, x) > spec.label_threshold ? 1.0 : 0.0;
    }
  }
  return scene;
}

int crop_count_1d(int extent, int window, int stride) {
  if (window < 1 || stride < 1) throw ConfigError("crop window and stride must be positive");
  if (window > extent) {
    throw ConfigError("crop window " + std::to_string(window) + " exceeds image extent " + std::to_string(extent));
  }
  return (extent - window) / stride + 1;
}

std::vector<LabeledCrop> crop_sliding(const Scene& scene, int window, int stride, int label_min_pixels,
                                      const std::string& prefix, double stray_threshold, int* dropped) {
  const int ny = crop_count_1d(scene.image.height(), window, stride);
  const int nx = crop_count_1d(scene.image.width(), window, stride);
  if (label_min_pixels < 1) throw ConfigError("label threshold must be at least one pixel");
  std::vector<LabeledCrop> out;
  int skipped = 0;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const int y0 = iy * stride, x0 = ix * stride;
      LabeledCrop c;
      c.image = sub_image(scene.image, y0, x0, window);
      c.mask = sub_image(scene.mask, y0, x0, window);
      const int area = mask_area(c.mask);
      if (area > 0 && area < label_min_pixels) {
        ++skipped;
        continue;
      }
      c.label = area > 0 ? kDamageLabel : kBackgroundLabel;
      c.name = prefix + "_y" + std::to_string(y0) + "_x" + std::to_string(x0);
      c.stray_pixels = scene.stray.empty() ? 0 : count_stray(scene.stray, y0, x0, window, stray_threshold);
      out.push_back(std::move(c));
    }
  }
  if (dropped) *dropped = skipped;
  return out;
}

LabeledCrop superimpose_augment(const LabeledCrop& damage_crop, const LabeledCrop& stray_crop) {
  if (damage_crop.image.shape() != stray_crop.image.shape()) {
    throw ConfigError("superimpose: crop sizes differ");
  }
  if (mask_area(damage_crop.mask) == 0) {
    throw DataError("superimpose: '" + damage_crop.name + "' has no damage pixels");
  }
  LabeledCrop out;
  out.image = Tensor(damage_crop.image.shape());
  for (std::size_t i = 0; i < out.image.size(); ++i) {
    out.image[i] = std::clamp(std::max(damage_crop.image[i], stray_crop.image[i]), 0.0, 255.0);
  }
  out.mask = damage_crop.mask;
  out.label = kDamageLabel;
  out.name = damage_crop.name + "+" + stray_crop.name;
  out.stray_pixels = stray_crop.stray_pixels;
  return out;
}

void flip_augment(LabeledCrop& crop, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool fh = u(rng) < p;
  const bool fv = u(rng) < p;
  flip_tensor(crop.image, fh, fv);
  flip_tensor(crop.mask, fh, fv);
}

SceneSpec random_scene(const SceneRandomization& r, int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };
  SceneSpec s;
  s.width = width;
  s.height = height;
  s.seed = mix_seed(seed, 17, 0);
  for (int i = 0; i < r.sites; ++i) {
    DamageSite d;
    // log-uniform radius so small sites are as common as large ones per octave
    d.radius = std::exp(range(std::log(r.min_radius), std::log(r.max_radius)));
    d.cx = range(0.0, width - 1.0);
    d.cy = range(0.0, height - 1.0);
    d.peak = range(r.min_peak, r.max_peak);
    s.sites.push_back(d);
  }
  for (int i = 0; i < r.stray_elements; ++i) {
    StrayElement e;
    e.kind = static_cast<StrayKind>(i % 3);
    e.cx = range(0.0, width - 1.0);
    e.cy = range(0.0, height - 1.0);
    e.angle = range(0.0, 2.0 * std::numbers::pi);
    switch (e.kind) {
      case StrayKind::streak:
        e.length = range(150.0, 600.0);
        e.width = range(1.5, 4.0);
        e.intensity = range(40.0, 110.0);
        break;
      case StrayKind::ghost_blob:
        e.length = range(15.0, 50.0);
        e.width = range(2.5, 6.0);
        e.intensity = range(30.0, 90.0);
        break;
      case StrayKind::edge_glow: {
        // Anchored on a canvas border, glowing inwards with a slight tilt.
        const int side = static_cast<int>(uni(rng) * 4.0) % 4;
        const double along = range(0.0, 1.0);
        const double tilt = range(-0.3, 0.3);
        const double inward[4] = {std::numbers::pi / 2, std::numbers::pi, -std::numbers::pi / 2, 0.0};
        e.cx = side == 1 ? width - 1.0 : side == 3 ? 0.0 : along * (width - 1.0);
        e.cy = side == 2 ? height - 1.0 : side == 0 ? 0.0 : along * (height - 1.0);
        e.angle = inward[side] + tilt;
        e.length = 0.0;
        e.width = range(8.0, 30.0);
        e.intensity = range(30.0, 90.0);
        break;
      }
    }
    s.stray.push_back(e);
  }
  return s;
}

void DatasetConfig::validate() const {
  if (scenes_per_split < 1) throw ConfigError("need at least one scene per split");
  if (train_size < 2 || test_size < 2) throw ConfigError("train/test sizes must be >= 2");
  if (!(damage_fraction > 0.0 && damage_fraction < 1.0)) throw ConfigError("damage fraction must lie in (0, 1)");
  if (!(superimpose_fraction >= 0.0 && superimpose_fraction <= 1.0)) {
    throw ConfigError("superimpose fraction must lie in [0, 1]");
  }
  if (scene.min_radius <= 0.0 || scene.max_radius < scene.min_radius) throw ConfigError("bad radius range");
  crop_count_1d(canvas, window, stride);
}

Dataset build_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset data;
  for (int split = 0; split < 2; ++split) {
    const std::string split_name = split == 0 ? "train" : "test";
    std::mt19937_64 rng(mix_seed(cfg.seed, 100 + split, 0));
    std::vector<LabeledCrop> damage, background, stray_src;
    for (int s = 0; s < cfg.scenes_per_split; ++s) {
      SceneSpec spec = random_scene(cfg.scene, cfg.canvas, cfg.canvas, mix_seed(cfg.seed, split, s));
      const Scene scene = generate_scene(spec);
      for (auto& c : crop_sliding(scene, cfg.window, cfg.stride, cfg.label_min_pixels,
                                  split_name + "_d" + std::to_string(s), spec.label_threshold)) {
        (c.label == kDamageLabel ? damage : background).push_back(std::move(c));
      }
      data.scenes.push_back(std::move(spec));
    }
    for (int s = 0; s < cfg.scenes_per_split; ++s) {
      SceneRandomization stray_only = cfg.scene;
      stray_only.sites = 0;
      stray_only.stray_elements = cfg.scene.stray_elements * 2;
      SceneSpec spec = random_scene(stray_only, cfg.canvas, cfg.canvas, mix_seed(cfg.seed, split, 1000 + s));
      const Scene scene = generate_scene(spec);
      for (auto& c : crop_sliding(scene, cfg.window, cfg.stride, cfg.label_min_pixels,
                                  split_name + "_s" + std::to_string(s), spec.label_threshold)) {
        if (c.stray_pixels > 0) stray_src.push_back(c);
        background.push_back(std::move(c));
      }
      data.scenes.push_back(std::move(spec));
    }

    const int size = split == 0 ? cfg.train_size : cfg.test_size;
    const int n_damage = static_cast<int>(std::lround(size * cfg.damage_fraction));
    const int n_background = size - n_damage;
    int n_super = static_cast<int>(std::lround(n_damage * cfg.superimpose_fraction));

    std::shuffle(damage.begin(), damage.end(), rng);
    std::shuffle(background.begin(), background.end(), rng);
    std::shuffle(stray_src.begin(), stray_src.end(), rng);

    std::vector<LabeledCrop> plain;
    std::vector<LabeledCrop> super_base;
    for (auto& c : damage) {
      const bool qualifies = split == 0 || c.stray_pixels >= cfg.min_test_stray_pixels;
      if (qualifies && static_cast<int>(plain.size()) < n_damage - n_super) {
        plain.push_back(std::move(c));
      } else {
        super_base.push_back(std::move(c));
      }
    }
    // Top up with superimposed crops when too few plain crops qualified.
    n_super = n_damage - static_cast<int>(plain.size());
    if (n_super > static_cast<int>(super_base.size()) || (n_super > 0 && stray_src.empty())) {
      throw DataError(split_name + " split: not enough damage crops for " + std::to_string(n_damage) +
                      " samples; raise scenes_per_split");
    }
    if (n_background > static_cast<int>(background.size())) {
      throw DataError(split_name + " split: not enough background crops for " + std::to_string(n_background) +
                      " samples; raise scenes_per_split");
    }
    std::vector<LabeledCrop>& out = split == 0 ? data.train : data.test;
    for (auto& c : plain) out.push_back(std::move(c));
    for (int i = 0; i < n_super; ++i) {
      const auto& src = stray_src[static_cast<std::size_t>(i) % stray_src.size()];
      out.push_back(superimpose_augment(super_base[static_cast<std::size_t>(i)], src));
    }
    for (int i = 0; i < n_background; ++i) out.push_back(std::move(background[static_cast<std::size_t>(i)]));
  }
  return data;
}

nlohmann::ordered_json scene_to_json(const SceneSpec& spec) {
  nlohmann::ordered_json j;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["background"] = spec.background;
  j["illumination"] = spec.illumination;
  j["noise_sigma"] = spec.noise_sigma;
  j["label_threshold"] = spec.label_threshold;
  j["seed"] = spec.seed;
  nlohmann::ordered_json sites = nlohmann::ordered_json::array();
  for (const auto& s : spec.sites) {
    sites.push_back({{"cx", s.cx}, {"cy", s.cy}, {"radius", s.radius}, {"peak", s.peak}});
  }
  j["sites"] = sites;
  nlohmann::ordered_json stray = nlohmann::ordered_json::array();
  for (const auto& e : spec.stray) {
    stray.push_back({{"kind", stray_kind_name(e.kind)}, {"cx", e.cx}, {"cy", e.cy}, {"length", e.length},
                     {"angle", e.angle}, {"width", e.width}, {"intensity", e.intensity}});
  }
  j["stray"] = stray;
  return j;
}

void write_dataset(const fs::path& root, const Dataset& data, const DatasetConfig& cfg) {
  for (const auto& [split, crops] : {std::pair<const char*, const std::vector<LabeledCrop>*>{"train", &data.train},
                                     std::pair<const char*, const std::vector<LabeledCrop>*>{"test", &data.test}}) {
    for (const char* cls : {"damage", "background"}) {
      fs::create_directories(root / split / cls);
      fs::create_directories(root / split / "masks" / cls);
    }
    for (const auto& c : *crops) {
      const char* cls = c.label == kDamageLabel ? "damage" : "background";
      const std::string file = c.name + ".png";
      io::write_gray(root / split / cls / file, c.image);
      io::write_mask(root / split / "masks" / cls / file, c.mask);
    }
  }
  nlohmann::ordered_json m;
  m["manifest_version"] = 1;
  m["seed"] = cfg.seed;
  m["canvas"] = cfg.canvas;
  m["window"] = cfg.window;
  m["stride"] = cfg.stride;
  m["label_min_pixels"] = cfg.label_min_pixels;
  m["train_size"] = data.train.size();
  m["test_size"] = data.test.size();
  m["damage_fraction"] = cfg.damage_fraction;
  m["superimpose_fraction"] = cfg.superimpose_fraction;
  nlohmann::ordered_json scenes = nlohmann::ordered_json::array();
  for (const auto& s : data.scenes) scenes.push_back(scene_to_json(s));
  m["scenes"] = scenes;
  std::ofstream os(root / "manifest.json");
  if (!os) throw IoError("cannot write manifest in " + root.string());
  os << m.dump(2) << '\n';
}

}  // namespace cgf::synth
