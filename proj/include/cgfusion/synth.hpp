#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "cgfusion/tensor.hpp"

// Synthetic dark-field imagery: bright Gaussian damage sites on a dark,
// unevenly lit background with stray-light artefacts, plus the crop /
// superimpose / flip steps that turn scenes into a classification dataset.
namespace cgf::synth {

struct DamageSite {
  double cx = 0.0, cy = 0.0;
  double radius = 5.0;  // radius of the labelled level set
  double peak = 150.0;  // gray levels above background at the centre
};

enum class StrayKind { streak, ghost_blob, edge_glow };

const char* stray_kind_name(StrayKind kind);
StrayKind parse_stray_kind(const std::string& name);

// streak:    segment centred at (cx, cy), `length` long at `angle`, Gaussian
//            cross-profile of std `width`.
// ghost_blob: ring of radius `length` and Gaussian thickness `width`.
// edge_glow: glow along the line through (cx, cy) with normal `angle`,
//            decaying exponentially with distance (length scale `width`).
//            Random scenes anchor it on the canvas border.
struct StrayElement {
  StrayKind kind = StrayKind::streak;
  double cx = 0.0, cy = 0.0;
  double length = 100.0;
  double angle = 0.0;
  double width = 2.0;
  double intensity = 60.0;
};

struct SceneSpec {
  int width = 1024;
  int height = 1024;
  std::vector<DamageSite> sites;
  std::vector<StrayElement> stray;
  double background = 10.0;
  double illumination = 6.0;  // amplitude of the low-frequency illumination ramp
  double noise_sigma = 2.0;
  double label_threshold = 30.0;  // damage contribution counted as ground truth
  std::uint64_t seed = 0;

  void validate() const;
};

struct Scene {
  Tensor image;  // H x W, integer gray levels in [0, 255]
  Tensor mask;   // H x W, {0, 1}
  Tensor stray;  // H x W, stray-light contribution before clipping
};

// Gaussian std of a site whose contribution falls to label_threshold at `radius`.
double site_sigma(const DamageSite& site, double label_threshold);

Scene generate_scene(const SceneSpec& spec);

inline constexpr int kDamageLabel = 1;
inline constexpr int kBackgroundLabel = 0;

struct LabeledCrop {
  Tensor image;  // window x window gray levels
  Tensor mask;
  int label = kBackgroundLabel;
  std::string name;
  int stray_pixels = 0;  // pixels with stray contribution above the label threshold
};

// Crops with >= label_min_pixels mask pixels are damage; crops without mask
// pixels are background; crops in between are dropped (`dropped` counts them).
std::vector<LabeledCrop> crop_sliding(const Scene& scene, int window = 128, int stride = 64,
                                      int label_min_pixels = 4, const std::string& prefix = "crop",
                                      double stray_threshold = 20.0, int* dropped = nullptr);

// Number of windows along one axis; throws ConfigError when window > extent.
int crop_count_1d(int extent, int window, int stride);

// Pixelwise max of a damage crop and a stray-light crop, clipped to [0, 255].
// Throws DataError when the damage crop has an empty mask.
LabeledCrop superimpose_augment(const LabeledCrop& damage_crop, const LabeledCrop& stray_crop);

// Flips image and mask together, horizontally and vertically, each with probability p.
void flip_augment(LabeledCrop& crop, double p, std::mt19937_64& rng);

struct SceneRandomization {
  int sites = 30;
  double min_radius = 2.0;
  double max_radius = 40.0;
  double min_peak = 90.0;
  double max_peak = 230.0;
  int stray_elements = 6;  // spread evenly over the three kinds
};

SceneSpec random_scene(const SceneRandomization& r, int width, int height, std::uint64_t seed);

struct DatasetConfig {
  std::uint64_t seed = 7;
  int canvas = 1024;
  int window = 128;
  int stride = 64;
  int label_min_pixels = 4;
  int scenes_per_split = 10;  // damage scenes; the same number of stray-only scenes is added
  SceneRandomization scene;
  int train_size = 1920;
  int test_size = 240;
  double damage_fraction = 0.5;
  double superimpose_fraction = 0.3;  // share of damage crops produced by superimposition
  int min_test_stray_pixels = 1;      // damage test crops must contain stray light

  void validate() const;
};

struct Dataset {
  std::vector<LabeledCrop> train;
  std::vector<LabeledCrop> test;
  std::vector<SceneSpec> scenes;  // every scene used, for the manifest
};

Dataset build_dataset(const DatasetConfig& cfg);

nlohmann::ordered_json scene_to_json(const SceneSpec& spec);

// Writes <root>/<split>/{damage,background}/*.png, the masks/ mirror
// <root>/<split>/masks/{damage,background}/*.png and <root>/manifest.json.
void write_dataset(const std::filesystem::path& root, const Dataset& data, const DatasetConfig& cfg);

}  // namespace cgf::synth
