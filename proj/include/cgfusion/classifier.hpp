#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cgfusion/network.hpp"

namespace cgf {

// Class indices of the two-logit head. Damage is the positive class.
inline constexpr int kBackgroundClass = 0;
inline constexpr int kDamageClass = 1;
inline constexpr int kNumClasses = 2;

struct StageSpec {
  int conv_layers = 2;
  int width = 8;
};

// VGG-shaped staged classifier: every stage is `conv_layers` x (3x3 conv +
// ReLU) followed by one 2x2/2 max-pool; head is flatten -> linear -> ReLU ->
// linear(2).
struct NetworkSpec {
  std::vector<StageSpec> stages{{2, 8}, {2, 16}, {3, 32}, {3, 64}, {3, 64}};
  int input_channels = 1;
  int input_size = 128;
  int hidden_units = 64;
  // The network sees (value / 255 - input_mean) / input_std.
  double input_mean = 0.06;
  double input_std = 0.1;

  static NetworkSpec full_width();  // VGG-16 widths 64..512
  void validate() const;
};

// Layer name of the rectified output of stage `stage` (1-based), i.e. the
// feature map the stage's max-pool consumes.
std::string stage_capture_id(const NetworkSpec& spec, int stage);

// He-normal conv/linear weights, zero biases, from a seeded generator.
Network build_network(const NetworkSpec& spec, std::uint64_t seed);

// Recovers the stage layout from a network built by build_network.
NetworkSpec infer_spec(const Network& net);

// Accepts "stage<i>" aliases as well as literal layer names.
std::string resolve_capture_id(const Network& net, const std::string& id);

struct TrainConfig {
  double learning_rate = 1e-3;
  int lr_decay_epoch = 20;  // multiply by lr_decay_factor once this epoch is reached
  double lr_decay_factor = 0.1;
  int batch_size = 32;
  int epochs = 30;
  double flip_probability = 0.5;
  std::uint64_t seed = 1;
  double momentum = 0.9;
  double weight_decay = 0.0;

  void validate() const;
};

struct Sample {
  Tensor image;  // 1 x H x W, gray / 255
  int label = kBackgroundClass;
  std::string name;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  Network network;
  std::vector<EpochLog> log;
};

// Flips the last two axes of `image` in place: horizontally and vertically,
// each independently with probability p.
void random_flip(Tensor& image, double p, std::mt19937_64& rng);

using EpochCallback = std::function<void(const EpochLog&)>;

// Mini-batch SGD on softmax cross-entropy. Deterministic for a given seed.
TrainResult train(const std::vector<Sample>& dataset, const NetworkSpec& spec,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});
// Same loop, continuing from an existing network.
std::vector<EpochLog> train_network(Network& net, const std::vector<Sample>& dataset,
                                    const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct ClassScores {
  std::vector<double> logits;  // pre-softmax
  int predicted() const;
};

struct CaptureResult {
  ClassScores scores;
  int target_class = kDamageClass;
  std::vector<CaptureRecord> records;  // activations / gradients as C x H x W
};

// Forward pass, then backward from the pre-softmax score of `target_class`
// (predicted class when unset), capturing the listed layers.
CaptureResult classify_with_capture(Network& net, const Tensor& image,
                                    const std::vector<std::string>& capture_layers,
                                    std::optional<int> target_class = std::nullopt);

ClassScores classify(Network& net, const Tensor& image);

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

// Rates with a zero denominator are left empty (reported as NA).
struct ClassificationMetrics {
  ConfusionCounts counts;
  std::optional<double> accuracy, precision, recall, fpr, f1;
};

ClassificationMetrics classification_metrics(const std::vector<int>& predictions,
                                             const std::vector<int>& labels);

// Loads <root>/{damage,background}/*.png|pgm as 1 x H x W samples in sorted
// file order. Throws DataError when a class directory is missing or empty.
std::vector<Sample> load_dataset(const std::filesystem::path& root);

}  // namespace cgf
