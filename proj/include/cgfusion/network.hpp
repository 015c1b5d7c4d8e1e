#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cgfusion/tensor.hpp"

namespace cgf {

enum class LayerKind : std::uint8_t { conv2d, relu, maxpool2d, avgpool2d, linear, flatten };

const char* layer_kind_name(LayerKind kind);

struct LayerNode {
  std::string name;
  LayerKind kind = LayerKind::relu;
  // conv2d: in/out channels; linear: in/out features.
  int in_channels = 0;
  int out_channels = 0;
  // conv2d and pooling.
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  Tensor weight;
  Tensor bias;

  bool has_params() const noexcept {
    return kind == LayerKind::conv2d || kind == LayerKind::linear;
  }

  static LayerNode conv(std::string name, int in_ch, int out_ch, int kernel, int stride,
                        int padding);
  static LayerNode linear(std::string name, int in_f, int out_f);
  static LayerNode relu(std::string name);
  static LayerNode maxpool(std::string name, int kernel, int stride);
  static LayerNode avgpool(std::string name, int kernel, int stride);
  static LayerNode flatten(std::string name);
};

// Gradients of every learnable tensor, indexed like Network::layers().
// Layers without parameters hold empty tensors.
struct ParamGrads {
  std::vector<Tensor> weight;
  std::vector<Tensor> bias;

  void accumulate(const ParamGrads& other);
  void scale(double factor);
};

// Feature maps A^k of one layer together with d(seed . output)/dA^k.
struct CaptureRecord {
  std::string layer_id;
  Tensor activations;
  Tensor gradients;
};

struct BackwardResult {
  ParamGrads params;
  std::vector<CaptureRecord> captures;
};

// Sequential network over the fixed layer vocabulary. An instance retains the
// intermediate values of its last forward pass, so forward -> backward must not
// be interleaved across threads; distinct instances are independent.
class Network {
 public:
  Network() = default;
  // Validates every layer against the propagated shape of `input_shape`
  // (C x H x W). Pool windows must tile their input exactly.
  Network(std::vector<LayerNode> layers, Shape input_shape);

  const std::vector<LayerNode>& layers() const noexcept { return layers_; }
  std::vector<LayerNode>& layers() noexcept { return layers_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  // Per-sample output shape of each layer (without the batch axis).
  const std::vector<Shape>& layer_output_shapes() const noexcept { return output_shapes_; }

  // Index of the layer called `name`; throws ConfigError when unknown.
  std::size_t index_of(const std::string& name) const;

  // forward() feeds (x - mean) / std to the first layer.
  void set_input_normalization(double mean, double std_dev);
  double input_mean() const noexcept { return input_mean_; }
  double input_std() const noexcept { return input_std_; }

  // Accepts C x H x W or N x C x H x W; returns N x K logits.
  Tensor forward(const Tensor& input);
  // Continues a forward pass from layer `start` given that layer's input.
  // Leaves the retained state unusable for backward.
  Tensor forward_from(std::size_t start, const Tensor& layer_input);

  // `grad_output` is d(scalar)/d(logits) for the most recent forward pass.
  // Throws StateError when no forward state is retained.
  BackwardResult backward(const Tensor& grad_output, std::span<const std::string> captures = {},
                          bool want_param_grads = true);

  bool has_forward_state() const noexcept { return forward_ready_; }
  void clear_forward_state();

  std::size_t parameter_count() const;

  // Binary checkpoint, version 1: "CGFCKPT\0", u32 version, i32 C/H/W,
  // f64 input mean/std, u32 layer count, then per layer: u32 name length,
  // name, u8 kind, i32 in/out channels, kernel, stride, padding, weight and
  // bias tensors (u32 rank, i32 extents, f64 values; rank 0 = absent).
  // Little-endian throughout.
  void save(const std::filesystem::path& path) const;
  static Network load(const std::filesystem::path& path);

 private:
  std::vector<LayerNode> layers_;
  Shape input_shape_;
  double input_mean_ = 0.0;
  double input_std_ = 1.0;
  std::vector<Shape> output_shapes_;

  bool forward_ready_ = false;
  std::vector<Tensor> layer_inputs_;
  std::vector<Tensor> layer_outputs_;
  std::vector<std::vector<std::size_t>> argmax_;
};

struct SgdConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

// Heavy-ball SGD: v = m*v + (g + wd*w); w -= lr*v.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig cfg) : cfg_(cfg) {}
  void set_learning_rate(double lr) noexcept { cfg_.learning_rate = lr; }
  double learning_rate() const noexcept { return cfg_.learning_rate; }
  void step(Network& net, const ParamGrads& grads);

 private:
  SgdConfig cfg_;
  ParamGrads velocity_;
};

}  // namespace cgf
