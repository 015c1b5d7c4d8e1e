#include "cgfusion/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "cgfusion/errors.hpp"
#include "cgfusion/ops.hpp"

namespace cgf {
namespace {

constexpr char kCheckpointMagic[8] = {'C', 'G', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

Shape batched(const Shape& per_sample, int n) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.empty()) {
    write_pod<std::uint32_t>(os, 0);
    return;
  }
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) write_pod<std::int32_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.raw()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& is) {
  const auto rank = read_pod<std::uint32_t>(is);
  if (rank > 8) throw IoError("checkpoint: implausible tensor rank");
  if (rank == 0) return Tensor();  // parameterless layer
  Shape shape(rank);
  for (auto& d : shape) {
    d = read_pod<std::int32_t>(is);
    if (d < 0) throw IoError("checkpoint: negative extent");
  }
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw IoError("checkpoint truncated");
  return t;
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::avgpool2d: return "avgpool2d";
    case LayerKind::linear: return "linear";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

LayerNode LayerNode::conv(std::string name, int in_ch, int out_ch, int kernel, int stride,
                          int padding) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::conv2d;
  n.in_channels = in_ch;
  n.out_channels = out_ch;
  n.kernel = kernel;
  n.stride = stride;
  n.padding = padding;
  n.weight = Tensor({out_ch, in_ch, kernel, kernel});
  n.bias = Tensor({out_ch});
  return n;
}

LayerNode LayerNode::linear(std::string name, int in_f, int out_f) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::linear;
  n.in_channels = in_f;
  n.out_channels = out_f;
  n.weight = Tensor({out_f, in_f});
  n.bias = Tensor({out_f});
  return n;
}

LayerNode LayerNode::relu(std::string name) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::relu;
  return n;
}

LayerNode LayerNode::maxpool(std::string name, int kernel, int stride) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::maxpool2d;
  n.kernel = kernel;
  n.stride = stride;
  return n;
}

LayerNode LayerNode::avgpool(std::string name, int kernel, int stride) {
  LayerNode n = maxpool(std::move(name), kernel, stride);
  n.kind = LayerKind::avgpool2d;
  return n;
}

LayerNode LayerNode::flatten(std::string name) {
  LayerNode n;
  n.name = std::move(name);
  n.kind = LayerKind::flatten;
  return n;
}

void ParamGrads::accumulate(const ParamGrads& other) {
  if (weight.empty()) {
    *this = other;
    return;
  }
  if (other.weight.size() != weight.size()) throw ConfigError("ParamGrads layout mismatch");
  auto add = [](std::vector<Tensor>& dst, const std::vector<Tensor>& src) {
    for (std::size_t l = 0; l < dst.size(); ++l) {
      if (dst[l].size() != src[l].size()) throw ConfigError("ParamGrads layout mismatch");
      for (std::size_t i = 0; i < dst[l].size(); ++i) dst[l][i] += src[l][i];
    }
  };
  add(weight, other.weight);
  add(bias, other.bias);
}

void ParamGrads::scale(double factor) {
  for (auto* group : {&weight, &bias}) {
    for (Tensor& t : *group) {
      for (double& v : t.data()) v *= factor;
    }
  }
}

Network::Network(std::vector<LayerNode> layers, Shape input_shape)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)) {
  if (input_shape_.size() != 3) {
    throw ConfigError("network input shape must be C x H x W, got " + shape_string(input_shape_));
  }
  Shape cur = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerNode& l = layers_[i];
    const std::string where = "layer '" + l.name + "' (" + layer_kind_name(l.kind) + "): ";
    for (std::size_t j = 0; j < i; ++j) {
      if (layers_[j].name == l.name) throw ConfigError(where + "duplicate layer name");
    }
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (cur.size() != 3) throw ConfigError(where + "expects C x H x W input");
        if (cur[0] != l.in_channels) {
          throw ConfigError(where + "expects " + std::to_string(l.in_channels) +
                            " channels, receives " + std::to_string(cur[0]));
        }
        if (l.weight.shape() != Shape{l.out_channels, l.in_channels, l.kernel, l.kernel} ||
            l.bias.shape() != Shape{l.out_channels}) {
          throw ConfigError(where + "parameter shapes disagree with hyperparameters");
        }
        cur = {l.out_channels, ops::conv_output_extent(cur[1], l.kernel, l.stride, l.padding),
               ops::conv_output_extent(cur[2], l.kernel, l.stride, l.padding)};
        break;
      }
      case LayerKind::maxpool2d:
      case LayerKind::avgpool2d: {
        if (cur.size() != 3) throw ConfigError(where + "expects C x H x W input");
        if (l.kernel < 1 || l.stride < 1) throw ConfigError(where + "bad kernel/stride");
        for (int axis : {1, 2}) {
          const int e = cur[static_cast<std::size_t>(axis)];
          if (e < l.kernel || (e - l.kernel) % l.stride != 0) {
            throw ConfigError(where + "extent " + std::to_string(e) +
                              " not divisible into pooling windows");
          }
        }
        cur = {cur[0], (cur[1] - l.kernel) / l.stride + 1, (cur[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::relu:
        break;
      case LayerKind::flatten:
        cur = {static_cast<int>(shape_numel(cur))};
        break;
      case LayerKind::linear:
        if (cur.size() != 1) throw ConfigError(where + "expects flattened input");
        if (cur[0] != l.in_channels) {
          throw ConfigError(where + "expects " + std::to_string(l.in_channels) +
                            " features, receives " + std::to_string(cur[0]));
        }
        if (l.weight.shape() != Shape{l.out_channels, l.in_channels} ||
            l.bias.shape() != Shape{l.out_channels}) {
          throw ConfigError(where + "parameter shapes disagree with hyperparameters");
        }
        cur = {l.out_channels};
        break;
    }
    output_shapes_.push_back(cur);
  }
  if (layers_.empty() || cur.size() != 1) {
    throw ConfigError("network must end in a flat score vector");
  }
}

std::size_t Network::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw ConfigError("unknown layer id '" + name + "'");
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

void Network::set_input_normalization(double mean, double std_dev) {
  if (!std::isfinite(mean) || !(std_dev > 0.0) || !std::isfinite(std_dev)) {
    throw ConfigError("input normalization needs a finite mean and a positive std");
  }
  input_mean_ = mean;
  input_std_ = std_dev;
}

void Network::clear_forward_state() {
  forward_ready_ = false;
  layer_inputs_.clear();
  layer_outputs_.clear();
  argmax_.clear();
}

Tensor Network::forward(const Tensor& input) {
  Tensor x;
  if (input.shape() == input_shape_) {
    x = input.reshaped(batched(input_shape_, 1));
  } else if (input.rank() == 4 && Shape(input.shape().begin() + 1, input.shape().end()) ==
                                      input_shape_) {
    x = input;
  } else {
    throw ConfigError("network expects input " + shape_string(input_shape_) + ", got " +
                      shape_string(input.shape()));
  }
  if (input_mean_ != 0.0 || input_std_ != 1.0) {
    for (auto& v : x.storage()) v = (v - input_mean_) / input_std_;
  }
  clear_forward_state();
  layer_inputs_.reserve(layers_.size());
  argmax_.resize(layers_.size());
  Tensor out = forward_from(0, x);
  forward_ready_ = true;
  return out;
}

Tensor Network::forward_from(std::size_t start, const Tensor& layer_input) {
  forward_ready_ = false;
  if (start == 0) {
    layer_inputs_.clear();
    layer_outputs_.clear();
    argmax_.assign(layers_.size(), {});
  } else {
    // Partial passes are used for finite-difference probes only.
    layer_inputs_.clear();
    layer_outputs_.clear();
  }
  Tensor x = layer_input;
  const int n = x.dim(0);
  for (std::size_t i = start; i < layers_.size(); ++i) {
    const LayerNode& l = layers_[i];
    if (start == 0) layer_inputs_.push_back(x);
    switch (l.kind) {
      case LayerKind::conv2d:
        x = ops::conv2d_forward(x, l.weight, l.bias, l.stride, l.padding);
        break;
      case LayerKind::relu:
        x = ops::relu(x);
        break;
      case LayerKind::maxpool2d: {
        auto r = ops::maxpool2d_forward(x, l.kernel, l.stride);
        if (start == 0) argmax_[i] = std::move(r.argmax);
        x = std::move(r.output);
        break;
      }
      case LayerKind::avgpool2d:
        x = ops::avgpool2d(x, l.kernel, l.stride);
        break;
      case LayerKind::flatten:
        x = x.reshaped({n, static_cast<int>(x.size() / static_cast<std::size_t>(n))});
        break;
      case LayerKind::linear:
        x = ops::linear_forward(x, l.weight, l.bias);
        break;
    }
  }
  if (start == 0) layer_outputs_.push_back(x);
  return x;
}

BackwardResult Network::backward(const Tensor& grad_output, std::span<const std::string> captures,
                                  bool want_param_grads) {
  if (!forward_ready_) throw StateError("backward called without a retained forward pass");
  const Tensor& logits = layer_outputs_.back();
  if (grad_output.shape() != logits.shape()) {
    throw ConfigError("backward seed shape " + shape_string(grad_output.shape()) +
                      " does not match logits " + shape_string(logits.shape()));
  }

  std::vector<std::size_t> capture_idx;
  capture_idx.reserve(captures.size());
  for (const auto& id : captures) capture_idx.push_back(index_of(id));
  const std::size_t stop =
      want_param_grads
          ? 0
          : (capture_idx.empty() ? layers_.size()
                                 : *std::min_element(capture_idx.begin(), capture_idx.end()));

  BackwardResult result;
  result.captures.resize(captures.size());
  if (want_param_grads) {
    result.params.weight.resize(layers_.size());
    result.params.bias.resize(layers_.size());
  }

  auto output_of = [&](std::size_t i) -> const Tensor& {
    return i + 1 < layers_.size() ? layer_inputs_[i + 1] : layer_outputs_.back();
  };

  Tensor grad = grad_output;
  for (std::size_t i = layers_.size(); i-- > stop;) {
    const LayerNode& l = layers_[i];
    for (std::size_t c = 0; c < capture_idx.size(); ++c) {
      if (capture_idx[c] == i) {
        result.captures[c] = CaptureRecord{captures[c], output_of(i), grad};
      }
    }
    if (i == stop && (!want_param_grads || !l.has_params())) break;
    const Tensor& in = layer_inputs_[i];
    const bool need_input = i > stop;
    switch (l.kind) {
      case LayerKind::conv2d: {
        auto g = ops::conv2d_backward(in, l.weight, grad, l.stride, l.padding, need_input);
        if (want_param_grads) {
          result.params.weight[i] = std::move(g.weight);
          result.params.bias[i] = std::move(g.bias);
        }
        grad = std::move(g.input);
        break;
      }
      case LayerKind::relu:
        grad = ops::relu_backward(in, grad);
        break;
      case LayerKind::maxpool2d:
        grad = ops::maxpool2d_backward(grad, argmax_[i], in.shape());
        break;
      case LayerKind::avgpool2d:
        grad = ops::avgpool2d_backward(grad, in.shape(), l.kernel, l.stride);
        break;
      case LayerKind::flatten:
        grad = grad.reshaped(in.shape());
        break;
      case LayerKind::linear: {
        auto g = ops::linear_backward(in, l.weight, grad);
        if (want_param_grads) {
          result.params.weight[i] = std::move(g.weight);
          result.params.bias[i] = std::move(g.bias);
        }
        grad = std::move(g.input);
        break;
      }
    }
  }
  if (want_param_grads) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].has_params()) continue;
      if (result.params.weight[i].empty()) result.params.weight[i] = Tensor(layers_[i].weight.shape());
      if (result.params.bias[i].empty()) result.params.bias[i] = Tensor(layers_[i].bias.shape());
    }
  }
  return result;
}

void Network::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<std::uint32_t>(os, kCheckpointVersion);
  for (int d : input_shape_) write_pod<std::int32_t>(os, d);
  write_pod<double>(os, input_mean_);
  write_pod<double>(os, input_std_);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(l.name.size()));
    os.write(l.name.data(), static_cast<std::streamsize>(l.name.size()));
    write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(l.kind));
    for (int v : {l.in_channels, l.out_channels, l.kernel, l.stride, l.padding}) {
      write_pod<std::int32_t>(os, v);
    }
    write_tensor(os, l.weight);
    write_tensor(os, l.bias);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Network Network::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError(path.string() + " is not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Shape input(3);
  for (auto& d : input) d = read_pod<std::int32_t>(is);
  const auto mean = read_pod<double>(is);
  const auto sd = read_pod<double>(is);
  const auto count = read_pod<std::uint32_t>(is);
  if (count > 10000) throw IoError("checkpoint: implausible layer count");
  std::vector<LayerNode> layers(count);
  for (auto& l : layers) {
    const auto len = read_pod<std::uint32_t>(is);
    if (len > 4096) throw IoError("checkpoint: implausible layer name");
    l.name.resize(len);
    is.read(l.name.data(), len);
    const auto kind = read_pod<std::uint8_t>(is);
    if (kind > static_cast<std::uint8_t>(LayerKind::flatten)) throw IoError("checkpoint: bad layer kind");
    l.kind = static_cast<LayerKind>(kind);
    l.in_channels = read_pod<std::int32_t>(is);
    l.out_channels = read_pod<std::int32_t>(is);
    l.kernel = read_pod<std::int32_t>(is);
    l.stride = read_pod<std::int32_t>(is);
    l.padding = read_pod<std::int32_t>(is);
    l.weight = read_tensor(is);
    l.bias = read_tensor(is);
  }
  Network net(std::move(layers), std::move(input));
  net.set_input_normalization(mean, sd);
  return net;
}

void SgdOptimizer::step(Network& net, const ParamGrads& grads) {
  auto& layers = net.layers();
  if (grads.weight.size() != layers.size()) throw ConfigError("sgd: gradient layout mismatch");
  if (velocity_.weight.empty()) {
    velocity_.weight.resize(layers.size());
    velocity_.bias.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      velocity_.weight[i] = Tensor(layers[i].weight.shape());
      velocity_.bias[i] = Tensor(layers[i].bias.shape());
    }
  }
  auto update = [&](Tensor& param, const Tensor& g, Tensor& v) {
    for (std::size_t j = 0; j < param.size(); ++j) {
      v[j] = cfg_.momentum * v[j] + g[j] + cfg_.weight_decay * param[j];
      param[j] -= cfg_.learning_rate * v[j];
    }
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].has_params()) continue;
    update(layers[i].weight, grads.weight[i], velocity_.weight[i]);
    update(layers[i].bias, grads.bias[i], velocity_.bias[i]);
  }
}

}  // namespace cgf
