#include "cgfusion/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cgfusion/errors.hpp"
#include "cgfusion/image_io.hpp"
#include "cgfusion/ops.hpp"

namespace cgf {
namespace {

std::string stage_prefix(int stage) { return "stage" + std::to_string(stage); }

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

NetworkSpec NetworkSpec::full_width() {
  NetworkSpec s;
  s.stages = {{2, 64}, {2, 128}, {3, 256}, {3, 512}, {3, 512}};
  s.hidden_units = 4096;
  return s;
}

void NetworkSpec::validate() const {
  if (stages.empty()) throw ConfigError("network needs at least one stage");
  for (const auto& st : stages) {
    if (st.conv_layers < 1 || st.width < 1) throw ConfigError("stage conv count and width must be positive");
  }
  if (input_channels < 1 || hidden_units < 1) throw ConfigError("input channels and hidden units must be positive");
  if (!std::isfinite(input_mean) || !(input_std > 0.0)) throw ConfigError("input std must be positive");
  if (input_size < 1 || input_size % (1 << stages.size()) != 0) {
    throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by 2^" +
                      std::to_string(stages.size()));
  }
}

std::string stage_capture_id(const NetworkSpec& spec, int stage) {
  if (stage < 1 || stage > static_cast<int>(spec.stages.size())) {
    throw ConfigError("no stage " + std::to_string(stage));
  }
  return stage_prefix(stage) + ".relu" +
         std::to_string(spec.stages[static_cast<std::size_t>(stage - 1)].conv_layers);
}

Network build_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::vector<LayerNode> layers;
  int ch = spec.input_channels;
  int extent = spec.input_size;

  auto he_init = [&rng](Tensor& w, int fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (double& v : w.data()) v = dist(rng);
  };

  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    const std::string p = stage_prefix(static_cast<int>(s) + 1);
    for (int c = 1; c <= spec.stages[s].conv_layers; ++c) {
      LayerNode conv = LayerNode::conv(p + ".conv" + std::to_string(c), ch, spec.stages[s].width, 3, 1, 1);
      he_init(conv.weight, ch * 9);
      layers.push_back(std::move(conv));
      layers.push_back(LayerNode::relu(p + ".relu" + std::to_string(c)));
      ch = spec.stages[s].width;
    }
    layers.push_back(LayerNode::maxpool(p + ".pool", 2, 2));
    extent /= 2;
  }
  const int features = ch * extent * extent;
  layers.push_back(LayerNode::flatten("flatten"));
  LayerNode fc1 = LayerNode::linear("fc1", features, spec.hidden_units);
  he_init(fc1.weight, features);
  layers.push_back(std::move(fc1));
  layers.push_back(LayerNode::relu("fc1.relu"));
  LayerNode fc2 = LayerNode::linear("fc2", spec.hidden_units, kNumClasses);
  he_init(fc2.weight, spec.hidden_units);
  layers.push_back(std::move(fc2));
  Network net(std::move(layers), {spec.input_channels, spec.input_size, spec.input_size});
  net.set_input_normalization(spec.input_mean, spec.input_std);
  return net;
}

NetworkSpec infer_spec(const Network& net) {
  NetworkSpec spec;
  spec.stages.clear();
  spec.input_channels = net.input_shape()[0];
  spec.input_size = net.input_shape()[1];
  spec.input_mean = net.input_mean();
  spec.input_std = net.input_std();
  for (const auto& l : net.layers()) {
    if (l.kind == LayerKind::conv2d) {
      const std::string prefix = l.name.substr(0, l.name.find('.'));
      const int stage = prefix.rfind("stage", 0) == 0 ? std::atoi(prefix.c_str() + 5) : 0;
      if (stage < 1) throw ConfigError("checkpoint layer '" + l.name + "' is not a staged conv layer");
      if (static_cast<int>(spec.stages.size()) < stage) spec.stages.push_back({0, l.out_channels});
      spec.stages.back().conv_layers += 1;
      spec.stages.back().width = l.out_channels;
    } else if (l.name == "fc1") {
      spec.hidden_units = l.out_channels;
    }
  }
  if (spec.stages.empty()) throw ConfigError("checkpoint has no convolutional stages");
  return spec;
}

std::string resolve_capture_id(const Network& net, const std::string& id) {
  if (id.rfind("stage", 0) == 0 && id.find('.') == std::string::npos) {
    const NetworkSpec spec = infer_spec(net);
    int stage = 0;
    try {
      stage = std::stoi(id.substr(5));
    } catch (const std::exception&) {
      throw ConfigError("unknown layer id '" + id + "'");
    }
    return stage_capture_id(spec, stage);
  }
  net.index_of(id);
  return id;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (batch_size < 1 || epochs < 1) throw ConfigError("batch size and epochs must be positive");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ConfigError("flip probability must lie in [0, 1]");
  }
  if (!(lr_decay_factor > 0.0) || lr_decay_epoch < 0) throw ConfigError("bad learning-rate decay");
  if (momentum < 0.0 || weight_decay < 0.0) throw ConfigError("momentum and weight decay must be non-negative");
}

void random_flip(Tensor& image, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const bool flip_h = u(rng) < p;
  const bool flip_v = u(rng) < p;
  if (!flip_h && !flip_v) return;
  const int h = image.height();
  const int w = image.width();
  const std::size_t planes = image.size() / (static_cast<std::size_t>(h) * w);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    double* d = image.raw() + pl * h * w;
    if (flip_h) {
      for (int y = 0; y < h; ++y) std::reverse(d + static_cast<std::size_t>(y) * w, d + static_cast<std::size_t>(y + 1) * w);
    }
    if (flip_v) {
      for (int y = 0; y < h / 2; ++y) {
        std::swap_ranges(d + static_cast<std::size_t>(y) * w, d + static_cast<std::size_t>(y + 1) * w,
                         d + static_cast<std::size_t>(h - 1 - y) * w);
      }
    }
  }
}

std::vector<EpochLog> train_network(Network& net, const std::vector<Sample>& dataset,
                                    const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  bool has_pos = false, has_neg = false;
  for (const auto& s : dataset) {
    if (s.label == kDamageClass) has_pos = true;
    else if (s.label == kBackgroundClass) has_neg = true;
    else throw DataError("sample '" + s.name + "' has label outside {background, damage}");
    if (s.image.shape() != net.input_shape()) {
      throw DataError("sample '" + s.name + "' has shape " + shape_string(s.image.shape()) +
                      ", network expects " + shape_string(net.input_shape()));
    }
  }
  if (!has_pos || !has_neg) throw DataError("training set must contain both damage and background samples");

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  SgdOptimizer opt({cfg.learning_rate, cfg.momentum, cfg.weight_decay});
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochLog> log;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * (epoch >= cfg.lr_decay_epoch ? cfg.lr_decay_factor : 1.0);
    opt.set_learning_rate(lr);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      ParamGrads batch;
      for (std::size_t i = b; i < end; ++i) {
        const Sample& s = dataset[order[i]];
        Tensor x = s.image;
        random_flip(x, cfg.flip_probability, rng);
        const Tensor logits = net.forward(x);
        const int label = s.label;
        auto loss = ops::softmax_cross_entropy(logits, std::span<const int>(&label, 1));
        loss_sum += loss.loss;
        const int pred = logits[1] > logits[0] ? 1 : 0;
        correct += pred == label ? 1 : 0;
        batch.accumulate(net.backward(loss.grad).params);
      }
      batch.scale(1.0 / static_cast<double>(end - b));
      opt.step(net, batch);
    }
    net.clear_forward_state();
    EpochLog entry{epoch + 1, loss_sum / static_cast<double>(dataset.size()),
                   static_cast<double>(correct) / static_cast<double>(dataset.size()), lr};
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

TrainResult train(const std::vector<Sample>& dataset, const NetworkSpec& spec, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  TrainResult r{build_network(spec, cfg.seed), {}};
  r.log = train_network(r.network, dataset, cfg, on_epoch);
  return r;
}

int ClassScores::predicted() const {
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

ClassScores classify(Network& net, const Tensor& image) {
  const Tensor logits = net.forward(image);
  return ClassScores{logits.storage()};
}

CaptureResult classify_with_capture(Network& net, const Tensor& image,
                                    const std::vector<std::string>& capture_layers,
                                    std::optional<int> target_class) {
  std::vector<std::string> ids;
  ids.reserve(capture_layers.size());
  for (const auto& id : capture_layers) ids.push_back(resolve_capture_id(net, id));

  CaptureResult r;
  const Tensor logits = net.forward(image);
  if (logits.dim(0) != 1) throw ConfigError("classify_with_capture takes a single image");
  r.scores.logits = logits.storage();
  r.target_class = target_class.value_or(r.scores.predicted());
  if (r.target_class < 0 || r.target_class >= logits.dim(1)) throw ConfigError("target class out of range");
  if (ids.empty()) return r;

  Tensor seed(logits.shape());
  seed[static_cast<std::size_t>(r.target_class)] = 1.0;
  BackwardResult back = net.backward(seed, ids, /*want_param_grads=*/false);
  for (std::size_t i = 0; i < back.captures.size(); ++i) {
    CaptureRecord rec = std::move(back.captures[i]);
    rec.layer_id = capture_layers[i];
    auto squeeze = [](const Tensor& t) {
      if (t.rank() == 4 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
      return t;
    };
    rec.activations = squeeze(rec.activations);
    rec.gradients = squeeze(rec.gradients);
    r.records.push_back(std::move(rec));
  }
  return r;
}

ClassificationMetrics classification_metrics(const std::vector<int>& predictions,
                                             const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) throw ConfigError("prediction and label counts differ");
  ClassificationMetrics m;
  auto& c = m.counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    const int p = predictions[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1)) throw DataError("labels must be binary");
    const bool pos = p == kDamageClass;
    const bool truth = y == kDamageClass;
    if (pos && truth) ++c.tp;
    else if (pos) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  m.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  m.fpr = ratio(c.fp, c.fp + c.tn);
  if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  } else if (m.precision && m.recall) {
    m.f1 = 0.0;
  }
  return m;
}

std::vector<Sample> load_dataset(const std::filesystem::path& root) {
  std::vector<Sample> out;
  for (const auto& [cls, label] : {std::pair{"background", kBackgroundClass}, std::pair{"damage", kDamageClass}}) {
    const auto files = io::list_images(root / cls);
    if (files.empty()) {
      throw DataError("class directory " + (root / cls).string() + " is missing or has no images");
    }
    for (const auto& f : files) {
      Tensor img = io::read_gray(f);
      for (double& v : img.data()) v /= 255.0;
      out.push_back(Sample{img.reshaped({1, img.height(), img.width()}), label,
                           std::string(cls) + "/" + f.filename().string()});
    }
  }
  return out;
}

}  // namespace cgf
