#pragma once

// Central-difference checks of Network::backward, shared by the unit tests
// and the acceptance runner.

#include <algorithm>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cgfusion/classifier.hpp"
#include "cgfusion/ops.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct Report {
  double param_error = 0.0;       // max relative error over sampled weights and biases
  double activation_error = 0.0;  // max relative error over sampled captured activations
  int checked = 0;  // probes that stayed clear of kinks
};

// Small random network with 2 or 3 stages and a random two-image batch; the
// scalar is the mean cross-entropy against random labels.
inline Report check_random_network(std::uint64_t seed, double eps = 1e-4, int samples_per_tensor = 6) {
  std::mt19937_64 rng(seed);
  cgf::NetworkSpec spec;
  const int stages = 2 + static_cast<int>(rng() % 2);
  spec.stages.clear();
  for (int s = 0; s < stages; ++s) {
    spec.stages.push_back({1 + static_cast<int>(rng() % 2), 2 + static_cast<int>(rng() % 4)});
  }
  spec.input_size = 4 << stages;
  spec.hidden_units = 6;
  spec.input_mean = 0.1;
  spec.input_std = 0.5;
  cgf::Network net = cgf::build_network(spec, rng());
  // Nonzero biases so ReLU kinks are not all at the same place.
  for (auto& l : net.layers()) {
    if (l.has_params()) l.bias = oracle::random_tensor(l.bias.shape(), rng, -0.1, 0.1);
  }

  const cgf::Tensor x = oracle::random_tensor({2, 1, spec.input_size, spec.input_size}, rng, 0.0, 1.0);
  const std::vector<int> labels{static_cast<int>(rng() % 2), static_cast<int>(rng() % 2)};
  auto loss_from = [&](std::size_t start, const cgf::Tensor& in) {
    const cgf::Tensor logits = start == 0 ? net.forward(in) : net.forward_from(start, in);
    return cgf::ops::softmax_cross_entropy(logits, labels).loss;
  };

  std::vector<std::string> ids;
  for (int s = 1; s <= stages; ++s) ids.push_back(cgf::stage_capture_id(spec, s));
  const auto r = cgf::ops::softmax_cross_entropy(net.forward(x), labels);
  const cgf::BackwardResult back = net.backward(r.grad, ids, true);

  // Piecewise-linear layers make the loss non-differentiable on a measure-zero
  // set; coordinates whose probe straddles a kink are redrawn.
  Report rep;
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  auto check = [&](double analytic, double& x, std::size_t start, const cgf::Tensor& in) -> std::optional<double> {
    const auto p = oracle::probe([&] { return loss_from(start, in); }, x, eps);
    if (!p.smooth) return std::nullopt;
    ++rep.checked;
    return oracle::relative_error(analytic, p.slope);
  };
  for (std::size_t li = 0; li < net.layers().size(); ++li) {
    auto& layer = net.layers()[li];
    if (!layer.has_params()) continue;
    for (int t = 0, tries = 0; t < samples_per_tensor && tries < 50 * samples_per_tensor; ++tries) {
      const std::size_t wi = pick(layer.weight.size());
      const auto e = check(back.params.weight[li][wi], layer.weight.storage()[wi], 0, x);
      if (!e) continue;
      rep.param_error = std::max(rep.param_error, *e);
      ++t;
    }
    for (int t = 0, tries = 0; t < samples_per_tensor && tries < 50 * samples_per_tensor; ++tries) {
      const std::size_t bi = pick(layer.bias.size());
      const auto e = check(back.params.bias[li][bi], layer.bias.storage()[bi], 0, x);
      if (!e) continue;
      rep.param_error = std::max(rep.param_error, *e);
      ++t;
    }
  }
  // The captured activation is the output of layer `idx`, i.e. the input of idx + 1.
  // Zero entries sit on max-pool ties, so only positive ones are probed.
  for (std::size_t c = 0; c < ids.size(); ++c) {
    const std::size_t idx = net.index_of(ids[c]);
    cgf::Tensor act = back.captures[c].activations;
    for (int t = 0, tries = 0; t < samples_per_tensor && tries < 50 * samples_per_tensor; ++tries) {
      const std::size_t ai = pick(act.size());
      if (act[ai] <= eps) continue;
      const auto e = check(back.captures[c].gradients[ai], act.storage()[ai], idx + 1, act);
      if (!e) continue;
      rep.activation_error = std::max(rep.activation_error, *e);
      ++t;
    }
  }
  return rep;
}

}  // namespace gradcheck
