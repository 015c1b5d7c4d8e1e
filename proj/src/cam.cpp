#include "cgfusion/cam.hpp"

#include "cgfusion/errors.hpp"
#include "cgfusion/ops.hpp"

namespace cgf {
namespace {

// Views a record tensor as C x H x W (accepts a leading batch axis of 1).
Tensor as_chw(const Tensor& t, const char* what) {
  if (t.rank() == 3) return t;
  if (t.rank() == 4 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
  if (t.rank() == 2) return t.reshaped({1, t.dim(0), t.dim(1)});
  throw ConfigError(std::string(what) + ": expected C x H x W, got " + shape_string(t.shape()));
}

void check_record(const CaptureRecord& r, const char* what) {
  if (r.activations.shape() != r.gradients.shape()) {
    throw ConfigError(std::string(what) + ": activation shape " + shape_string(r.activations.shape()) +
                      " differs from gradient shape " + shape_string(r.gradients.shape()));
  }
}

// ReLU(sum_k weight^k .* A^k); weight may be broadcast per channel.
Heatmap weighted_sum(const CaptureRecord& r, const Tensor& acts, const Tensor& weights,
                     bool per_channel_weight) {
  const int c = acts.dim(0), h = acts.dim(1), w = acts.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Heatmap out{Tensor({h, w}), r.layer_id, -1};
  double* m = out.values.raw();
  for (int k = 0; k < c; ++k) {
    const double* a = acts.raw() + k * plane;
    if (per_channel_weight) {
      const double wk = weights[static_cast<std::size_t>(k)];
      for (std::size_t i = 0; i < plane; ++i) m[i] += wk * a[i];
    } else {
      const double* wk = weights.raw() + k * plane;
      for (std::size_t i = 0; i < plane; ++i) m[i] += wk[i] * a[i];
    }
  }
  for (double& v : out.values.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

}  // namespace

Heatmap grad_cam(const CaptureRecord& record) {
  check_record(record, "grad_cam");
  const Tensor acts = as_chw(record.activations, "grad_cam");
  const Tensor grads = as_chw(record.gradients, "grad_cam");
  const int c = grads.dim(0);
  const std::size_t plane = static_cast<std::size_t>(grads.dim(1)) * grads.dim(2);
  Tensor weights({c});
  for (int k = 0; k < c; ++k) {
    const double* g = grads.raw() + k * plane;
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += g[i];
    weights[static_cast<std::size_t>(k)] = sum / static_cast<double>(plane);
  }
  return weighted_sum(record, acts, weights, true);
}

Heatmap layer_cam(const CaptureRecord& record) {
  check_record(record, "layer_cam");
  const Tensor acts = as_chw(record.activations, "layer_cam");
  return weighted_sum(record, acts, ops::relu(as_chw(record.gradients, "layer_cam")), false);
}

Tensor cg_cam_weights(const Tensor& gradients, int pool_kernel) {
  const Tensor g = as_chw(gradients, "cg_cam_weights");
  if (pool_kernel < 1) throw ConfigError("cg_cam: pool kernel must be positive");
  if (g.dim(1) % pool_kernel != 0 || g.dim(2) % pool_kernel != 0) {
    throw ConfigError("cg_cam: spatial extent " + std::to_string(g.dim(1)) + "x" +
                      std::to_string(g.dim(2)) + " not divisible by pool kernel " +
                      std::to_string(pool_kernel));
  }
  return ops::upsample_nearest(ops::avgpool2d(g, pool_kernel, pool_kernel), pool_kernel);
}

Heatmap cg_cam_stage(const CaptureRecord& record, int pool_kernel) {
  check_record(record, "cg_cam_stage");
  const Tensor acts = as_chw(record.activations, "cg_cam_stage");
  return weighted_sum(record, acts, cg_cam_weights(record.gradients, pool_kernel), false);
}

}  // namespace cgf
