#pragma once

#include <string>

#include "cgfusion/network.hpp"
#include "cgfusion/tensor.hpp"

namespace cgf {

// Single-channel non-negative map at the resolution of its source layer.
struct Heatmap {
  Tensor values;  // H x W
  std::string source_layer;
  int target_class = -1;

  int height() const { return values.height(); }
  int width() const { return values.width(); }
};

// Global-weight CAM: w_k = mean_ij g_ij^k, map = ReLU(sum_k w_k A^k).
Heatmap grad_cam(const CaptureRecord& record);

// Pixel-weight CAM: map = ReLU(sum_k ReLU(g_ij^k) A_ij^k).
Heatmap layer_cam(const CaptureRecord& record);

// Continuous-gradient weights: each pool_kernel x pool_kernel tile of every
// gradient channel replaced by its mean. Throws ConfigError when the spatial
// extent is not divisible by pool_kernel.
Tensor cg_cam_weights(const Tensor& gradients, int pool_kernel);

// map = ReLU(sum_k w_ij^k A_ij^k) with w from cg_cam_weights.
Heatmap cg_cam_stage(const CaptureRecord& record, int pool_kernel = 2);

}  // namespace cgf
