#pragma once

#include <vector>

#include "cgfusion/cam.hpp"
#include "cgfusion/tensor.hpp"

namespace cgf {

struct FusionConfig {
  std::vector<int> stages_to_fuse{1, 2, 3, 4};
  double v_thr = 0.1;  // applied to min-max normalized M_deep

  void validate(int stage_count) const;
};

// Everything the fusion step produces, all at input resolution and in [0, 1].
struct FusionProducts {
  Tensor image;      // I
  Tensor cg_cam;     // M_CG-CAM: normalized sum of normalized stage maps
  Tensor multi;      // M_multi = norm(I + M_CG-CAM)
  Tensor deep;       // M_deep, upsampled and normalized
  Tensor mask;       // step(M_deep - v_thr)
  Tensor fusion;     // M_fusion = M_multi * mask
};

// (x - min) / (max - min); a constant map becomes all zeros.
Tensor normalize_minmax(const Tensor& map);

// Bilinear upsample to height x width, then min-max normalize.
Tensor to_input_resolution(const Tensor& map, int height, int width);

// Sum of stage maps brought to height x width and normalized individually,
// renormalized to [0, 1]. Throws ConfigError on an empty list.
Tensor fuse_stages(const std::vector<Heatmap>& stage_maps, int height, int width);

// 1 where deep >= v_thr, else 0.
Tensor deep_mask(const Tensor& deep_normalized, double v_thr);

// `image` is I in [0, 1] at input resolution; `stage_maps` are the maps of
// the configured stages (native resolution); `deep` is the final-layer
// Grad-CAM map (native resolution).
FusionProducts nm_fusion(const Tensor& image, const std::vector<Heatmap>& stage_maps,
                         const Heatmap& deep, const FusionConfig& cfg);

}  // namespace cgf
