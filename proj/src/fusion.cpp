#include "cgfusion/fusion.hpp"

#include <algorithm>
#include <set>

#include "cgfusion/errors.hpp"
#include "cgfusion/ops.hpp"

namespace cgf {

void FusionConfig::validate(int stage_count) const {
  if (stages_to_fuse.empty()) throw ConfigError("fusion needs at least one stage");
  std::set<int> seen;
  for (int s : stages_to_fuse) {
    if (s < 1 || s > stage_count) {
      throw ConfigError("fusion stage " + std::to_string(s) + " outside 1.." + std::to_string(stage_count));
    }
    if (!seen.insert(s).second) throw ConfigError("fusion stage " + std::to_string(s) + " listed twice");
  }
  if (!(v_thr >= 0.0 && v_thr <= 1.0)) throw ConfigError("v_thr must lie in [0, 1]");
}

Tensor normalize_minmax(const Tensor& map) {
  Tensor out(map.shape());
  if (map.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.storage().begin(), map.storage().end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = (map[i] - *lo) / range;
  return out;
}

Tensor to_input_resolution(const Tensor& map, int height, int width) {
  if (map.rank() != 2) throw ConfigError("heatmap must be H x W, got " + shape_string(map.shape()));
  if (map.height() > height || map.width() > width) {
    throw ConfigError("heatmap " + shape_string(map.shape()) + " exceeds input resolution " +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  const Tensor up = (map.height() == height && map.width() == width)
                        ? map
                        : ops::upsample_bilinear(map, height, width);
  return normalize_minmax(up);
}

Tensor fuse_stages(const std::vector<Heatmap>& stage_maps, int height, int width) {
  if (stage_maps.empty()) throw ConfigError("fuse_stages: no stage maps");
  Tensor sum({height, width});
  for (const auto& m : stage_maps) {
    const Tensor up = to_input_resolution(m.values, height, width);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += up[i];
  }
  return normalize_minmax(sum);
}

Tensor deep_mask(const Tensor& deep_normalized, double v_thr) {
  Tensor mask(deep_normalized.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = deep_normalized[i] - v_thr >= 0.0 ? 1.0 : 0.0;
  return mask;
}

FusionProducts nm_fusion(const Tensor& image, const std::vector<Heatmap>& stage_maps,
                         const Heatmap& deep, const FusionConfig& cfg) {
  if (image.rank() != 2) throw ConfigError("nm_fusion: image must be H x W, got " + shape_string(image.shape()));
  if (!(cfg.v_thr >= 0.0 && cfg.v_thr <= 1.0)) throw ConfigError("v_thr must lie in [0, 1]");
  const int h = image.height();
  const int w = image.width();
  FusionProducts p;
  p.image = image;
  p.cg_cam = fuse_stages(stage_maps, h, w);
  p.deep = to_input_resolution(deep.values, h, w);
  Tensor sum(image.shape());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = image[i] + p.cg_cam[i];
  p.multi = normalize_minmax(sum);
  p.mask = deep_mask(p.deep, cfg.v_thr);
  p.fusion = Tensor(image.shape());
  for (std::size_t i = 0; i < sum.size(); ++i) p.fusion[i] = p.multi[i] * p.mask[i];
  return p;
}

}  // namespace cgf
