#include "cgfusion/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "cgfusion/errors.hpp"

namespace cgf {

void ThresholdConfig::validate() const {
  if (window < 3 || window % 2 == 0) throw ConfigError("threshold window must be odd and >= 3");
  if (!(r > 0.0)) throw ConfigError("threshold R must be positive");
  if (min_area < 0) throw ConfigError("min_area must be non-negative");
}

Tensor sauvola_threshold_map(const Tensor& map, const ThresholdConfig& cfg) {
  cfg.validate();
  if (map.rank() != 2) throw ConfigError("sauvola: map must be H x W, got " + shape_string(map.shape()));
  const int h = map.height();
  const int w = map.width();
  if (cfg.window > h || cfg.window > w) {
    throw ConfigError("sauvola: window " + std::to_string(cfg.window) + " larger than image " +
                      std::to_string(h) + "x" + std::to_string(w));
  }
  const int rad = cfg.window / 2;
  const int ph = h + 2 * rad;
  const int pw = w + 2 * rad;
  // Integral images of the replicate-padded map, with a zero guard row/column.
  std::vector<double> sum(static_cast<std::size_t>(ph + 1) * (pw + 1), 0.0);
  std::vector<double> sq(sum.size(), 0.0);
  auto at = [pw](int y, int x) { return static_cast<std::size_t>(y) * (pw + 1) + x; };
  for (int y = 0; y < ph; ++y) {
    const int sy = std::clamp(y - rad, 0, h - 1);
    double row = 0.0, row_sq = 0.0;
    for (int x = 0; x < pw; ++x) {
      const double v = map.at(sy, std::clamp(x - rad, 0, w - 1));
      row += v;
      row_sq += v * v;
      sum[at(y + 1, x + 1)] = sum[at(y, x + 1)] + row;
      sq[at(y + 1, x + 1)] = sq[at(y, x + 1)] + row_sq;
    }
  }
  const double n = static_cast<double>(cfg.window) * cfg.window;
  Tensor t(map.shape());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Window of output pixel (y, x) spans padded rows y..y+window-1.
      const int y1 = y + cfg.window, x1 = x + cfg.window;
      const double s = sum[at(y1, x1)] - sum[at(y, x1)] - sum[at(y1, x)] + sum[at(y, x)];
      const double s2 = sq[at(y1, x1)] - sq[at(y, x1)] - sq[at(y1, x)] + sq[at(y, x)];
      const double mean = s / n;
      const double var = std::max(0.0, s2 / n - mean * mean);
      t.at(y, x) = mean * (1.0 + cfg.k * (std::sqrt(var) / cfg.r - 1.0));
    }
  }
  return t;
}

Tensor sauvola_threshold(const Tensor& map, const ThresholdConfig& cfg) {
  Tensor mask(map.shape());
  if (cfg.invert) {
    Tensor inv(map.shape());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 255.0 - map[i];
    const Tensor t = sauvola_threshold_map(inv, cfg);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = inv[i] < t[i] ? 1.0 : 0.0;
    return mask;
  }
  const Tensor t = sauvola_threshold_map(map, cfg);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = map[i] > t[i] ? 1.0 : 0.0;
  return mask;
}

SegmentationResult extract_regions(const Tensor& mask, int min_area) {
  if (mask.rank() != 2) throw ConfigError("extract_regions: mask must be H x W");
  const int h = mask.height();
  const int w = mask.width();
  SegmentationResult res;
  res.height = h;
  res.width = w;
  res.mask = Tensor(mask.shape());
  std::vector<char> seen(mask.size(), 0);
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (seen[static_cast<std::size_t>(start)] || !(mask[static_cast<std::size_t>(start)] > 0.5)) continue;
    Region region;
    region.box = {start % w, start / w, start % w, start / w};
    stack.push_back(start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      region.pixels.push_back(p);
      const int py = p / w, px = p % w;
      region.box.x0 = std::min(region.box.x0, px);
      region.box.x1 = std::max(region.box.x1, px);
      region.box.y0 = std::min(region.box.y0, py);
      region.box.y1 = std::max(region.box.y1, py);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = py + dy, nx = px + dx;
          if ((dy == 0 && dx == 0) || ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int q = ny * w + nx;
          if (!seen[static_cast<std::size_t>(q)] && mask[static_cast<std::size_t>(q)] > 0.5) {
            seen[static_cast<std::size_t>(q)] = 1;
            stack.push_back(q);
          }
        }
      }
    }
    if (region.area() < min_area) continue;
    std::sort(region.pixels.begin(), region.pixels.end());
    for (int p : region.pixels) res.mask[static_cast<std::size_t>(p)] = 1.0;
    res.regions.push_back(std::move(region));
  }
  return res;
}

SegmentationResult segment_heatmap(const Tensor& heatmap01, const ThresholdConfig& cfg) {
  Tensor gray(heatmap01.shape());
  // Quantized to 8-bit levels: keeps the integral-image sums exact, so
  // flat zero regions cannot drift above their own threshold.
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = std::round(std::clamp(heatmap01[i], 0.0, 1.0) * 255.0);
  return extract_regions(sauvola_threshold(gray, cfg), cfg.min_area);
}

}  // namespace cgf
