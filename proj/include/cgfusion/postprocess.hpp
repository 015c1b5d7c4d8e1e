#pragma once

#include <vector>

#include "cgfusion/tensor.hpp"

namespace cgf {

struct ThresholdConfig {
  int window = 31;   // odd, >= 3
  double k = 0.2;    // sensitivity
  double r = 128.0;  // assumed maximum standard deviation, gray units
  int min_area = 2;  // components smaller than this are dropped
  // Threshold the inverted map (255 - v) and keep pixels below T, i.e. the
  // dark-foreground convention applied to bright targets.
  bool invert = false;

  void validate() const;
};

struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive
};

struct Region {
  std::vector<int> pixels;  // linear indices y * width + x, ascending
  BoundingBox box;
  int area() const { return static_cast<int>(pixels.size()); }
};

struct SegmentationResult {
  Tensor mask;  // H x W, {0, 1}; union of the kept regions
  std::vector<Region> regions;
  int height = 0;
  int width = 0;
};

// Local threshold T = mu * (1 + k * (sigma / R - 1)) over a window x window
// neighbourhood with edge-replicated borders. `map` is in gray units.
Tensor sauvola_threshold_map(const Tensor& map, const ThresholdConfig& cfg);

// Foreground (1) where map > T, or where 255 - map < T(255 - map) when inverted.
Tensor sauvola_threshold(const Tensor& map, const ThresholdConfig& cfg);

// 8-connected components of a binary mask, dropping those below min_area.
// Regions are ordered by their first pixel in raster order.
SegmentationResult extract_regions(const Tensor& mask, int min_area);

// Rescales a [0, 1] heatmap to integer gray levels, thresholds, and extracts regions.
SegmentationResult segment_heatmap(const Tensor& heatmap01, const ThresholdConfig& cfg);

}  // namespace cgf
