#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cgfusion/tensor.hpp"

// Grayscale image, mask and heatmap files.
//
// Float dump format (version 1), used for lossless heatmap exchange:
//   line 1: "CGFDUMP 1"
//   line 2: "<height> <width>"
//   then height*width little-endian IEEE-754 float64 values, row-major.
namespace cgf::io {

// 8-bit grayscale PNG or binary PGM (P5), chosen by extension. Returns an
// H x W tensor of gray levels in [0, 255].
Tensor read_gray(const std::filesystem::path& path);

// Rounds and clamps to [0, 255]. Extension selects .png or .pgm.
void write_gray(const std::filesystem::path& path, const Tensor& image);

// Binary mask as 0/255 PNG; reading maps gray > 127 to 1.
void write_mask(const std::filesystem::path& path, const Tensor& mask);
Tensor read_mask(const std::filesystem::path& path);

// Min-max scaled to [0, 255] for inspection. A constant map is written black.
void write_heatmap_png(const std::filesystem::path& path, const Tensor& map);

void write_float_dump(const std::filesystem::path& path, const Tensor& map);
Tensor read_float_dump(const std::filesystem::path& path);

// Interleaved 8-bit RGB, row-major.
void write_rgb_png(const std::filesystem::path& path, int height, int width,
                   const std::vector<std::uint8_t>& rgb);

bool is_image_file(const std::filesystem::path& path);
// Sorted list of .png/.pgm files directly inside `dir`.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

}  // namespace cgf::io
