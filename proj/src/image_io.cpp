#include "cgfusion/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "cgfusion/errors.hpp"

namespace cgf::io {
namespace {

namespace fs = std::filesystem;

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

std::uint8_t to_byte(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const fs::path& path, int height, int width, int color_type, int channels,
               const std::uint8_t* pixels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // Pin the output bytes: no timestamps or text chunks.
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * width * channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<std::uint8_t> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("malformed PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  if (png_get_channels(png, info) != 1) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("could not convert " + path.string() + " to grayscale");
  }
  pixels.resize(static_cast<std::size_t>(width) * height);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = pixels.data() + static_cast<std::size_t>(y) * width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  Tensor out({height, width});
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = pixels[i];
  return out;
}

// Reads the next whitespace-separated PNM header token, skipping comments.
std::string pnm_token(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

Tensor read_pgm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  if (pnm_token(is) != "P5") throw IoError(path.string() + ": only binary PGM (P5) is supported");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(pnm_token(is));
    height = std::stoi(pnm_token(is));
    maxval = std::stoi(pnm_token(is));
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError(path.string() + ": unsupported PGM geometry or depth");
  }
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(width) * height);
  is.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!is) throw IoError(path.string() + ": truncated PGM");
  Tensor out({height, width});
  const double scale = 255.0 / maxval;
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = maxval == 255 ? pixels[i] : std::round(pixels[i] * scale);
  return out;
}

void require_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw ConfigError(std::string(what) + ": expected H x W, got " + shape_string(t.shape()));
}

}  // namespace

Tensor read_gray(const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  throw IoError("unsupported image format: " + path.string());
}

void write_gray(const fs::path& path, const Tensor& image) {
  require_2d(image, "write_gray");
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(image[i]);
  const std::string ext = lower_ext(path);
  if (ext == ".pgm") {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << "P5\n" << image.width() << " " << image.height() << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing " + path.string());
    return;
  }
  if (ext != ".png") throw IoError("unsupported image format: " + path.string());
  write_png(path, image.height(), image.width(), PNG_COLOR_TYPE_GRAY, 1, bytes.data());
}

void write_mask(const fs::path& path, const Tensor& mask) {
  require_2d(mask, "write_mask");
  Tensor scaled(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) scaled[i] = mask[i] > 0.5 ? 255.0 : 0.0;
  write_gray(path, scaled);
}

Tensor read_mask(const fs::path& path) {
  Tensor t = read_gray(path);
  for (double& v : t.data()) v = v > 127.0 ? 1.0 : 0.0;
  return t;
}

void write_heatmap_png(const fs::path& path, const Tensor& map) {
  require_2d(map, "write_heatmap_png");
  Tensor scaled(map.shape());
  if (!map.empty()) {
    const auto [lo, hi] = std::minmax_element(map.storage().begin(), map.storage().end());
    const double range = *hi - *lo;
    if (range > 0.0) {
      for (std::size_t i = 0; i < map.size(); ++i) scaled[i] = (map[i] - *lo) / range * 255.0;
    }
  }
  write_gray(path, scaled);
}

void write_float_dump(const fs::path& path, const Tensor& map) {
  require_2d(map, "write_float_dump");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "CGFDUMP 1\n" << map.height() << " " << map.width() << "\n";
  static_assert(std::endian::native == std::endian::little, "float dump assumes little-endian host");
  os.write(reinterpret_cast<const char*>(map.raw()), static_cast<std::streamsize>(map.size() * sizeof(double)));
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor read_float_dump(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string magic;
  std::getline(is, magic);
  if (magic != "CGFDUMP 1") throw IoError(path.string() + ": not a version-1 float dump");
  std::string dims;
  std::getline(is, dims);
  std::istringstream ds(dims);
  int h = -1, w = -1;
  if (!(ds >> h >> w) || h < 0 || w < 0) throw IoError(path.string() + ": malformed dump header");
  Tensor t({h, w});
  is.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw IoError(path.string() + ": truncated float dump");
  return t;
}

void write_rgb_png(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) {
    throw ConfigError("write_rgb_png: buffer size does not match geometry");
  }
  write_png(path, height, width, PNG_COLOR_TYPE_RGB, 3, rgb.data());
}

bool is_image_file(const fs::path& path) {
  const std::string ext = lower_ext(path);
  return ext == ".png" || ext == ".pgm";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace cgf::io
