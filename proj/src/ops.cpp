#include "cgfusion/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "cgfusion/errors.hpp"

namespace cgf::ops {
namespace {

// Row-major C(m x n) += A(m x k) * B(k x n). Every output starts from its C
// value and adds the k products in index order, whatever the tile it lands in,
// so results do not depend on buffer alignment or vector width.
constexpr int kTileRows = 4;

using Vec8 = double __attribute__((vector_size(64)));

inline Vec8 load8(const double* p) {
  Vec8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store8(double* p, Vec8 v) { std::memcpy(p, &v, sizeof v); }

// V vectors of 8 columns per tile row; `strip` holds the tile's columns of B
// packed contiguously, k rows of 8 * V.
template <int V>
void gemm_tile(const double* a, const double* strip, double* c, int k, int n, int i0, int j0) {
  Vec8 acc[kTileRows][V];
  for (int r = 0; r < kTileRows; ++r)
    for (int v = 0; v < V; ++v) acc[r][v] = load8(c + static_cast<std::size_t>(i0 + r) * n + j0 + 8 * v);
  const double* arow[kTileRows];
  for (int r = 0; r < kTileRows; ++r) arow[r] = a + static_cast<std::size_t>(i0 + r) * k;
  for (int p = 0; p < k; ++p) {
    const double* brow = strip + static_cast<std::size_t>(p) * 8 * V;
    Vec8 bv[V];
    for (int v = 0; v < V; ++v) bv[v] = load8(brow + 8 * v);
    for (int r = 0; r < kTileRows; ++r) {
      const double av = arow[r][p];
      for (int v = 0; v < V; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (int r = 0; r < kTileRows; ++r)
    for (int v = 0; v < V; ++v) store8(c + static_cast<std::size_t>(i0 + r) * n + j0 + 8 * v, acc[r][v]);
}

template <int V>
void gemm_strip(const double* a, const double* b, double* c, int m_full, int k, int n, int j0,
                std::vector<double>& strip) {
  constexpr int w = 8 * V;
  strip.resize(static_cast<std::size_t>(k) * w);
  for (int p = 0; p < k; ++p)
    std::memcpy(strip.data() + static_cast<std::size_t>(p) * w, b + static_cast<std::size_t>(p) * n + j0,
                w * sizeof(double));
  for (int i0 = 0; i0 < m_full; i0 += kTileRows) gemm_tile<V>(a, strip.data(), c, k, n, i0, j0);
}

void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  const int m_full = m - m % kTileRows;
  const int n_wide = n - n % 16;
  const int n_full = n - n % 8;
  if (m_full > 0) {
    std::vector<double> strip;
    for (int j0 = 0; j0 < n_wide; j0 += 16) gemm_strip<2>(a, b, c, m_full, k, n, j0, strip);
    if (n_full > n_wide) gemm_strip<1>(a, b, c, m_full, k, n, n_wide, strip);
  }
  // Ragged edges, same per-element order.
  for (int i = 0; i < m; ++i) {
    const int j_start = i < m_full ? n_full : 0;
    if (j_start == n) continue;
    double* crow = c + static_cast<std::size_t>(i) * n;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = j_start; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose(const double* src, double* dst, int rows, int cols) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * cols + c];
}

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw ConfigError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                      shape_string(t.shape()));
  }
}

void require_spatial(const Tensor& t, const char* what) {
  if (t.rank() < 2) {
    throw ConfigError(std::string(what) + ": need at least 2 axes, got " + shape_string(t.shape()));
  }
}

int pool_output_extent(int in, int kernel, int stride, const char* what) {
  if (kernel < 1 || stride < 1) {
    throw ConfigError(std::string(what) + ": kernel and stride must be positive");
  }
  if (in < kernel || (in - kernel) % stride != 0) {
    throw ConfigError(std::string(what) + ": extent " + std::to_string(in) +
                      " is not tiled by kernel " + std::to_string(kernel) + " / stride " +
                      std::to_string(stride));
  }
  return (in - kernel) / stride + 1;
}

// Number of leading "plane" entries (everything but the last two axes).
std::size_t plane_count(const Tensor& t) {
  std::size_t n = 1;
  for (int a = 0; a + 2 < t.rank(); ++a) n *= static_cast<std::size_t>(t.dim(a));
  return n;
}

Shape with_spatial(const Shape& s, int h, int w) {
  Shape out = s;
  out[out.size() - 2] = h;
  out[out.size() - 1] = w;
  return out;
}

// Unfolds one C x H x W sample into a (C*k*k) x (oh*ow) column matrix.
void im2col(const double* src, int channels, int h, int w, int k, int stride, int pad, int oh,
            int ow, double* col) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    const double* plane = src + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* srow = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, int h, int w, int k, int stride, int pad, int oh,
            int ow, double* dst) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    double* plane = dst + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * ow;
          double* drow = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) drow[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct ConvGeometry {
  int n, c, h, w, o, k, oh, ow;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, int stride, int padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (weight.dim(2) != weight.dim(3)) throw ConfigError("conv2d: only square kernels supported");
  if (input.dim(1) != weight.dim(1)) {
    throw ConfigError("conv2d: input has " + std::to_string(input.dim(1)) +
                      " channels but weight expects " + std::to_string(weight.dim(1)));
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = weight.dim(0);
  g.k = weight.dim(2);
  g.oh = conv_output_extent(g.h, g.k, stride, padding);
  g.ow = conv_output_extent(g.w, g.k, stride, padding);
  return g;
}

}  // namespace

int conv_output_extent(int in, int kernel, int stride, int padding) {
  if (kernel < 1 || stride < 1 || padding < 0) {
    throw ConfigError("conv2d: kernel/stride must be positive and padding non-negative");
  }
  if (in + 2 * padding < kernel) {
    throw ConfigError("conv2d: padded extent " + std::to_string(in + 2 * padding) +
                      " smaller than kernel " + std::to_string(kernel));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                      int padding) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  if (!bias.empty() && static_cast<int>(bias.size()) != g.o) {
    throw ConfigError("conv2d: bias length does not match output channels");
  }
  const int kk = g.c * g.k * g.k;
  const int cols = g.oh * g.ow;
  Tensor out({g.n, g.o, g.oh, g.ow});
  std::vector<double> col(static_cast<std::size_t>(kk) * cols);
  for (int n = 0; n < g.n; ++n) {
    im2col(input.raw() + static_cast<std::size_t>(n) * g.c * g.h * g.w, g.c, g.h, g.w, g.k,
           stride, padding, g.oh, g.ow, col.data());
    double* omat = out.raw() + static_cast<std::size_t>(n) * g.o * cols;
    gemm_acc(weight.raw(), col.data(), omat, g.o, kk, cols);
    if (!bias.empty()) {
      for (int o = 0; o < g.o; ++o) {
        const double b = bias[static_cast<std::size_t>(o)];
        for (int j = 0; j < cols; ++j) omat[static_cast<std::size_t>(o) * cols + j] += b;
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                            int stride, int padding, bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  if (grad_output.shape() != Shape{g.n, g.o, g.oh, g.ow}) {
    throw ConfigError("conv2d backward: grad_output shape " + shape_string(grad_output.shape()) +
                      " does not match forward output");
  }
  const int kk = g.c * g.k * g.k;
  const int cols = g.oh * g.ow;
  Conv2dGrads grads;
  grads.weight = Tensor(weight.shape());
  grads.bias = Tensor({g.o});
  if (need_input_grad) grads.input = Tensor(input.shape());

  std::vector<double> col(static_cast<std::size_t>(kk) * cols);
  std::vector<double> grad_t(static_cast<std::size_t>(cols) * g.o);
  std::vector<double> dweight_t(weight.size(), 0.0);  // kk x o
  std::vector<double> dcol(need_input_grad ? col.size() : 0);
  std::vector<double> weight_t(need_input_grad ? weight.size() : 0);
  if (need_input_grad) transpose(weight.raw(), weight_t.data(), g.o, kk);
  for (int n = 0; n < g.n; ++n) {
    const std::size_t in_off = static_cast<std::size_t>(n) * g.c * g.h * g.w;
    im2col(input.raw() + in_off, g.c, g.h, g.w, g.k, stride, padding, g.oh, g.ow, col.data());
    const double* gmat = grad_output.raw() + static_cast<std::size_t>(n) * g.o * cols;
    transpose(gmat, grad_t.data(), g.o, cols);
    gemm_acc(col.data(), grad_t.data(), dweight_t.data(), kk, cols, g.o);
    for (int o = 0; o < g.o; ++o) {
      double acc = 0.0;
      for (int j = 0; j < cols; ++j) acc += gmat[static_cast<std::size_t>(o) * cols + j];
      grads.bias[static_cast<std::size_t>(o)] += acc;
    }
    if (need_input_grad) {
      std::fill(dcol.begin(), dcol.end(), 0.0);
      gemm_acc(weight_t.data(), gmat, dcol.data(), kk, g.o, cols);
      col2im(dcol.data(), g.c, g.h, g.w, g.k, stride, padding, g.oh, g.ow,
             grads.input.raw() + in_off);
    }
  }
  transpose(dweight_t.data(), grads.weight.raw(), kk, g.o);
  return grads;
}

MaxPoolResult maxpool2d_forward(const Tensor& input, int kernel, int stride) {
  require_spatial(input, "maxpool2d");
  const int h = input.height();
  const int w = input.width();
  const int oh = pool_output_extent(h, kernel, stride, "maxpool2d");
  const int ow = pool_output_extent(w, kernel, stride, "maxpool2d");
  const std::size_t planes = plane_count(input);
  MaxPoolResult result;
  result.output = Tensor(with_spatial(input.shape(), oh, ow));
  result.argmax.resize(result.output.size());
  std::size_t out_i = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++out_i) {
        // First maximum in raster order wins ties.
        std::size_t best = base + static_cast<std::size_t>(oy * stride) * w + ox * stride;
        double best_v = input[best];
        for (int ky = 0; ky < kernel; ++ky) {
          for (int kx = 0; kx < kernel; ++kx) {
            const std::size_t idx =
                base + static_cast<std::size_t>(oy * stride + ky) * w + (ox * stride + kx);
            if (input[idx] > best_v) {
              best_v = input[idx];
              best = idx;
            }
          }
        }
        result.output[out_i] = best_v;
        result.argmax[out_i] = best;
      }
    }
  }
  return result;
}

Tensor maxpool2d_backward(const Tensor& grad_output, std::span<const std::size_t> argmax,
                          const Shape& input_shape) {
  if (argmax.size() != grad_output.size()) {
    throw ConfigError("maxpool2d backward: argmax/grad size mismatch");
  }
  Tensor grad_input(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= grad_input.size()) throw ConfigError("maxpool2d backward: bad argmax index");
    grad_input[argmax[i]] += grad_output[i];
  }
  return grad_input;
}

Tensor avgpool2d(const Tensor& input, int kernel, int stride) {
  require_spatial(input, "avgpool2d");
  const int h = input.height();
  const int w = input.width();
  const int oh = pool_output_extent(h, kernel, stride, "avgpool2d");
  const int ow = pool_output_extent(w, kernel, stride, "avgpool2d");
  const std::size_t planes = plane_count(input);
  const double inv = 1.0 / (static_cast<double>(kernel) * kernel);
  Tensor out(with_spatial(input.shape(), oh, ow));
  std::size_t out_i = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* plane = input.raw() + p * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++out_i) {
        double sum = 0.0;
        for (int ky = 0; ky < kernel; ++ky) {
          const double* row = plane + static_cast<std::size_t>(oy * stride + ky) * w + ox * stride;
          for (int kx = 0; kx < kernel; ++kx) sum += row[kx];
        }
        out[out_i] = sum * inv;
      }
    }
  }
  return out;
}

Tensor avgpool2d_backward(const Tensor& grad_output, const Shape& input_shape, int kernel,
                          int stride) {
  Tensor grad_input(input_shape);
  require_spatial(grad_input, "avgpool2d backward");
  const int h = grad_input.height();
  const int w = grad_input.width();
  const int oh = pool_output_extent(h, kernel, stride, "avgpool2d");
  const int ow = pool_output_extent(w, kernel, stride, "avgpool2d");
  if (grad_output.shape() != with_spatial(input_shape, oh, ow)) {
    throw ConfigError("avgpool2d backward: grad_output shape mismatch");
  }
  const std::size_t planes = plane_count(grad_input);
  const double inv = 1.0 / (static_cast<double>(kernel) * kernel);
  std::size_t out_i = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    double* plane = grad_input.raw() + p * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++out_i) {
        const double g = grad_output[out_i] * inv;
        for (int ky = 0; ky < kernel; ++ky) {
          double* row = plane + static_cast<std::size_t>(oy * stride + ky) * w + ox * stride;
          for (int kx = 0; kx < kernel; ++kx) row[kx] += g;
        }
      }
    }
  }
  return grad_input;
}

Tensor upsample_nearest(const Tensor& input, int factor) {
  require_spatial(input, "upsample_nearest");
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  const int h = input.height();
  const int w = input.width();
  const int oh = h * factor;
  const int ow = w * factor;
  const std::size_t planes = plane_count(input);
  Tensor out(with_spatial(input.shape(), oh, ow));
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = input.raw() + p * h * w;
    double* dst = out.raw() + p * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const double* srow = src + static_cast<std::size_t>(y / factor) * w;
      double* drow = dst + static_cast<std::size_t>(y) * ow;
      for (int x = 0; x < ow; ++x) drow[x] = srow[x / factor];
    }
  }
  return out;
}

Tensor upsample_bilinear(const Tensor& input, int target_h, int target_w) {
  require_spatial(input, "upsample_bilinear");
  const int h = input.height();
  const int w = input.width();
  if (target_h < h || target_w < w) {
    throw ConfigError("upsample_bilinear: target " + std::to_string(target_h) + "x" +
                      std::to_string(target_w) + " smaller than source " + std::to_string(h) +
                      "x" + std::to_string(w));
  }
  struct Tap {
    int lo, hi;
    double frac;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / out;
    for (int i = 0; i < out; ++i) {
      const double src = std::max(0.0, (i + 0.5) * scale - 0.5);
      const int lo = std::min(static_cast<int>(src), in - 1);
      t[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, in - 1), src - lo};
    }
    return t;
  };
  const std::vector<Tap> ty = taps(h, target_h);
  const std::vector<Tap> tx = taps(w, target_w);
  const std::size_t planes = plane_count(input);
  Tensor out(with_spatial(input.shape(), target_h, target_w));
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = input.raw() + p * h * w;
    double* dst = out.raw() + p * target_h * target_w;
    for (int y = 0; y < target_h; ++y) {
      const Tap& a = ty[static_cast<std::size_t>(y)];
      const double* r0 = src + static_cast<std::size_t>(a.lo) * w;
      const double* r1 = src + static_cast<std::size_t>(a.hi) * w;
      for (int x = 0; x < target_w; ++x) {
        const Tap& b = tx[static_cast<std::size_t>(x)];
        const double top = r0[b.lo] + (r0[b.hi] - r0[b.lo]) * b.frac;
        const double bot = r1[b.lo] + (r1[b.hi] - r1[b.lo]) * b.frac;
        dst[static_cast<std::size_t>(y) * target_w + x] = top + (bot - top) * a.frac;
      }
    }
  }
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  if (input.shape() != grad_output.shape()) throw ConfigError("relu backward: shape mismatch");
  Tensor out = grad_output;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(input[i] > 0.0)) out[i] = 0.0;
  }
  return out;
}

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  if (input.dim(1) != weight.dim(1)) {
    throw ConfigError("linear: input features " + std::to_string(input.dim(1)) +
                      " != weight in-features " + std::to_string(weight.dim(1)));
  }
  const int n = input.dim(0);
  const int out_f = weight.dim(0);
  if (static_cast<int>(bias.size()) != out_f) throw ConfigError("linear: bias length mismatch");
  // Fixed summation order, as in gemm_acc.
  const int in_f = weight.dim(1);
  Tensor out({n, out_f});
  for (int i = 0; i < n; ++i) {
    const double* x = input.raw() + static_cast<std::size_t>(i) * in_f;
    for (int j = 0; j < out_f; ++j) {
      const double* w = weight.raw() + static_cast<std::size_t>(j) * in_f;
      double acc = 0.0;
      for (int k = 0; k < in_f; ++k) acc += x[k] * w[k];
      out[static_cast<std::size_t>(i) * out_f + j] = acc + bias[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output) {
  require_rank(input, 2, "linear input");
  const int n = input.dim(0);
  const int in_f = weight.dim(1);
  const int out_f = weight.dim(0);
  if (grad_output.shape() != Shape{n, out_f}) throw ConfigError("linear backward: shape mismatch");
  LinearGrads g;
  g.input = Tensor(input.shape());
  g.weight = Tensor(weight.shape());
  g.bias = Tensor({out_f});
  for (int i = 0; i < n; ++i) {
    const double* x = input.raw() + static_cast<std::size_t>(i) * in_f;
    const double* dy = grad_output.raw() + static_cast<std::size_t>(i) * out_f;
    double* dx = g.input.raw() + static_cast<std::size_t>(i) * in_f;
    for (int j = 0; j < out_f; ++j) {
      const double* w = weight.raw() + static_cast<std::size_t>(j) * in_f;
      double* dw = g.weight.raw() + static_cast<std::size_t>(j) * in_f;
      for (int k = 0; k < in_f; ++k) {
        dx[k] += dy[j] * w[k];
        dw[k] += dy[j] * x[k];
      }
      g.bias[static_cast<std::size_t>(j)] += dy[j];
    }
  }
  return g;
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax");
  Tensor out = logits;
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  for (int i = 0; i < n; ++i) {
    double* row = out.raw() + static_cast<std::size_t>(i) * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int j = 0; j < k; ++j) row[j] /= sum;
  }
  return out;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const int n = logits.dim(0);
  const int k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ConfigError("softmax_cross_entropy: label count does not match batch");
  }
  LossResult r;
  r.grad = softmax(logits);
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw DataError("softmax_cross_entropy: label out of range");
    double* row = r.grad.raw() + static_cast<std::size_t>(i) * k;
    r.loss -= std::log(std::max(row[y], std::numeric_limits<double>::min()));
    row[y] -= 1.0;
    for (int j = 0; j < k; ++j) row[j] /= n;
  }
  r.loss /= n;
  return r;
}

}  // namespace cgf::ops
