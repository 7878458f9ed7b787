#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "rank1/tensor.hpp"

namespace rank1 {

/// Border handling for spatial correlation.
///   valid     no padding, output shrinks by kernel - 1
///   same      zero padding, (kernel - 1) / 2 before and the rest after
///   circular  indices wrap modulo the extent, anchored at the window start:
///             out[o] = sum_i k[i] * in[(o + i) mod n]
enum class PaddingMode { valid, same, circular };

/// Tensor axes in the fixed (channel, vertical, horizontal) order.
enum class Axis { channel = 0, vertical = 1, horizontal = 2 };

inline std::string_view to_string(PaddingMode mode) {
  switch (mode) {
    case PaddingMode::valid: return "valid";
    case PaddingMode::same: return "same";
    case PaddingMode::circular: return "circular";
  }
  return "?";
}

inline std::optional<PaddingMode> parse_padding(std::string_view s) {
  if (s == "valid") return PaddingMode::valid;
  if (s == "same") return PaddingMode::same;
  if (s == "circular") return PaddingMode::circular;
  return std::nullopt;
}

/// Sliding-window bookkeeping along one axis.
struct AxisWindow {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t extent = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  PaddingMode mode = PaddingMode::valid;
  std::size_t before = 0;
  std::size_t out = 0;

  AxisWindow(std::size_t extent_, std::size_t kernel_, PaddingMode mode_, std::size_t stride_ = 1)
      : extent(extent_), kernel(kernel_), stride(stride_), mode(mode_) {
    if (kernel == 0 || extent == 0) throw ShapeError("window: zero-sized kernel or extent");
    if (stride == 0) throw ValueError("window: stride must be positive");
    switch (mode) {
      case PaddingMode::valid:
        if (kernel > extent) {
          throw ShapeError("window: kernel " + std::to_string(kernel) + " larger than input " +
                           std::to_string(extent));
        }
        out = (extent - kernel) / stride + 1;
        break;
      case PaddingMode::same:
        before = (kernel - 1) / 2;
        out = (extent - 1) / stride + 1;
        break;
      case PaddingMode::circular:
        if (kernel > extent) {
          throw ShapeError("window: circular kernel " + std::to_string(kernel) +
                           " larger than input " + std::to_string(extent));
        }
        out = (extent - 1) / stride + 1;
        break;
    }
  }

  /// Input index read by output o at kernel tap i, or npos inside zero padding.
  std::size_t source(std::size_t o, std::size_t i) const {
    const std::size_t s = o * stride + i;
    if (mode == PaddingMode::circular) return s % extent;
    if (s < before || s - before >= extent) return npos;
    return s - before;
  }
};

/// Multi-channel cross-correlation (no kernel flip) summed over channels.
///
/// input [N, H, W], filter [N, d1, d2] -> [H', W']. This is the direct
/// reference form; layers use the im2col route below.
inline Tensor conv2d_multi(const Tensor& input, const Tensor& filter, PaddingMode padding,
                           std::size_t stride = 1) {
  require_rank(input, 3, "conv2d_multi input");
  require_rank(filter, 3, "conv2d_multi filter");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (filter.dim(0) != n) {
    throw ShapeError("conv2d_multi: filter has " + std::to_string(filter.dim(0)) +
                     " channels, input has " + std::to_string(n));
  }
  const std::size_t d1 = filter.dim(1), d2 = filter.dim(2);
  const AxisWindow rows(h, d1, padding, stride), cols(w, d2, padding, stride);
  Tensor out({rows.out, cols.out});
  for (std::size_t oy = 0; oy < rows.out; ++oy) {
    for (std::size_t ox = 0; ox < cols.out; ++ox) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < d1; ++i) {
          const std::size_t y = rows.source(oy, i);
          if (y == AxisWindow::npos) continue;
          for (std::size_t j = 0; j < d2; ++j) {
            const std::size_t x = cols.source(ox, j);
            if (x == AxisWindow::npos) continue;
            acc += filter[(k * d1 + i) * d2 + j] * input[(k * h + y) * w + x];
          }
        }
      }
      out[oy * cols.out + ox] = acc;
    }
  }
  return out;
}

/// Unfold [N, H, W] into columns [N*d1*d2, H'*W'] so that a filter bank
/// [q, N*d1*d2] times the result is the correlation output [q, H'*W'].
/// Row index is (k * d1 + i) * d2 + j, matching a flattened [N, d1, d2] filter.
inline Tensor im2col(const Tensor& input, std::size_t d1, std::size_t d2, PaddingMode padding,
                     std::size_t stride = 1) {
  require_rank(input, 3, "im2col");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2);
  const AxisWindow rows(h, d1, padding, stride), cols(w, d2, padding, stride);
  const std::size_t spatial = rows.out * cols.out;
  Tensor out({n * d1 * d2, spatial});
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < d1; ++i) {
      for (std::size_t j = 0; j < d2; ++j) {
        double* dst = out.data().data() + ((k * d1 + i) * d2 + j) * spatial;
        for (std::size_t oy = 0; oy < rows.out; ++oy) {
          const std::size_t y = rows.source(oy, i);
          for (std::size_t ox = 0; ox < cols.out; ++ox) {
            const std::size_t x = cols.source(ox, j);
            dst[oy * cols.out + ox] =
                (y == AxisWindow::npos || x == AxisWindow::npos) ? 0.0 : input[(k * h + y) * w + x];
          }
        }
      }
    }
  }
  return out;
}

/// Adjoint of im2col: scatter-add columns back into an [N, H, W] image.
inline Tensor col2im(const Tensor& columns, std::size_t n, std::size_t h, std::size_t w,
                     std::size_t d1, std::size_t d2, PaddingMode padding, std::size_t stride = 1) {
  require_rank(columns, 2, "col2im");
  const AxisWindow rows(h, d1, padding, stride), cols(w, d2, padding, stride);
  const std::size_t spatial = rows.out * cols.out;
  if (columns.dim(0) != n * d1 * d2 || columns.dim(1) != spatial) {
    throw ShapeError("col2im: column matrix " + to_string(columns.shape()) +
                     " does not match the requested geometry");
  }
  Tensor out({n, h, w});
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < d1; ++i) {
      for (std::size_t j = 0; j < d2; ++j) {
        const double* src = columns.data().data() + ((k * d1 + i) * d2 + j) * spatial;
        for (std::size_t oy = 0; oy < rows.out; ++oy) {
          const std::size_t y = rows.source(oy, i);
          if (y == AxisWindow::npos) continue;
          for (std::size_t ox = 0; ox < cols.out; ++ox) {
            const std::size_t x = cols.source(ox, j);
            if (x == AxisWindow::npos) continue;
            out[(k * h + y) * w + x] += src[oy * cols.out + ox];
          }
        }
      }
    }
  }
  return out;
}

namespace detail {

inline AxisWindow line_window(const Tensor& input, std::size_t kernel, Axis axis,
                                    PaddingMode padding) {
  return AxisWindow(axis == Axis::vertical ? input.dim(1) : input.dim(2), kernel, padding);
}

}  // namespace detail

/// Per-channel 1-D correlation along a spatial axis.
///
/// input [C, H, W]; kernels [C, d] (one kernel per channel). Output keeps C
/// channels and resizes only the chosen axis.
inline Tensor correlate_lines(const Tensor& input, const Tensor& kernels, Axis axis,
                              PaddingMode padding) {
  require_rank(input, 3, "correlate_lines input");
  require_rank(kernels, 2, "correlate_lines kernels");
  if (axis == Axis::channel) throw ValueError("correlate_lines: axis must be spatial");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (kernels.dim(0) != c) throw ShapeError("correlate_lines: one kernel per channel required");
  const std::size_t d = kernels.dim(1);
  const AxisWindow win = detail::line_window(input, d, axis, padding);
  const bool vertical = axis == Axis::vertical;
  const std::size_t oh = vertical ? win.out : h, ow = vertical ? w : win.out;
  Tensor out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* kern = kernels.data().data() + ch * d;
    const double* src = input.data().data() + ch * h * w;
    double* dst = out.data().data() + ch * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const std::size_t s = win.source(vertical ? y : x, i);
          if (s == AxisWindow::npos) continue;
          acc += kern[i] * (vertical ? src[s * w + x] : src[y * w + s]);
        }
        dst[y * ow + x] = acc;
      }
    }
  }
  return out;
}

struct LineGrads {
  Tensor input;    // [C, H, W]
  Tensor kernels;  // [C, d]
};

/// Gradients of correlate_lines with respect to its input and kernels.
inline LineGrads correlate_lines_backward(const Tensor& input, const Tensor& kernels, Axis axis,
                                          PaddingMode padding, const Tensor& dout) {
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t d = kernels.dim(1);
  const AxisWindow win = detail::line_window(input, d, axis, padding);
  const bool vertical = axis == Axis::vertical;
  const std::size_t oh = vertical ? win.out : h, ow = vertical ? w : win.out;
  if (dout.shape() != Shape{c, oh, ow}) {
    throw ShapeError("correlate_lines_backward: gradient shape " + to_string(dout.shape()));
  }
  LineGrads g{Tensor(input.shape()), Tensor(kernels.shape())};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* kern = kernels.data().data() + ch * d;
    const double* src = input.data().data() + ch * h * w;
    const double* gout = dout.data().data() + ch * oh * ow;
    double* gin = g.input.data().data() + ch * h * w;
    double* gk = g.kernels.data().data() + ch * d;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const double go = gout[y * ow + x];
        if (go == 0.0) continue;
        for (std::size_t i = 0; i < d; ++i) {
          const std::size_t s = win.source(vertical ? y : x, i);
          if (s == AxisWindow::npos) continue;
          const std::size_t at = vertical ? s * w + x : y * w + s;
          gk[i] += go * src[at];
          gin[at] += go * kern[i];
        }
      }
    }
  }
  return g;
}

/// One 1-D convolution pass over a [C, H, W] tensor.
///
/// axis == channel contracts all C channels with a length-C kernel and
/// returns [1, H, W] (padding is irrelevant there). Spatial axes apply the
/// same kernel to every channel independently.
inline Tensor conv1d_axis(const Tensor& input, const Tensor& kernel, Axis axis,
                          PaddingMode padding) {
  require_rank(input, 3, "conv1d_axis input");
  require_rank(kernel, 1, "conv1d_axis kernel");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (axis == Axis::channel) {
    if (kernel.size() != c) {
      throw ShapeError("conv1d_axis: channel kernel of length " + std::to_string(kernel.size()) +
                       " for " + std::to_string(c) + " channels");
    }
    Tensor out({1, h, w});
    for (std::size_t k = 0; k < c; ++k) {
      const double tk = kernel[k];
      const double* src = input.data().data() + k * h * w;
      for (std::size_t i = 0; i < h * w; ++i) out[i] += tk * src[i];
    }
    return out;
  }
  Tensor kernels({c, kernel.size()});
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::copy(kernel.data().begin(), kernel.data().end(), kernels.data().begin() + static_cast<std::ptrdiff_t>(ch * kernel.size()));
  }
  return correlate_lines(input, kernels, axis, padding);
}

/// Take every stride-th row and column of [C, H, W].
inline Tensor subsample(const Tensor& input, std::size_t stride) {
  if (stride == 1) return input;
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = (h - 1) / stride + 1, ow = (w - 1) / stride + 1;
  Tensor out({c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) out(ch, y, x) = input(ch, y * stride, x * stride);
  return out;
}

/// Adjoint of subsample: place values back on the strided grid of [C, H, W].
inline Tensor upsample_zero(const Tensor& grad, std::size_t h, std::size_t w, std::size_t stride) {
  if (stride == 1) return grad;
  const std::size_t c = grad.dim(0), oh = grad.dim(1), ow = grad.dim(2);
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) out(ch, y * stride, x * stride) = grad(ch, y, x);
  return out;
}

}  // namespace rank1
