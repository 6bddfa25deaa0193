#pragma once

// Raw compute kernels for strided n-d convolution and pooling. Spatial ranks
// 1 and 2 are embedded into a 3-d geometry with unit leading axes.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "dvnet/core/error.hpp"
#include "dvnet/core/parallel.hpp"
#include "dvnet/tensor/tensor.hpp"

namespace dvnet::kernels {

using Index = std::int64_t;

struct Geometry {
  std::array<Index, 3> in{1, 1, 1};
  std::array<Index, 3> out{1, 1, 1};
  std::array<Index, 3> kernel{1, 1, 1};
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> pad{0, 0, 0};

  Index in_size() const { return in[0] * in[1] * in[2]; }
  Index out_size() const { return out[0] * out[1] * out[2]; }
  Index kernel_size() const { return kernel[0] * kernel[1] * kernel[2]; }
  bool pointwise() const {
    for (int a = 0; a < 3; ++a)
      if (kernel[a] != 1 || stride[a] != 1 || pad[a] != 0) return false;
    return true;
  }
};

inline Index conv_out_extent(Index n, Index k, Index stride, Index pad) {
  return (n + 2 * pad - k) / stride + 1;
}

inline Index conv_transpose_out_extent(Index n, Index k, Index stride, Index pad, Index output_pad) {
  return stride * (n - 1) + k - 2 * pad + output_pad;
}

/// Geometry of a forward convolution mapping `in_spatial` with a kernel of
/// `kernel_spatial` extents.
inline Geometry conv_geometry(const Shape& in_spatial, const Shape& kernel_spatial, Index stride, Index pad,
                              const char* stage = "conv_nd") {
  require(in_spatial.size() >= 1 && in_spatial.size() <= 3, stage,
          "spatial rank must be 1, 2 or 3, got " + std::to_string(in_spatial.size()));
  require(kernel_spatial.size() == in_spatial.size(), stage,
          "kernel spatial rank " + std::to_string(kernel_spatial.size()) + " differs from input spatial rank " +
              std::to_string(in_spatial.size()));
  require(stride >= 1 && pad >= 0, stage, "stride must be >= 1 and padding >= 0");
  Geometry g;
  const std::size_t offset = 3 - in_spatial.size();
  for (std::size_t a = 0; a < in_spatial.size(); ++a) {
    const std::size_t d = a + offset;
    g.in[d] = in_spatial[a];
    g.kernel[d] = kernel_spatial[a];
    g.stride[d] = stride;
    g.pad[d] = pad;
    require(g.kernel[d] >= 1, stage, "kernel extent on spatial axis " + std::to_string(a) + " must be positive");
    require(in_spatial[a] + 2 * pad >= kernel_spatial[a], stage,
            "spatial axis " + std::to_string(a) + ": kernel extent " + std::to_string(kernel_spatial[a]) +
                " exceeds padded input extent " + std::to_string(in_spatial[a] + 2 * pad));
    g.out[d] = conv_out_extent(in_spatial[a], kernel_spatial[a], stride, pad);
  }
  return g;
}

inline Shape out_spatial(const Geometry& g, std::size_t rank) {
  Shape s;
  for (std::size_t d = 3 - rank; d < 3; ++d) s.push_back(g.out[d]);
  return s;
}

inline Shape in_spatial(const Geometry& g, std::size_t rank) {
  Shape s;
  for (std::size_t d = 3 - rank; d < 3; ++d) s.push_back(g.in[d]);
  return s;
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

/// Column chunk for im2col buffers; a function of the problem only, never of
/// the thread count, so that results are reproducible.
inline Index column_chunk(Index rows, Index columns) {
  constexpr Index kBudget = Index{1} << 22;  // elements per im2col buffer
  Index chunk = std::max<Index>(256, kBudget / std::max<Index>(1, rows));
  return std::min(chunk, columns);
}

/// Output columns [j0, j0 + count) of a chunk, split into runs along the
/// fastest output axis. Each run starts at input corner (z, y, x) before the
/// kernel offset is added.
struct ChunkCoords {
  struct Run {
    Index col, length, z, y, x;
  };
  std::vector<Run> runs;

  void fill(const Geometry& g, Index j0, Index count) {
    runs.clear();
    Index j = j0;
    const Index end = j0 + count;
    while (j < end) {
      const Index ox = j % g.out[2];
      const Index oy = (j / g.out[2]) % g.out[1];
      const Index oz = j / (g.out[2] * g.out[1]);
      const Index len = std::min(g.out[2] - ox, end - j);
      runs.push_back({j - j0, len, oz * g.stride[0] - g.pad[0], oy * g.stride[1] - g.pad[1], ox * g.stride[2] - g.pad[2]});
      j += len;
    }
  }
};

/// Valid sub-range [lo, hi) of a run of `len` samples x0 + i*stride within [0, n).
inline void valid_range(Index x0, Index stride, Index len, Index n, Index& lo, Index& hi) {
  lo = x0 >= 0 ? 0 : (-x0 + stride - 1) / stride;
  hi = x0 >= n ? 0 : std::min(len, (n - 1 - x0) / stride + 1);
  if (hi < lo) hi = lo;
}

template <class T>
void im2col(const T* in, Index channels, const Geometry& g, const ChunkCoords& c, Index count, T* cols) {
  const Index iv = g.in_size();
  const Index sx = g.stride[2];
  for (Index ci = 0; ci < channels; ++ci) {
    const T* src = in + ci * iv;
    for (Index kz = 0; kz < g.kernel[0]; ++kz)
      for (Index ky = 0; ky < g.kernel[1]; ++ky)
        for (Index kx = 0; kx < g.kernel[2]; ++kx) {
          T* row = cols;
          cols += count;
          for (const auto& r : c.runs) {
            T* dst = row + r.col;
            const Index iz = r.z + kz, iy = r.y + ky;
            if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) {
              std::fill(dst, dst + r.length, T{0});
              continue;
            }
            const Index x0 = r.x + kx;
            Index lo, hi;
            valid_range(x0, sx, r.length, g.in[2], lo, hi);
            const T* line = src + (iz * g.in[1] + iy) * g.in[2] + x0;
            std::fill(dst, dst + lo, T{0});
            if (sx == 1)
              std::copy(line + lo, line + hi, dst + lo);
            else
              for (Index i = lo; i < hi; ++i) dst[i] = line[i * sx];
            std::fill(dst + hi, dst + r.length, T{0});
          }
        }
  }
}

template <class T>
void col2im_add(const T* cols, Index channels, const Geometry& g, const ChunkCoords& c, Index count, T* in) {
  const Index iv = g.in_size();
  const Index sx = g.stride[2];
  for (Index ci = 0; ci < channels; ++ci) {
    T* dst_c = in + ci * iv;
    for (Index kz = 0; kz < g.kernel[0]; ++kz)
      for (Index ky = 0; ky < g.kernel[1]; ++ky)
        for (Index kx = 0; kx < g.kernel[2]; ++kx) {
          const T* row = cols;
          cols += count;
          for (const auto& r : c.runs) {
            const Index iz = r.z + kz, iy = r.y + ky;
            if (iz < 0 || iz >= g.in[0] || iy < 0 || iy >= g.in[1]) continue;
            const Index x0 = r.x + kx;
            Index lo, hi;
            valid_range(x0, sx, r.length, g.in[2], lo, hi);
            T* line = dst_c + (iz * g.in[1] + iy) * g.in[2] + x0;
            const T* src = row + r.col;
            if (sx == 1)
              for (Index i = lo; i < hi; ++i) line[i] += src[i];
            else
              for (Index i = lo; i < hi; ++i) line[i * sx] += src[i];
          }
        }
  }
}

}  // namespace detail

/// out[n, co, o] = sum_{ci, kk} w[co, ci, kk] * in[n, ci, o*stride - pad + kk]
/// (cross-correlation). `out` is overwritten.
template <class T>
void conv_forward(const T* in, Index batch, Index in_channels, const T* weight, Index out_channels, const Geometry& g,
                  T* out) {
  using namespace detail;
  const Index rows = in_channels * g.kernel_size();
  const Index ov = g.out_size(), iv = g.in_size();
  const ConstMap<T> w(weight, out_channels, rows, Eigen::OuterStride<>(rows));
  const Index chunk = column_chunk(g.pointwise() ? 0 : rows, ov);
  const Index chunks = (ov + chunk - 1) / chunk;
  for (Index n = 0; n < batch; ++n) {
    const T* in_n = in + n * in_channels * iv;
    T* out_n = out + n * out_channels * ov;
    parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t b, std::size_t e) {
      std::vector<T> cols;
      ChunkCoords coords;
      for (std::size_t c = b; c < e; ++c) {
        const Index j0 = static_cast<Index>(c) * chunk;
        const Index count = std::min(chunk, ov - j0);
        MutMap<T> o(out_n + j0, out_channels, count, Eigen::OuterStride<>(ov));
        if (g.pointwise()) {
          o.noalias() = w * ConstMap<T>(in_n + j0, in_channels, count, Eigen::OuterStride<>(iv));
        } else {
          cols.resize(static_cast<std::size_t>(rows * count));
          coords.fill(g, j0, count);
          im2col(in_n, in_channels, g, coords, count, cols.data());
          o.noalias() = w * ConstMap<T>(cols.data(), rows, count, Eigen::OuterStride<>(count));
        }
      }
    });
  }
}

/// in_grad += adjoint of conv_forward applied to out_grad.
template <class T>
void conv_backward_input(const T* out_grad, Index batch, Index out_channels, const T* weight, Index in_channels,
                         const Geometry& g, T* in_grad) {
  using namespace detail;
  const Index rows = in_channels * g.kernel_size();
  const Index ov = g.out_size(), iv = g.in_size();
  const ConstMap<T> w(weight, out_channels, rows, Eigen::OuterStride<>(rows));
  if (g.pointwise()) {
    const Index chunk = column_chunk(0, ov);
    const Index chunks = (ov + chunk - 1) / chunk;
    for (Index n = 0; n < batch; ++n) {
      const T* go = out_grad + n * out_channels * ov;
      T* gi = in_grad + n * in_channels * iv;
      parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t b, std::size_t e) {
        for (std::size_t c = b; c < e; ++c) {
          const Index j0 = static_cast<Index>(c) * chunk;
          const Index count = std::min(chunk, ov - j0);
          MutMap<T>(gi + j0, in_channels, count, Eigen::OuterStride<>(iv)).noalias() +=
              w.transpose() * ConstMap<T>(go + j0, out_channels, count, Eigen::OuterStride<>(ov));
        }
      });
    }
    return;
  }
  // Scatter-add regions of neighbouring chunks overlap, so chunks run in order.
  const Index chunk = column_chunk(rows, ov);
  std::vector<T> cols;
  ChunkCoords coords;
  for (Index n = 0; n < batch; ++n) {
    const T* go = out_grad + n * out_channels * ov;
    T* gi = in_grad + n * in_channels * iv;
    for (Index j0 = 0; j0 < ov; j0 += chunk) {
      const Index count = std::min(chunk, ov - j0);
      cols.resize(static_cast<std::size_t>(rows * count));
      MutMap<T> cm(cols.data(), rows, count, Eigen::OuterStride<>(count));
      cm.noalias() = w.transpose() * ConstMap<T>(go + j0, out_channels, count, Eigen::OuterStride<>(ov));
      coords.fill(g, j0, count);
      col2im_add(cols.data(), in_channels, g, coords, count, gi);
    }
  }
}

/// weight_grad += d<out_grad, conv_forward(in, w)>/dw.
template <class T>
void conv_backward_weight(const T* in, const T* out_grad, Index batch, Index in_channels, Index out_channels,
                          const Geometry& g, T* weight_grad) {
  using namespace detail;
  const Index rows = in_channels * g.kernel_size();
  const Index ov = g.out_size(), iv = g.in_size();
  MutMap<T> gw(weight_grad, out_channels, rows, Eigen::OuterStride<>(rows));
  const Index chunk = column_chunk(g.pointwise() ? 0 : rows, ov);
  const Index chunks = (ov + chunk - 1) / chunk;

  auto accumulate = [&](Index n, Index c, MutMap<T>& target, std::vector<T>& cols, ChunkCoords& coords) {
    const T* in_n = in + n * in_channels * iv;
    const T* go = out_grad + n * out_channels * ov;
    const Index j0 = c * chunk;
    const Index count = std::min(chunk, ov - j0);
    const ConstMap<T> gom(go + j0, out_channels, count, Eigen::OuterStride<>(ov));
    if (g.pointwise()) {
      target.noalias() += gom * ConstMap<T>(in_n + j0, in_channels, count, Eigen::OuterStride<>(iv)).transpose();
    } else {
      cols.resize(static_cast<std::size_t>(rows * count));
      coords.fill(g, j0, count);
      im2col(in_n, in_channels, g, coords, count, cols.data());
      target.noalias() += gom * ConstMap<T>(cols.data(), rows, count, Eigen::OuterStride<>(count)).transpose();
    }
  };

  if (execution().deterministic || execution().threads <= 1) {
    std::vector<T> cols;
    ChunkCoords coords;
    for (Index n = 0; n < batch; ++n)
      for (Index c = 0; c < chunks; ++c) accumulate(n, c, gw, cols, coords);
    return;
  }
  // Fast mode: per-worker partial sums; the final rounding depends on the split.
  const auto tasks = static_cast<std::size_t>(batch * chunks);
  std::vector<std::vector<T>> partials;
  std::mutex partial_mutex;
  parallel_for(tasks, [&](std::size_t b, std::size_t e) {
    std::vector<T> local(static_cast<std::size_t>(out_channels * rows), T{0});
    MutMap<T> lm(local.data(), out_channels, rows, Eigen::OuterStride<>(rows));
    std::vector<T> cols;
    ChunkCoords coords;
    for (std::size_t t = b; t < e; ++t)
      accumulate(static_cast<Index>(t) / chunks, static_cast<Index>(t) % chunks, lm, cols, coords);
    std::lock_guard lock(partial_mutex);
    partials.push_back(std::move(local));
  });
  for (const auto& p : partials)
    for (Index i = 0; i < out_channels * rows; ++i) weight_grad[i] += p[static_cast<std::size_t>(i)];
}

/// Mean over each window; `planes` = batch * channels.
template <class T>
void avg_pool_forward(const T* in, Index planes, const Geometry& g, T* out) {
  const Index iv = g.in_size(), ov = g.out_size();
  const T scale = T{1} / static_cast<T>(g.kernel_size());
  for (Index p = 0; p < planes; ++p) {
    const T* src = in + p * iv;
    T* dst = out + p * ov;
    for (Index oz = 0; oz < g.out[0]; ++oz)
      for (Index oy = 0; oy < g.out[1]; ++oy)
        for (Index ox = 0; ox < g.out[2]; ++ox) {
          T acc{0};
          for (Index kz = 0; kz < g.kernel[0]; ++kz)
            for (Index ky = 0; ky < g.kernel[1]; ++ky)
              for (Index kx = 0; kx < g.kernel[2]; ++kx)
                acc += src[((oz * g.stride[0] + kz) * g.in[1] + oy * g.stride[1] + ky) * g.in[2] + ox * g.stride[2] + kx];
          dst[(oz * g.out[1] + oy) * g.out[2] + ox] = acc * scale;
        }
  }
}

template <class T>
void avg_pool_backward(const T* out_grad, Index planes, const Geometry& g, T* in_grad) {
  const Index iv = g.in_size(), ov = g.out_size();
  const T scale = T{1} / static_cast<T>(g.kernel_size());
  for (Index p = 0; p < planes; ++p) {
    const T* src = out_grad + p * ov;
    T* dst = in_grad + p * iv;
    for (Index oz = 0; oz < g.out[0]; ++oz)
      for (Index oy = 0; oy < g.out[1]; ++oy)
        for (Index ox = 0; ox < g.out[2]; ++ox) {
          const T v = src[(oz * g.out[1] + oy) * g.out[2] + ox] * scale;
          for (Index kz = 0; kz < g.kernel[0]; ++kz)
            for (Index ky = 0; ky < g.kernel[1]; ++ky)
              for (Index kx = 0; kx < g.kernel[2]; ++kx)
                dst[((oz * g.stride[0] + kz) * g.in[1] + oy * g.stride[1] + ky) * g.in[2] + ox * g.stride[2] + kx] += v;
        }
  }
}

}  // namespace dvnet::kernels
