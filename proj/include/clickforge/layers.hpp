#pragma once

#include "clickforge/params.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <string>

namespace clickforge {

/// channels × (height·width) activations, pixels in row-major order.
template <typename Scalar>
struct FeatureMap {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  int height = 0;
  int width = 0;
  Matrix data;

  FeatureMap() = default;
  FeatureMap(int channels, int h, int w) : height(h), width(w), data(Matrix::Zero(channels, Eigen::Index(h) * w)) {}
  FeatureMap(int h, int w, Matrix m) : height(h), width(w), data(std::move(m)) {}

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index pixels() const { return data.cols(); }
};

// ---------------------------------------------------------------------------
// Convolution (stride 1, "same" padding of dilation·(k−1)/2, zero fill)

template <typename Scalar>
struct ConvCache {
  std::string name;
  int kernel = 1;
  int dilation = 1;
  int in_channels = 0;
  int height = 0;
  int width = 0;
  /// im2col patches, (in_channels·k·k) × pixels. For 1×1 kernels this is the input.
  typename FeatureMap<Scalar>::Matrix columns;
};

template <typename Scalar>
typename FeatureMap<Scalar>::Matrix im2col(const FeatureMap<Scalar>& in, int kernel, int dilation) {
  const int h = in.height;
  const int w = in.width;
  const int half = kernel / 2;
  typename FeatureMap<Scalar>::Matrix cols(Eigen::Index(in.channels()) * kernel * kernel, in.pixels());
  cols.setZero();
  for (int c = 0; c < in.channels(); ++c) {
    const Scalar* src = in.data.row(c).data();
    for (int ky = 0; ky < kernel; ++ky) {
      const int oy = (ky - half) * dilation;
      for (int kx = 0; kx < kernel; ++kx) {
        const int ox = (kx - half) * dilation;
        Scalar* dst = cols.row((Eigen::Index(c) * kernel + ky) * kernel + kx).data();
        const int x0 = std::max(0, -ox);
        const int x1 = std::min(w, w - ox);
        if (x0 >= x1) continue;
        for (int y = std::max(0, -oy); y < std::min(h, h - oy); ++y) {
          std::copy(src + (y + oy) * w + x0 + ox, src + (y + oy) * w + x1 + ox, dst + y * w + x0);
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
FeatureMap<Scalar> col2im(const typename FeatureMap<Scalar>::Matrix& cols, int channels, int h, int w, int kernel,
                          int dilation) {
  const int half = kernel / 2;
  FeatureMap<Scalar> out(channels, h, w);
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = out.data.row(c).data();
    for (int ky = 0; ky < kernel; ++ky) {
      const int oy = (ky - half) * dilation;
      for (int kx = 0; kx < kernel; ++kx) {
        const int ox = (kx - half) * dilation;
        const Scalar* src = cols.row((Eigen::Index(c) * kernel + ky) * kernel + kx).data();
        const int x0 = std::max(0, -ox);
        const int x1 = std::min(w, w - ox);
        if (x0 >= x1) continue;
        for (int y = std::max(0, -oy); y < std::min(h, h - oy); ++y) {
          Scalar* d = dst + (y + oy) * w + ox;
          const Scalar* s = src + y * w;
          for (int x = x0; x < x1; ++x) d[x] += s[x];
        }
      }
    }
  }
  return out;
}

/// Weight tensor "<name>.weight" has shape [out, in, k, k]; bias "<name>.bias" [out].
template <typename Scalar>
FeatureMap<Scalar> conv2d(const ParamSet<Scalar>& params, const std::string& name, const FeatureMap<Scalar>& in,
                          int kernel, int dilation, ConvCache<Scalar>& cache) {
  const auto& weight = params.at(name + ".weight");
  const auto& bias = params.at(name + ".bias");
  if (weight.shape.size() != 4 || weight.shape[1] != in.channels() || weight.shape[2] != kernel)
    throw DimensionError("conv '" + name + "': weight " + shape_string(weight.shape) + " does not accept " +
                         std::to_string(in.channels()) + " input channels");
  cache.name = name;
  cache.kernel = kernel;
  cache.dilation = dilation;
  cache.in_channels = in.channels();
  cache.height = in.height;
  cache.width = in.width;
  cache.columns = kernel == 1 ? in.data : im2col(in, kernel, dilation);
  FeatureMap<Scalar> out(in.height, in.width, weight.as_matrix() * cache.columns);
  out.data.colwise() += bias.values;
  return out;
}

/// Accumulates weight/bias gradients into `grads`; returns d(input) when requested.
template <typename Scalar>
FeatureMap<Scalar> conv2d_backward(const ParamSet<Scalar>& params, const ConvCache<Scalar>& cache,
                                   const FeatureMap<Scalar>& dout, ParamSet<Scalar>& grads, bool need_input_grad) {
  const auto weight = params.at(cache.name + ".weight").as_matrix();
  grads.mutable_at(cache.name + ".weight").as_matrix().noalias() += dout.data * cache.columns.transpose();
  grads.mutable_at(cache.name + ".bias").values += dout.data.rowwise().sum().transpose();
  if (!need_input_grad) return {};
  typename FeatureMap<Scalar>::Matrix dcols = weight.transpose() * dout.data;
  if (cache.kernel == 1) return FeatureMap<Scalar>(cache.height, cache.width, std::move(dcols));
  return col2im<Scalar>(dcols, cache.in_channels, cache.height, cache.width, cache.kernel, cache.dilation);
}

// ---------------------------------------------------------------------------
// Pointwise and resampling ops

template <typename Scalar>
void relu_inplace(FeatureMap<Scalar>& x) {
  x.data = x.data.cwiseMax(Scalar(0));
}

/// Masks `grad` by the post-activation output (> 0 passes).
template <typename Scalar>
void relu_backward_inplace(const FeatureMap<Scalar>& activated, FeatureMap<Scalar>& grad) {
  grad.data = (activated.data.array() > Scalar(0)).select(grad.data, Scalar(0));
}

/// 2×2 average pooling; odd extents round up and edge windows average over the
/// pixels they cover.
template <typename Scalar>
FeatureMap<Scalar> avg_pool2(const FeatureMap<Scalar>& in) {
  const int oh = (in.height + 1) / 2;
  const int ow = (in.width + 1) / 2;
  FeatureMap<Scalar> out(in.channels(), oh, ow);
  for (int c = 0; c < in.channels(); ++c) {
    const Scalar* src = in.data.row(c).data();
    Scalar* dst = out.data.row(c).data();
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) dst[(y / 2) * ow + x / 2] += src[y * in.width + x];
  }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const int count = (std::min(in.height, 2 * y + 2) - 2 * y) * (std::min(in.width, 2 * x + 2) - 2 * x);
      if (count != 4) out.data.col(y * ow + x) *= Scalar(4) / Scalar(count);
    }
  out.data *= Scalar(0.25);
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> avg_pool2_backward(const FeatureMap<Scalar>& dout, int in_height, int in_width) {
  FeatureMap<Scalar> scaled = dout;
  for (int y = 0; y < dout.height; ++y)
    for (int x = 0; x < dout.width; ++x) {
      const int count = (std::min(in_height, 2 * y + 2) - 2 * y) * (std::min(in_width, 2 * x + 2) - 2 * x);
      if (count != 4) scaled.data.col(y * dout.width + x) *= Scalar(4) / Scalar(count);
    }
  scaled.data *= Scalar(0.25);
  FeatureMap<Scalar> din(dout.channels(), in_height, in_width);
  for (int c = 0; c < dout.channels(); ++c) {
    const Scalar* src = scaled.data.row(c).data();
    Scalar* dst = din.data.row(c).data();
    for (int y = 0; y < in_height; ++y)
      for (int x = 0; x < in_width; ++x) dst[y * in_width + x] = src[(y / 2) * dout.width + x / 2];
  }
  return din;
}

/// Nearest-neighbour 2× upsampling cropped to (h, w).
template <typename Scalar>
FeatureMap<Scalar> upsample2(const FeatureMap<Scalar>& in, int h, int w) {
  FeatureMap<Scalar> out(in.channels(), h, w);
  for (int c = 0; c < in.channels(); ++c) {
    const Scalar* src = in.data.row(c).data();
    Scalar* dst = out.data.row(c).data();
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) dst[y * w + x] = src[(y / 2) * in.width + x / 2];
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> upsample2_backward(const FeatureMap<Scalar>& dout, int in_height, int in_width) {
  FeatureMap<Scalar> din(dout.channels(), in_height, in_width);
  for (int c = 0; c < dout.channels(); ++c) {
    const Scalar* src = dout.data.row(c).data();
    Scalar* dst = din.data.row(c).data();
    for (int y = 0; y < dout.height; ++y)
      for (int x = 0; x < dout.width; ++x) dst[(y / 2) * in_width + x / 2] += src[y * dout.width + x];
  }
  return din;
}

/// Channel concatenation [a; b].
template <typename Scalar>
FeatureMap<Scalar> concat(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b) {
  if (a.height != b.height || a.width != b.width) throw DimensionError("concat: spatial extents differ");
  FeatureMap<Scalar> out(a.channels() + b.channels(), a.height, a.width);
  out.data.topRows(a.channels()) = a.data;
  out.data.bottomRows(b.channels()) = b.data;
  return out;
}

}  // namespace clickforge
