// Copyright 2026 The avse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable building blocks over channels x frames matrices. Each layer
// owns only its parameters; forward caches are explicit structs so a single
// parameter set can be run concurrently, and backward accumulates into a
// gradient object of the same layer type.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "avse/core.hpp"

namespace avse::nn {

template <class T>
struct NamedTensor {
  std::string name;
  Mat<T>* value;
};

template <class T>
using TensorList = std::vector<NamedTensor<T>>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); drawn in double so float and
// double instances built from one seed hold the same values.
template <class T>
void init_uniform(Mat<T>& m, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = static_cast<T>(uniform(rng, -bound, bound));
}

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// 1x1 convolution: y = W x + b.
template <class T>
struct Pointwise {
  Mat<T> weight;
  Mat<T> bias;  // out x 1, or empty when bias-free

  void init(int in, int out, bool with_bias, Rng& rng) {
    weight.resize(out, in);
    init_uniform(weight, in, rng);
    if (with_bias) {
      bias.resize(out, 1);
      init_uniform(bias, in, rng);
    } else {
      bias.resize(0, 0);
    }
  }

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
  bool has_bias() const { return bias.size() > 0; }

  Mat<T> forward(const Mat<T>& x) const {
    require(x.rows() == weight.cols(),
            "pointwise input width " + std::to_string(x.rows()) +
                " != expected " + std::to_string(weight.cols()));
    Mat<T> y = weight * x;
    if (has_bias()) y.colwise() += bias.col(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, Pointwise& grad) const {
    grad.weight.noalias() += dy * x.transpose();
    if (has_bias()) grad.bias.col(0) += dy.rowwise().sum();
    return weight.transpose() * dy;
  }

  void collect(const std::string& prefix, TensorList<T>& out) {
    out.push_back({prefix + ".weight", &weight});
    if (has_bias()) out.push_back({prefix + ".bias", &bias});
  }
};

template <class T>
struct PRelu {
  Mat<T> alpha;  // 1 x 1

  void init() { alpha = Mat<T>::Constant(1, 1, T(0.25)); }

  Mat<T> forward(const Mat<T>& x) const {
    const T a = alpha(0, 0);
    return x.unaryExpr([a](T v) { return v > T(0) ? v : a * v; });
  }

  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, PRelu& grad) const {
    const T a = alpha(0, 0);
    Mat<T> dx(x.rows(), x.cols());
    T da = T(0);
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T v = x(i, j);
        if (v > T(0)) {
          dx(i, j) = dy(i, j);
        } else {
          dx(i, j) = a * dy(i, j);
          da += v * dy(i, j);
        }
      }
    grad.alpha(0, 0) += da;
    return dx;
  }

  void collect(const std::string& prefix, TensorList<T>& out) {
    out.push_back({prefix + ".alpha", &alpha});
  }
};

template <class T>
Mat<T> relu(const Mat<T>& x) {
  return x.cwiseMax(T(0));
}

// dy masked by the ReLU output y (y > 0 <=> x > 0).
template <class T>
Mat<T> relu_backward(const Mat<T>& y, const Mat<T>& dy) {
  return (y.array() > T(0)).select(dy, Mat<T>::Zero(dy.rows(), dy.cols()));
}

template <class T>
struct NormCache {
  Mat<T> normalized;
  T inv_std = T(0);
};

// Global layer normalisation: statistics over all channels and frames,
// per-channel gain and shift. With one column this is plain layer norm.
template <class T>
struct GlobalNorm {
  static constexpr double kEps = 1e-8;
  Mat<T> gain;   // C x 1
  Mat<T> shift;  // C x 1

  void init(int channels) {
    gain = Mat<T>::Ones(channels, 1);
    shift = Mat<T>::Zero(channels, 1);
  }

  Mat<T> forward(const Mat<T>& x, NormCache<T>* cache) const {
    require(x.rows() == gain.rows(), "norm input width mismatch");
    const T n = static_cast<T>(x.size());
    const T mean = x.sum() / n;
    const T var = (x.array() - mean).square().sum() / n;
    const T inv_std = T(1) / std::sqrt(var + static_cast<T>(kEps));
    Mat<T> xhat = (x.array() - mean) * inv_std;
    Mat<T> y = gain.col(0).asDiagonal() * xhat;
    y.colwise() += shift.col(0);
    if (cache) {
      cache->normalized = std::move(xhat);
      cache->inv_std = inv_std;
    }
    return y;
  }

  Mat<T> backward(const NormCache<T>& cache, const Mat<T>& dy,
                  GlobalNorm& grad) const {
    const Mat<T>& xhat = cache.normalized;
    grad.gain.col(0) += (dy.array() * xhat.array()).rowwise().sum().matrix();
    grad.shift.col(0) += dy.rowwise().sum();
    Mat<T> dxhat = gain.col(0).asDiagonal() * dy;
    const T n = static_cast<T>(dy.size());
    const T mean_d = dxhat.sum() / n;
    const T mean_dx = (dxhat.array() * xhat.array()).sum() / n;
    return ((dxhat.array() - mean_d - xhat.array() * mean_dx) * cache.inv_std)
        .matrix();
  }

  void collect(const std::string& prefix, TensorList<T>& out) {
    out.push_back({prefix + ".gain", &gain});
    out.push_back({prefix + ".shift", &shift});
  }
};

// Per-channel dilated convolution, zero padded so that output length equals
// input length (non-causal, centred kernel).
template <class T>
struct Depthwise {
  Mat<T> weight;  // C x K
  Mat<T> bias;    // C x 1
  int dilation = 1;

  void init(int channels, int kernel, int dil, Rng& rng) {
    require(kernel % 2 == 1, "depthwise kernel must be odd");
    dilation = dil;
    weight.resize(channels, kernel);
    init_uniform(weight, kernel, rng);
    bias.resize(channels, 1);
    init_uniform(bias, kernel, rng);
  }

  Mat<T> forward(const Mat<T>& x) const {
    const Eigen::Index frames = x.cols();
    const int half = static_cast<int>(weight.cols() / 2);
    Mat<T> y(x.rows(), frames);
    y.colwise() = bias.col(0);
    for (Eigen::Index k = 0; k < weight.cols(); ++k) {
      const Eigen::Index off = (k - half) * dilation;
      const Eigen::Index lo = std::max<Eigen::Index>(0, -off);
      const Eigen::Index hi = std::min<Eigen::Index>(frames, frames - off);
      if (hi <= lo) continue;
      y.middleCols(lo, hi - lo).noalias() +=
          weight.col(k).asDiagonal() * x.middleCols(lo + off, hi - lo);
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, Depthwise& grad) const {
    const Eigen::Index frames = x.cols();
    const int half = static_cast<int>(weight.cols() / 2);
    Mat<T> dx = Mat<T>::Zero(x.rows(), frames);
    grad.bias.col(0) += dy.rowwise().sum();
    for (Eigen::Index k = 0; k < weight.cols(); ++k) {
      const Eigen::Index off = (k - half) * dilation;
      const Eigen::Index lo = std::max<Eigen::Index>(0, -off);
      const Eigen::Index hi = std::min<Eigen::Index>(frames, frames - off);
      if (hi <= lo) continue;
      const auto dseg = dy.middleCols(lo, hi - lo);
      const auto xseg = x.middleCols(lo + off, hi - lo);
      grad.weight.col(k) +=
          (dseg.array() * xseg.array()).rowwise().sum().matrix();
      dx.middleCols(lo + off, hi - lo).noalias() +=
          weight.col(k).asDiagonal() * dseg;
    }
    return dx;
  }

  void collect(const std::string& prefix, TensorList<T>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
};

// Full temporal convolution with replicate padding: a constant input
// sequence maps to a constant output sequence.
template <class T>
struct TemporalConv {
  Mat<T> weight;  // out x (in * K), tap-major blocks
  Mat<T> bias;    // out x 1
  int kernel = 3;

  void init(int in, int out, int k, Rng& rng) {
    require(k % 2 == 1, "temporal kernel must be odd");
    kernel = k;
    weight.resize(out, in * k);
    init_uniform(weight, in * k, rng);
    bias.resize(out, 1);
    init_uniform(bias, in * k, rng);
  }

  int in_dim() const { return static_cast<int>(weight.cols() / kernel); }

  Mat<T> stack(const Mat<T>& x) const {
    const Eigen::Index in = x.rows();
    const Eigen::Index frames = x.cols();
    const int half = kernel / 2;
    Mat<T> s(in * kernel, frames);
    for (int k = 0; k < kernel; ++k)
      for (Eigen::Index t = 0; t < frames; ++t) {
        const Eigen::Index src =
            std::clamp<Eigen::Index>(t + k - half, 0, frames - 1);
        s.block(k * in, t, in, 1) = x.col(src);
      }
    return s;
  }

  Mat<T> forward(const Mat<T>& x, Mat<T>* stacked) const {
    require(x.rows() == in_dim(), "temporal conv input width mismatch");
    Mat<T> s = stack(x);
    Mat<T> y = weight * s;
    y.colwise() += bias.col(0);
    if (stacked) *stacked = std::move(s);
    return y;
  }

  // Input gradients are not needed: this layer always reads raw features.
  void backward(const Mat<T>& stacked, const Mat<T>& dy,
                TemporalConv& grad) const {
    grad.weight.noalias() += dy * stacked.transpose();
    grad.bias.col(0) += dy.rowwise().sum();
  }

  void collect(const std::string& prefix, TensorList<T>& out) {
    out.push_back({prefix + ".weight", &weight});
    out.push_back({prefix + ".bias", &bias});
  }
};

inline int frame_count(std::size_t length, int window, int stride) {
  if (length < static_cast<std::size_t>(window)) return 0;
  return static_cast<int>((length - window) / stride) + 1;
}

// Window x frames matrix of strided signal segments.
template <class T, class S>
Mat<T> frame_signal(std::span<const S> x, int window, int stride) {
  const int frames = frame_count(x.size(), window, stride);
  require(frames > 0, "signal of length " + std::to_string(x.size()) +
                          " is shorter than the window " +
                          std::to_string(window));
  Mat<T> out(window, frames);
  for (int t = 0; t < frames; ++t)
    for (int i = 0; i < window; ++i)
      out(i, t) = static_cast<T>(x[static_cast<std::size_t>(t) * stride + i]);
  return out;
}

// Overlap-add of window x frames segments into `length` samples; samples not
// covered by any frame are zero and segments past `length` are dropped.
template <class T>
std::vector<T> overlap_add(const Mat<T>& segments, int stride,
                           std::size_t length) {
  std::vector<T> out(length, T(0));
  for (Eigen::Index t = 0; t < segments.cols(); ++t)
    for (Eigen::Index i = 0; i < segments.rows(); ++i) {
      const std::size_t n = static_cast<std::size_t>(t) * stride + i;
      if (n < length) out[n] += segments(i, t);
    }
  return out;
}

template <class T>
Mat<T> overlap_add_backward(std::span<const T> dout, int window, int stride,
                            Eigen::Index frames) {
  Mat<T> d(window, frames);
  for (Eigen::Index t = 0; t < frames; ++t)
    for (int i = 0; i < window; ++i) {
      const std::size_t n = static_cast<std::size_t>(t) * stride + i;
      d(i, t) = n < dout.size() ? dout[n] : T(0);
    }
  return d;
}

}  // namespace avse::nn
