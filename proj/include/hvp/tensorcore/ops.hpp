// Copyright 2026 The HVP Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hvp/tensorcore/tensor.hpp"

namespace hvp::ad {

namespace detail {

template <class T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMajor<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMajor<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <class T>
void accumulate(Node<T>& parent, const std::vector<T>& delta) {
  auto& g = parent.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// Unfolds sliding k x k windows of a [C x H x W] block into columns:
// row (c, ky, kx), column (oy, ox).
template <class T>
void im2col(const T* in, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t k, std::size_t stride, std::size_t out_h, std::size_t out_w, T* cols) {
  const std::size_t n_cols = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = cols + ((c * k + ky) * k + kx) * n_cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const T* src = in + (c * height + oy * stride + ky) * width + kx;
          T* dst = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) dst[ox] = src[ox * stride];
        }
      }
    }
  }
}

// Adjoint of im2col: scatters columns back, summing overlaps.
template <class T>
void col2im(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t k, std::size_t stride, std::size_t out_h, std::size_t out_w, T* out) {
  const std::size_t n_cols = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = cols + ((c * k + ky) * k + kx) * n_cols;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          T* dst = out + (c * height + oy * stride + ky) * width + kx;
          const T* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) dst[ox * stride] += src[ox];
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                      to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  detail::MapMat<T>(out.data(), m, n).noalias() =
      detail::ConstMapMat<T>(a.data().data(), m, k) * detail::ConstMapMat<T>(b.data().data(), k, n);
  return Tensor<T>::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    detail::ConstMapMat<T> dy(self.grad.data(), m, n);
    if (pa.requires_grad) {
      detail::MapMat<T>(pa.ensure_grad().data(), m, k).noalias() +=
          dy * detail::ConstMapMat<T>(pb.data.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      detail::MapMat<T>(pb.ensure_grad().data(), k, n).noalias() +=
          detail::ConstMapMat<T>(pa.data.data(), m, k).transpose() * dy;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic (identical shapes only; no broadcasting)

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) detail::accumulate(*p, self.grad);
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) detail::accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Hadamard product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

/// scale * x + shift, elementwise with constant coefficients.
template <class T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift = T(0)) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x[i] + shift;
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [scale](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * self.grad[i];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require(numel(shape) == x.size(),
                  "reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  return Tensor<T>::make_result(std::move(shape), x.vec(), {x}, [](Node<T>& self) {
    detail::accumulate(*self.parents[0], self.grad);
  });
}

/// Adds a per-channel bias b[C] to x[C x ...].
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require(x.rank() >= 1 && bias.size() == x.dim(0),
                  "add_channel_bias: bias " + to_string(bias.shape()) + " for input " +
                      to_string(x.shape()));
  const std::size_t channels = x.dim(0);
  const std::size_t inner = x.size() / channels;
  std::vector<T> out(x.vec());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bias[c];
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, bias},
                                [channels, inner](Node<T>& self) {
                                  if (self.parents[0]->requires_grad)
                                    detail::accumulate(*self.parents[0], self.grad);
                                  if (self.parents[1]->requires_grad) {
                                    auto& g = self.parents[1]->ensure_grad();
                                    for (std::size_t c = 0; c < channels; ++c) {
                                      T s = T(0);
                                      for (std::size_t i = 0; i < inner; ++i)
                                        s += self.grad[c * inner + i];
                                      g[c] += s;
                                    }
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, tanh, sigmoid };

template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  std::vector<T> out(x.size());
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
      break;
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [kind](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    switch (kind) {
      case Activation::relu:
        // Subgradient 0 at the kink.
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += y[i] > T(0) ? self.grad[i] : T(0);
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (T(1) - y[i] * y[i]);
        break;
      case Activation::sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i] * (T(1) - y[i]);
        break;
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) { return activation(x, Activation::relu); }
template <class T>
Tensor<T> tanh(const Tensor<T>& x) { return activation(x, Activation::tanh); }
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::sigmoid); }

// ---------------------------------------------------------------------------
// Reductions and losses

/// Squared Euclidean distance ||a - b||^2 as a scalar tensor.
template <class T>
Tensor<T> sq_l2(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sq_l2");
  T total = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    total += d * d;
  }
  return Tensor<T>::make_result({1}, {total}, {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T g = self.grad[0];
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += T(2) * g * (pa.data[i] - pb.data[i]);
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= T(2) * g * (pa.data[i] - pb.data[i]);
    }
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return Tensor<T>::make_result({1}, {total}, {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Convolutions (valid padding only)

inline std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride) {
  return (in - k) / stride + 1;
}

/// Cross-correlation of input[C_in x H x W] with kernels[C_out x C_in x k x k].
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride) {
  detail::require(input.rank() == 3 && kernels.rank() == 4,
                  "conv2d: expected [C,H,W] input and [Co,Ci,k,k] kernels, got " +
                      to_string(input.shape()) + " and " + to_string(kernels.shape()));
  detail::require(stride > 0, "conv2d: stride must be positive");
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t c_out = kernels.dim(0), k = kernels.dim(2);
  detail::require(kernels.dim(1) == c_in && kernels.dim(3) == k,
                  "conv2d: kernel " + to_string(kernels.shape()) + " incompatible with input " +
                      to_string(input.shape()));
  detail::require(h >= k && w >= k, "conv2d: kernel " + std::to_string(k) +
                                        " larger than input " + to_string(input.shape()));
  const std::size_t oh = conv_out_size(h, k, stride), ow = conv_out_size(w, k, stride);
  const std::size_t rows = c_in * k * k, cols_n = oh * ow;
  std::vector<T> cols(rows * cols_n);
  detail::im2col(input.data().data(), c_in, h, w, k, stride, oh, ow, cols.data());
  std::vector<T> out(c_out * cols_n);
  detail::MapMat<T>(out.data(), c_out, cols_n).noalias() =
      detail::ConstMapMat<T>(kernels.data().data(), c_out, rows) *
      detail::ConstMapMat<T>(cols.data(), rows, cols_n);
  return Tensor<T>::make_result(
      {c_out, oh, ow}, std::move(out), {input, kernels},
      [=, cols = std::move(cols)](Node<T>& self) {
        auto& pin = *self.parents[0];
        auto& pk = *self.parents[1];
        detail::ConstMapMat<T> dy(self.grad.data(), c_out, cols_n);
        if (pk.requires_grad) {
          detail::MapMat<T>(pk.ensure_grad().data(), c_out, rows).noalias() +=
              dy * detail::ConstMapMat<T>(cols.data(), rows, cols_n).transpose();
        }
        if (pin.requires_grad) {
          std::vector<T> dcols(rows * cols_n);
          detail::MapMat<T>(dcols.data(), rows, cols_n).noalias() =
              detail::ConstMapMat<T>(pk.data.data(), c_out, rows).transpose() * dy;
          detail::col2im(dcols.data(), c_in, h, w, k, stride, oh, ow, pin.ensure_grad().data());
        }
      });
}

/// Transposed convolution: input[C_in x H x W], kernels[C_in x C_out x k x k],
/// output [C_out x ((H-1)*stride+k) x ((W-1)*stride+k)]. It is exactly the
/// gradient of conv2d with respect to its input.
template <class T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride) {
  detail::require(input.rank() == 3 && kernels.rank() == 4,
                  "deconv2d: expected [C,H,W] input and [Ci,Co,k,k] kernels, got " +
                      to_string(input.shape()) + " and " + to_string(kernels.shape()));
  detail::require(stride > 0, "deconv2d: stride must be positive");
  const std::size_t c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t c_out = kernels.dim(1), k = kernels.dim(2);
  detail::require(kernels.dim(0) == c_in && kernels.dim(3) == k,
                  "deconv2d: kernel " + to_string(kernels.shape()) +
                      " incompatible with input " + to_string(input.shape()));
  const std::size_t oh = (h - 1) * stride + k, ow = (w - 1) * stride + k;
  const std::size_t rows = c_out * k * k, cols_n = h * w;
  std::vector<T> cols(rows * cols_n);
  detail::MapMat<T>(cols.data(), rows, cols_n).noalias() =
      detail::ConstMapMat<T>(kernels.data().data(), c_in, rows).transpose() *
      detail::ConstMapMat<T>(input.data().data(), c_in, cols_n);
  std::vector<T> out(c_out * oh * ow, T(0));
  detail::col2im(cols.data(), c_out, oh, ow, k, stride, h, w, out.data());
  return Tensor<T>::make_result(
      {c_out, oh, ow}, std::move(out), {input, kernels}, [=](Node<T>& self) {
        auto& pin = *self.parents[0];
        auto& pk = *self.parents[1];
        std::vector<T> dcols(rows * cols_n);
        detail::im2col(self.grad.data(), c_out, oh, ow, k, stride, h, w, dcols.data());
        detail::ConstMapMat<T> dc(dcols.data(), rows, cols_n);
        if (pin.requires_grad) {
          detail::MapMat<T>(pin.ensure_grad().data(), c_in, cols_n).noalias() +=
              detail::ConstMapMat<T>(pk.data.data(), c_in, rows) * dc;
        }
        if (pk.requires_grad) {
          detail::MapMat<T>(pk.ensure_grad().data(), c_in, rows).noalias() +=
              detail::ConstMapMat<T>(pin.data.data(), c_in, cols_n) * dc.transpose();
        }
      });
}

/// Non-overlapping 2x2 max pooling; odd trailing rows/cols are dropped.
/// Ties route the gradient to the first maximal element.
template <class T>
Tensor<T> maxpool2x2(const Tensor<T>& input) {
  detail::require(input.rank() == 3 && input.dim(1) >= 2 && input.dim(2) >= 2,
                  "maxpool2x2: input " + to_string(input.shape()) + " too small");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto& x = input.vec();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * xo;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (ch * h + 2 * y + dy) * w + 2 * xo + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + y) * ow + xo;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return Tensor<T>::make_result({c, oh, ow}, std::move(out), {input},
                                [argmax = std::move(argmax)](Node<T>& self) {
                                  auto& g = self.parents[0]->ensure_grad();
                                  for (std::size_t o = 0; o < argmax.size(); ++o)
                                    g[argmax[o]] += self.grad[o];
                                });
}

}  // namespace hvp::ad
