#pragma once

// Differentiable tensor operations. Every op checks its shape contract,
// computes the forward values, and registers the adjoint as a closure.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fargan/tensor.hpp"

namespace fargan {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
bool wants_grad(const std::shared_ptr<Node<T>>& node) {
  return node->requires_grad && node->grad.size() == node->data.size();
}

inline void require_rank(const Shape& shape, std::size_t rank, const char* op, const char* what) {
  if (shape.size() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(shape));
  }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return;
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  for (std::size_t axis = 0; axis < a.size(); ++axis) {
    if (a[axis] != b[axis]) {
      throw DimensionError(std::string(op) + ": extent mismatch on axis " + std::to_string(axis) + " (" +
                           std::to_string(a[axis]) + " vs " + std::to_string(b[axis]) + ")");
    }
  }
}

/// Unfolds one (C, H, W) image into a (C*kh*kw, Ho*Wo) column matrix.
template <typename T>
void im2col(const T* image, Index channels, Index height, Index width, Index kh, Index kw, Index stride,
            Index pad, Index out_h, Index out_w, T* cols) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        T* row = cols + ((c * kh + i) * kw + j) * plane;
        const T* src = image + c * height * width;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index y = oy * stride - pad + i;
          T* dst = row + oy * out_w;
          if (y < 0 || y >= height) {
            std::fill(dst, dst + out_w, T{0});
            continue;
          }
          const T* src_row = src + y * width;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index x = ox * stride - pad + j;
            dst[ox] = (x >= 0 && x < width) ? src_row[x] : T{0};
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-adds columns back into the (C, H, W) image.
template <typename T>
void col2im(const T* cols, Index channels, Index height, Index width, Index kh, Index kw, Index stride, Index pad,
            Index out_h, Index out_w, T* image) {
  const Index plane = out_h * out_w;
  for (Index c = 0; c < channels; ++c) {
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        const T* row = cols + ((c * kh + i) * kw + j) * plane;
        T* dst = image + c * height * width;
        for (Index oy = 0; oy < out_h; ++oy) {
          const Index y = oy * stride - pad + i;
          if (y < 0 || y >= height) continue;
          T* dst_row = dst + y * width;
          const T* src = row + oy * out_w;
          for (Index ox = 0; ox < out_w; ++ox) {
            const Index x = ox * stride - pad + j;
            if (x >= 0 && x < width) dst_row[x] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T, typename Forward, typename Derivative>
Tensor<T> unary_op(const Tensor<T>& x, Forward forward, Derivative derivative) {
  std::vector<T> out(x.values().size());
  const auto& in = x.values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node()}, [derivative](Node<T>& self) {
    auto& parent = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      parent.grad[i] += self.grad[i] * derivative(parent.data[i], self.data[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.values()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& self) {
    for (auto& parent : self.parents) {
      if (!detail::wants_grad(parent)) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) parent->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.values()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& self) {
    const T sign[2] = {T{1}, T{-1}};
    for (std::size_t p = 0; p < 2; ++p) {
      auto& parent = self.parents[p];
      if (!detail::wants_grad(parent)) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) parent->grad[i] += sign[p] * self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.values()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& self) {
    auto& lhs = self.parents[0];
    auto& rhs = self.parents[1];
    if (detail::wants_grad(lhs)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) lhs->grad[i] += self.grad[i] * rhs->data[i];
    }
    if (detail::wants_grad(rhs)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) rhs->grad[i] += self.grad[i] * lhs->data[i];
    }
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return detail::unary_op(
      x, [value](T v) { return v + value; }, [](T, T) { return T{1}; });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T value) {
  return detail::unary_op(
      x, [value](T v) { return v * value; }, [value](T, T) { return value; });
}

/// x scaled by a learnable one-element tensor.
template <typename T>
Tensor<T> scale_by(const Tensor<T>& x, const Tensor<T>& factor) {
  if (factor.numel() != 1) throw DimensionError("scale_by: factor must have one element, got " + shape_str(factor.shape()));
  const T s = factor[0];
  std::vector<T> out(x.values());
  for (auto& v : out) v *= s;
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node(), factor.node()}, [s](detail::Node<T>& self) {
    auto& input = self.parents[0];
    auto& scale = self.parents[1];
    if (detail::wants_grad(input)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) input->grad[i] += self.grad[i] * s;
    }
    if (detail::wants_grad(scale)) {
      T acc{0};
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * input->data[i];
      scale->grad[0] += acc;
    }
  });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  return detail::unary_op(
      x, [slope](T v) { return v > T{0} ? v : slope * v; }, [slope](T in, T) { return in > T{0} ? T{1} : slope; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return leaky_relu(x, T{0});
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::tanh(v); }, [](T, T out) { return T{1} - out * out; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return T{1} / (T{1} + std::exp(-v)); }, [](T, T out) { return out * (T{1} - out); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::abs(v); },
      [](T in, T) { return in > T{0} ? T{1} : (in < T{0} ? T{-1} : T{0}); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v * v; }, [](T in, T) { return T{2} * in; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc{0};
  for (T v : x.values()) acc += v;
  return Tensor<T>::from_op(Shape{1}, {acc}, {x.node()}, [](detail::Node<T>& self) {
    auto& parent = *self.parents[0];
    for (auto& g : parent.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ContractError("mean of empty tensor");
  return mul_scalar(sum(x), T{1} / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return Tensor<T>::from_op(std::move(shape), x.values(), {x.node()}, [](detail::Node<T>& self) {
    auto& parent = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += self.grad[i];
  });
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("transpose_last2: rank must be 2 or 3, got " + shape_str(x.shape()));
  const Index batch = x.rank() == 3 ? x.dim(0) : 1;
  const Index rows = x.dim(x.rank() - 2);
  const Index cols = x.dim(x.rank() - 1);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  std::vector<T> out(x.values().size());
  for (Index b = 0; b < batch; ++b) {
    detail::MatMap<T>(out.data() + b * rows * cols, cols, rows) =
        detail::ConstMatMap<T>(x.values().data() + b * rows * cols, rows, cols).transpose();
  }
  return Tensor<T>::from_op(std::move(out_shape), std::move(out), {x.node()},
                            [batch, rows, cols](detail::Node<T>& self) {
                              auto& parent = *self.parents[0];
                              for (Index b = 0; b < batch; ++b) {
                                detail::MatMap<T>(parent.grad.data() + b * rows * cols, rows, cols) +=
                                    detail::ConstMatMap<T>(self.grad.data() + b * rows * cols, cols, rows).transpose();
                              }
                            });
}

/// Concatenates NCHW tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const Shape& first = parts.front().shape();
  detail::require_rank(first, 4, "concat_channels", "input");
  Index channels = 0;
  std::vector<typename Tensor<T>::NodePtr> parents;
  for (const auto& p : parts) {
    detail::require_rank(p.shape(), 4, "concat_channels", "input");
    for (std::size_t axis : {std::size_t{0}, std::size_t{2}, std::size_t{3}}) {
      if (p.dim(axis) != first[axis]) {
        throw DimensionError("concat_channels: extent mismatch on axis " + std::to_string(axis));
      }
    }
    channels += p.dim(1);
    parents.push_back(p.node());
  }
  const Index batch = first[0];
  const Index plane = first[2] * first[3];
  std::vector<T> out(static_cast<std::size_t>(batch * channels * plane));
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Index c = p.dim(1);
    for (Index n = 0; n < batch; ++n) {
      std::copy_n(p.values().data() + n * c * plane, c * plane, out.data() + (n * channels + offset) * plane);
    }
    offset += c;
  }
  return Tensor<T>::from_op(Shape{batch, channels, first[2], first[3]}, std::move(out), std::move(parents),
                            [offsets, batch, channels, plane](detail::Node<T>& self) {
                              for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                auto& parent = self.parents[k];
                                if (!detail::wants_grad(parent)) continue;
                                const Index c = parent->shape[1];
                                for (Index n = 0; n < batch; ++n) {
                                  const T* src = self.grad.data() + (n * channels + offsets[k]) * plane;
                                  T* dst = parent->grad.data() + n * c * plane;
                                  for (Index i = 0; i < c * plane; ++i) dst[i] += src[i];
                                }
                              }
                            });
}

/// Nearest-neighbour resize of an NCHW tensor; source index floor(dst * in / out).
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, Index out_h, Index out_w) {
  detail::require_rank(x.shape(), 4, "resize_nearest", "input");
  if (out_h <= 0 || out_w <= 0) throw DimensionError("resize_nearest: target extents must be positive");
  const Index planes = x.dim(0) * x.dim(1);
  const Index in_h = x.dim(2);
  const Index in_w = x.dim(3);
  std::vector<Index> src_index(static_cast<std::size_t>(out_h * out_w));
  for (Index y = 0; y < out_h; ++y) {
    for (Index xo = 0; xo < out_w; ++xo) {
      src_index[y * out_w + xo] = (y * in_h / out_h) * in_w + (xo * in_w / out_w);
    }
  }
  std::vector<T> out(static_cast<std::size_t>(planes * out_h * out_w));
  for (Index p = 0; p < planes; ++p) {
    for (Index i = 0; i < out_h * out_w; ++i) out[p * out_h * out_w + i] = x.values()[p * in_h * in_w + src_index[i]];
  }
  return Tensor<T>::from_op(Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x.node()},
                            [src_index, planes, in_plane = in_h * in_w, out_plane = out_h * out_w](detail::Node<T>& self) {
                              auto& parent = *self.parents[0];
                              for (Index p = 0; p < planes; ++p) {
                                for (Index i = 0; i < out_plane; ++i) {
                                  parent.grad[p * in_plane + src_index[i]] += self.grad[p * out_plane + i];
                                }
                              }
                            });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product: [B,M,K] x [B,K,N] -> [B,M,N] (rank 2 accepted as B = 1).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw DimensionError("matmul: operands must both be rank 2 or 3, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const bool batched = a.rank() == 3;
  const Index batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) throw DimensionError("matmul: batch extent mismatch on axis 0");
  const Index m = a.dim(a.rank() - 2);
  const Index k = a.dim(a.rank() - 1);
  const Index n = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k) {
    throw DimensionError("matmul: inner extent mismatch (" + std::to_string(k) + " vs " +
                         std::to_string(b.dim(b.rank() - 2)) + ")");
  }
  std::vector<T> out(static_cast<std::size_t>(batch * m * n));
  for (Index i = 0; i < batch; ++i) {
    detail::MatMap<T>(out.data() + i * m * n, m, n).noalias() =
        detail::ConstMatMap<T>(a.values().data() + i * m * k, m, k) *
        detail::ConstMatMap<T>(b.values().data() + i * k * n, k, n);
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return Tensor<T>::from_op(std::move(shape), std::move(out), {a.node(), b.node()},
                            [batch, m, k, n](detail::Node<T>& self) {
                              auto& lhs = self.parents[0];
                              auto& rhs = self.parents[1];
                              for (Index i = 0; i < batch; ++i) {
                                detail::ConstMatMap<T> g(self.grad.data() + i * m * n, m, n);
                                if (detail::wants_grad(lhs)) {
                                  detail::MatMap<T>(lhs->grad.data() + i * m * k, m, k).noalias() +=
                                      g * detail::ConstMatMap<T>(rhs->data.data() + i * k * n, k, n).transpose();
                                }
                                if (detail::wants_grad(rhs)) {
                                  detail::MatMap<T>(rhs->grad.data() + i * k * n, k, n).noalias() +=
                                      detail::ConstMatMap<T>(lhs->data.data() + i * m * k, m, k).transpose() * g;
                                }
                              }
                            });
}

/// Softmax along `axis`, numerically stabilised by the per-slice maximum.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range");
  Index outer = 1;
  Index inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const Index extent = x.dim(axis);
  std::vector<T> out(x.values().size());
  const auto& in = x.values();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * extent * inner + i;
      T peak = -std::numeric_limits<T>::infinity();
      for (Index e = 0; e < extent; ++e) peak = std::max(peak, in[base + e * inner]);
      T total{0};
      for (Index e = 0; e < extent; ++e) {
        const T v = std::exp(in[base + e * inner] - peak);
        out[base + e * inner] = v;
        total += v;
      }
      for (Index e = 0; e < extent; ++e) out[base + e * inner] /= total;
    }
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node()}, [outer, inner, extent](detail::Node<T>& self) {
    auto& parent = *self.parents[0];
    for (Index o = 0; o < outer; ++o) {
      for (Index i = 0; i < inner; ++i) {
        const Index base = o * extent * inner + i;
        T dot{0};
        for (Index e = 0; e < extent; ++e) dot += self.grad[base + e * inner] * self.data[base + e * inner];
        for (Index e = 0; e < extent; ++e) {
          const Index at = base + e * inner;
          parent.grad[at] += self.data[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling (NCHW, zero padding)

struct ConvGeometry {
  Index stride = 1;
  Index padding = 0;
};

/// conv2d: input [N,C,H,W], weight [K,C,kh,kw], optional bias [K].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, ConvGeometry geom = {}) {
  detail::require_rank(input.shape(), 4, "conv2d", "input");
  detail::require_rank(weight.shape(), 4, "conv2d", "weight");
  if (geom.stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (geom.padding < 0) throw DimensionError("conv2d: padding must be >= 0");
  const Index batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  const Index filters = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != channels) {
    throw DimensionError("conv2d: channel axis (1) mismatch, input has " + std::to_string(channels) +
                         " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  if (kh > height + 2 * geom.padding) throw DimensionError("conv2d: kernel height exceeds padded input on axis 2");
  if (kw > width + 2 * geom.padding) throw DimensionError("conv2d: kernel width exceeds padded input on axis 3");
  if (bias.defined() && (bias.numel() != filters)) {
    throw DimensionError("conv2d: bias length " + std::to_string(bias.numel()) + " does not match filter axis (0) extent " +
                         std::to_string(filters));
  }
  const Index out_h = (height + 2 * geom.padding - kh) / geom.stride + 1;
  const Index out_w = (width + 2 * geom.padding - kw) / geom.stride + 1;
  const Index patch = channels * kh * kw;
  const Index plane = out_h * out_w;
  const bool pointwise = kh == 1 && kw == 1 && geom.stride == 1 && geom.padding == 0;

  std::vector<T> out(static_cast<std::size_t>(batch * filters * plane));
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(patch * plane));
  detail::ConstMatMap<T> w(weight.values().data(), filters, patch);
  for (Index n = 0; n < batch; ++n) {
    const T* image = input.values().data() + n * channels * height * width;
    const T* col_data = image;
    if (!pointwise) {
      detail::im2col(image, channels, height, width, kh, kw, geom.stride, geom.padding, out_h, out_w, cols.data());
      col_data = cols.data();
    }
    detail::MatMap<T> result(out.data() + n * filters * plane, filters, plane);
    result.noalias() = w * detail::ConstMatMap<T>(col_data, patch, plane);
    if (bias.defined()) {
      for (Index k = 0; k < filters; ++k) result.row(k).array() += bias[k];
    }
  }

  std::vector<typename Tensor<T>::NodePtr> parents{input.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return Tensor<T>::from_op(
      Shape{batch, filters, out_h, out_w}, std::move(out), std::move(parents),
      [=](detail::Node<T>& self) {
        auto& in_node = self.parents[0];
        auto& w_node = self.parents[1];
        const bool need_input = detail::wants_grad(in_node);
        const bool need_weight = detail::wants_grad(w_node);
        std::vector<T> scratch(pointwise ? 0 : static_cast<std::size_t>(patch * plane));
        detail::ConstMatMap<T> wmat(w_node->data.data(), filters, patch);
        for (Index n = 0; n < batch; ++n) {
          detail::ConstMatMap<T> g(self.grad.data() + n * filters * plane, filters, plane);
          const T* image = in_node->data.data() + n * channels * height * width;
          if (need_weight) {
            const T* col_data = image;
            if (!pointwise) {
              detail::im2col(image, channels, height, width, kh, kw, geom.stride, geom.padding, out_h, out_w,
                             scratch.data());
              col_data = scratch.data();
            }
            detail::MatMap<T>(w_node->grad.data(), filters, patch).noalias() +=
                g * detail::ConstMatMap<T>(col_data, patch, plane).transpose();
          }
          if (need_input) {
            T* dx = in_node->grad.data() + n * channels * height * width;
            if (pointwise) {
              detail::MatMap<T>(dx, channels, plane).noalias() += wmat.transpose() * g;
            } else {
              detail::MatMap<T>(scratch.data(), patch, plane).noalias() = wmat.transpose() * g;
              detail::col2im(scratch.data(), channels, height, width, kh, kw, geom.stride, geom.padding, out_h, out_w,
                             dx);
            }
          }
        }
        if (self.parents.size() > 2 && detail::wants_grad(self.parents[2])) {
          auto& b_node = self.parents[2];
          for (Index n = 0; n < batch; ++n) {
            for (Index k = 0; k < filters; ++k) {
              const T* g = self.grad.data() + (n * filters + k) * plane;
              T acc{0};
              for (Index i = 0; i < plane; ++i) acc += g[i];
              b_node->grad[k] += acc;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, ConvGeometry geom = {}) {
  return conv2d(input, weight, Tensor<T>{}, geom);
}

/// Transposed convolution: input [N,Cin,H,W], weight [Cin,Cout,kh,kw], optional bias [Cout].
/// Output extent (H-1)*stride - 2*padding + kh; k=4, s=2, p=1 doubles the resolution.
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                            ConvGeometry geom = {2, 1}) {
  detail::require_rank(input.shape(), 4, "transposed_conv2d", "input");
  detail::require_rank(weight.shape(), 4, "transposed_conv2d", "weight");
  if (geom.stride < 1) throw DimensionError("transposed_conv2d: stride must be >= 1");
  const Index batch = input.dim(0), in_c = input.dim(1), height = input.dim(2), width = input.dim(3);
  if (weight.dim(0) != in_c) {
    throw DimensionError("transposed_conv2d: channel axis (1) mismatch, input has " + std::to_string(in_c) +
                         " channels, weight expects " + std::to_string(weight.dim(0)));
  }
  const Index out_c = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const Index out_h = (height - 1) * geom.stride - 2 * geom.padding + kh;
  const Index out_w = (width - 1) * geom.stride - 2 * geom.padding + kw;
  if (out_h <= 0 || out_w <= 0) throw DimensionError("transposed_conv2d: non-positive output extent");
  if (bias.defined() && bias.numel() != out_c) {
    throw DimensionError("transposed_conv2d: bias length does not match output channels (axis 1 of weight)");
  }
  const Index patch = out_c * kh * kw;
  const Index in_plane = height * width;
  const Index out_plane = out_h * out_w;

  std::vector<T> out(static_cast<std::size_t>(batch * out_c * out_plane), T{0});
  std::vector<T> cols(static_cast<std::size_t>(patch * in_plane));
  detail::ConstMatMap<T> w(weight.values().data(), in_c, patch);
  for (Index n = 0; n < batch; ++n) {
    detail::MatMap<T>(cols.data(), patch, in_plane).noalias() =
        w.transpose() * detail::ConstMatMap<T>(input.values().data() + n * in_c * in_plane, in_c, in_plane);
    T* dst = out.data() + n * out_c * out_plane;
    detail::col2im(cols.data(), out_c, out_h, out_w, kh, kw, geom.stride, geom.padding, height, width, dst);
    if (bias.defined()) {
      for (Index c = 0; c < out_c; ++c) {
        for (Index i = 0; i < out_plane; ++i) dst[c * out_plane + i] += bias[c];
      }
    }
  }

  std::vector<typename Tensor<T>::NodePtr> parents{input.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return Tensor<T>::from_op(
      Shape{batch, out_c, out_h, out_w}, std::move(out), std::move(parents), [=](detail::Node<T>& self) {
        auto& in_node = self.parents[0];
        auto& w_node = self.parents[1];
        const bool need_input = detail::wants_grad(in_node);
        const bool need_weight = detail::wants_grad(w_node);
        std::vector<T> gcols(static_cast<std::size_t>(patch * in_plane));
        detail::ConstMatMap<T> wmat(w_node->data.data(), in_c, patch);
        for (Index n = 0; n < batch; ++n) {
          detail::im2col(self.grad.data() + n * out_c * out_plane, out_c, out_h, out_w, kh, kw, geom.stride,
                         geom.padding, height, width, gcols.data());
          detail::ConstMatMap<T> gc(gcols.data(), patch, in_plane);
          if (need_input) {
            detail::MatMap<T>(in_node->grad.data() + n * in_c * in_plane, in_c, in_plane).noalias() += wmat * gc;
          }
          if (need_weight) {
            detail::MatMap<T>(w_node->grad.data(), in_c, patch).noalias() +=
                detail::ConstMatMap<T>(in_node->data.data() + n * in_c * in_plane, in_c, in_plane) * gc.transpose();
          }
        }
        if (self.parents.size() > 2 && detail::wants_grad(self.parents[2])) {
          auto& b_node = self.parents[2];
          for (Index n = 0; n < batch; ++n) {
            for (Index c = 0; c < out_c; ++c) {
              const T* g = self.grad.data() + (n * out_c + c) * out_plane;
              T acc{0};
              for (Index i = 0; i < out_plane; ++i) acc += g[i];
              b_node->grad[c] += acc;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const Tensor<T>& weight, ConvGeometry geom = {2, 1}) {
  return transposed_conv2d(input, weight, Tensor<T>{}, geom);
}

namespace detail {
inline void require_divisible(const Shape& shape, Index k, const char* op) {
  require_rank(shape, 4, op, "input");
  if (k < 1) throw DimensionError(std::string(op) + ": window must be >= 1");
  if (shape[2] % k != 0) {
    throw DimensionError(std::string(op) + ": height (axis 2) extent " + std::to_string(shape[2]) +
                         " not divisible by " + std::to_string(k));
  }
  if (shape[3] % k != 0) {
    throw DimensionError(std::string(op) + ": width (axis 3) extent " + std::to_string(shape[3]) +
                         " not divisible by " + std::to_string(k));
  }
}
}  // namespace detail

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, Index k = 2) {
  detail::require_divisible(x.shape(), k, "avg_pool2d");
  const Index planes = x.dim(0) * x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const Index out_h = in_h / k, out_w = in_w / k;
  const T inv = T{1} / static_cast<T>(k * k);
  std::vector<T> out(static_cast<std::size_t>(planes * out_h * out_w));
  for (Index p = 0; p < planes; ++p) {
    const T* src = x.values().data() + p * in_h * in_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      for (Index ox = 0; ox < out_w; ++ox) {
        T acc{0};
        for (Index i = 0; i < k; ++i) {
          for (Index j = 0; j < k; ++j) acc += src[(oy * k + i) * in_w + ox * k + j];
        }
        out[(p * out_h + oy) * out_w + ox] = acc * inv;
      }
    }
  }
  return Tensor<T>::from_op(Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x.node()},
                            [=](detail::Node<T>& self) {
                              auto& parent = *self.parents[0];
                              for (Index p = 0; p < planes; ++p) {
                                T* dst = parent.grad.data() + p * in_h * in_w;
                                for (Index oy = 0; oy < out_h; ++oy) {
                                  for (Index ox = 0; ox < out_w; ++ox) {
                                    const T g = self.grad[(p * out_h + oy) * out_w + ox] * inv;
                                    for (Index i = 0; i < k; ++i) {
                                      for (Index j = 0; j < k; ++j) dst[(oy * k + i) * in_w + ox * k + j] += g;
                                    }
                                  }
                                }
                              }
                            });
}

/// Max pooling; ties route the gradient to the first element in row-major order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, Index k = 2) {
  detail::require_divisible(x.shape(), k, "max_pool2d");
  const Index planes = x.dim(0) * x.dim(1), in_h = x.dim(2), in_w = x.dim(3);
  const Index out_h = in_h / k, out_w = in_w / k;
  std::vector<T> out(static_cast<std::size_t>(planes * out_h * out_w));
  std::vector<Index> argmax(out.size());
  for (Index p = 0; p < planes; ++p) {
    const Index base = p * in_h * in_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      for (Index ox = 0; ox < out_w; ++ox) {
        Index best = base + (oy * k) * in_w + ox * k;
        for (Index i = 0; i < k; ++i) {
          for (Index j = 0; j < k; ++j) {
            const Index at = base + (oy * k + i) * in_w + ox * k + j;
            if (x.values()[at] > x.values()[best]) best = at;
          }
        }
        const Index o = (p * out_h + oy) * out_w + ox;
        out[o] = x.values()[best];
        argmax[o] = best;
      }
    }
  }
  return Tensor<T>::from_op(Shape{x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x.node()},
                            [argmax = std::move(argmax)](detail::Node<T>& self) {
                              auto& parent = *self.parents[0];
                              for (std::size_t o = 0; o < argmax.size(); ++o) parent.grad[argmax[o]] += self.grad[o];
                            });
}

// ---------------------------------------------------------------------------
// Per-channel normalisation and noise

/// (h - mu_c) / (sigma_c + eps) with mu_c, sigma_c pooled over batch and space.
/// The variance uses E[h^2] - mu^2, clamped at zero; sigma's derivative is
/// dropped for constant channels where it is undefined.
template <typename T>
Tensor<T> channel_normalize(const Tensor<T>& h, T eps) {
  detail::require_rank(h.shape(), 4, "channel_normalize", "input");
  const Index batch = h.dim(0), channels = h.dim(1), plane = h.dim(2) * h.dim(3);
  const Index count = batch * plane;
  std::vector<T> mu(static_cast<std::size_t>(channels)), sigma(static_cast<std::size_t>(channels));
  for (Index c = 0; c < channels; ++c) {
    double s = 0.0, s2 = 0.0;
    for (Index n = 0; n < batch; ++n) {
      const T* src = h.values().data() + (n * channels + c) * plane;
      for (Index i = 0; i < plane; ++i) {
        s += src[i];
        s2 += static_cast<double>(src[i]) * src[i];
      }
    }
    const double m = s / static_cast<double>(count);
    mu[c] = static_cast<T>(m);
    sigma[c] = static_cast<T>(std::sqrt(std::max(0.0, s2 / static_cast<double>(count) - m * m)));
  }
  std::vector<T> out(h.values().size());
  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      const Index base = (n * channels + c) * plane;
      const T inv = T{1} / (sigma[c] + eps);
      for (Index i = 0; i < plane; ++i) out[base + i] = (h.values()[base + i] - mu[c]) * inv;
    }
  }
  return Tensor<T>::from_op(h.shape(), std::move(out), {h.node()}, [=](detail::Node<T>& self) {
    auto& parent = *self.parents[0];
    for (Index c = 0; c < channels; ++c) {
      const T s = sigma[c] + eps;
      T grad_sum{0}, grad_dot{0};
      for (Index n = 0; n < batch; ++n) {
        const Index base = (n * channels + c) * plane;
        for (Index i = 0; i < plane; ++i) {
          grad_sum += self.grad[base + i];
          grad_dot += self.grad[base + i] * self.data[base + i];
        }
      }
      // dL/dsigma = -sum(g * y) / s ; dsigma/dh_i = (h_i - mu) / (count * sigma)
      const T dsigma_coef = sigma[c] > std::numeric_limits<T>::min() * T{1e6}
                                ? -grad_dot / s / (static_cast<T>(count) * sigma[c])
                                : T{0};
      const T mean_term = grad_sum / (s * static_cast<T>(count));
      for (Index n = 0; n < batch; ++n) {
        const Index base = (n * channels + c) * plane;
        for (Index i = 0; i < plane; ++i) {
          parent.grad[base + i] +=
              self.grad[base + i] / s - mean_term + dsigma_coef * (parent.data[base + i] - mu[c]);
        }
      }
    }
  });
}

/// x + scale_c * z_{y,x}: one H x W map shared by every sample and channel.
template <typename T>
Tensor<T> add_channel_noise(const Tensor<T>& x, const Tensor<T>& scale, const std::vector<T>& noise_map) {
  detail::require_rank(x.shape(), 4, "add_channel_noise", "input");
  const Index batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (scale.numel() != channels) throw DimensionError("add_channel_noise: scale length must equal channel axis (1)");
  if (static_cast<Index>(noise_map.size()) != plane) {
    throw DimensionError("add_channel_noise: noise map must cover the spatial axes (2, 3)");
  }
  std::vector<T> out(x.values());
  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      T* dst = out.data() + (n * channels + c) * plane;
      const T s = scale[c];
      for (Index i = 0; i < plane; ++i) dst[i] += s * noise_map[i];
    }
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), {x.node(), scale.node()}, [=](detail::Node<T>& self) {
    auto& input = self.parents[0];
    auto& scales = self.parents[1];
    if (detail::wants_grad(input)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) input->grad[i] += self.grad[i];
    }
    if (detail::wants_grad(scales)) {
      for (Index n = 0; n < batch; ++n) {
        for (Index c = 0; c < channels; ++c) {
          const T* g = self.grad.data() + (n * channels + c) * plane;
          T acc{0};
          for (Index i = 0; i < plane; ++i) acc += g[i] * noise_map[i];
          scales->grad[c] += acc;
        }
      }
    }
  });
}

}  // namespace fargan
