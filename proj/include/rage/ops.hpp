#pragma once

#include <cstddef>

#include "rage/tensor.hpp"

// Differentiable operations over rage::Tensor. All binary tensor-tensor ops
// require identical shapes; the only broadcasting is tensor-scalar.
namespace rage::ops {

/// 2-D cross-correlation over NCHW input with OIHW weights.
/// Output extent is floor((H + 2*padding - kH) / stride) + 1 per axis.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

/// Nearest-neighbour 2x upsampling of the two trailing axes of NCHW input.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& input);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> neg(const Tensor<T>& a);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T b);
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T b);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Subgradient at exactly zero is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> square(const Tensor<T>& x);
/// Requires strictly positive input.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x);

/// Sum of all elements, as a rank-0 tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// softmax(q k^T / sqrt(Dk)) v over [N,T,D] inputs. If `weights_out` is
/// non-null it receives the [N,T,T] attention matrix.
template <typename T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k,
                               const Tensor<T>& v,
                               std::vector<T>* weights_out = nullptr);

/// Group normalisation over NCHW input with per-channel affine gamma/beta.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, std::size_t groups,
                     T eps = T(1e-5));

/// Channels [begin, begin+count) of NCHW input.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin,
                         std::size_t count);

/// Repeats a single-channel [N,1,H,W] map across `channels`.
template <typename T>
Tensor<T> broadcast_channels(const Tensor<T>& x, std::size_t channels);

/// Top-left [.., height, width] window of the two trailing axes.
template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::size_t height, std::size_t width);

/// [N,C,H,W] -> [N,H*W,C].
template <typename T>
Tensor<T> to_sequence(const Tensor<T>& x);
/// [N,H*W,C] -> [N,C,H,W].
template <typename T>
Tensor<T> from_sequence(const Tensor<T>& x, std::size_t height,
                        std::size_t width);

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) {
  return neg(a);
}

}  // namespace rage::ops
