#pragma once

// Differentiable primitives. Every op validates shapes, computes its value,
// rejects non-finite results with NumericError, and, when a tape is active
// and an input requires a gradient, records its local backward rule.
//
// Masks are flat byte arrays (1 = keep, 0 = padding) laid out row-major
// against the leading dimensions they qualify.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "aesim/tensor.hpp"

namespace aesim {

using MaskView = std::span<const std::uint8_t>;

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

enum class UnaryOp { kTanh, kSigmoid, kExp, kSelu };
enum class BinaryOp { kAdd, kSub, kMul };
enum class ReduceOp { kMax, kMean };

// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Batched: [B,m,k] x [B,k,n] -> [B,m,n]
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kAdd, a, b);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kSub, a, b);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(BinaryOp::kMul, a, b);
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return elementwise(UnaryOp::kTanh, a);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return elementwise(UnaryOp::kSigmoid, a);
}
template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return elementwise(UnaryOp::kExp, a);
}
template <typename T>
Tensor<T> selu(const Tensor<T>& a) {
  return elementwise(UnaryOp::kSelu, a);
}

// x[..., n] + bias[n], broadcast over every leading row.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// out[r, :] = weights[r] * x[r, :] where r ranges over all leading positions.
template <typename T>
Tensor<T> row_scale(const Tensor<T>& x, const Tensor<T>& weights);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

// Softmax over the last axis with max subtraction. Masked positions get
// exactly 0; a row with no unmasked position raises InvalidMaskError.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& logits, MaskView mask);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Half-open range [begin, end) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end);

// Index along axis; the axis is removed from the result.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index);

// Inserts a new axis of size parts.size().
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Max or mean over one axis. The optional mask covers every dimension up to
// and including `axis`. Max sends its gradient to the first maximal entry.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, std::size_t axis,
                 MaskView mask = {});

// Row-wise select: out[r] = mask[r] ? a[r] : b[r], rows being the leading
// positions in front of the last axis.
template <typename T>
Tensor<T> where_rows(MaskView mask, const Tensor<T>& a, const Tensor<T>& b);

// Inverted dropout. Identity in eval mode or at rate 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training,
                  std::mt19937_64& rng);

// Gathers rows of table[V, d]; result shape is index_shape + [d]. Rows equal
// to padding_index receive no gradient.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids,
                    const Shape& index_shape, std::int32_t padding_index = 0);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Mean softmax cross-entropy of logits[B, C] against integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits,
                                std::span<const int> labels);

double selu_value(double x);

}  // namespace aesim
