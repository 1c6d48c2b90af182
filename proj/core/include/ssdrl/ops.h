#pragma once

#include <cstddef>

#include "ssdrl/tape.h"

// Differentiable operations recorded on a Tape. Each op registers an
// analytic backward pass.
//
// Broadcasting: two operands broadcast only when the smaller one's shape,
// after dropping leading 1-extents, equals a suffix of the larger one's
// shape. The smaller operand is repeated along the leading axes and its
// gradient is the sum over those axes.

namespace ssdrl::ops {

template <typename T> Var add(Tape<T>& t, Var a, Var b);
template <typename T> Var sub(Tape<T>& t, Var a, Var b);
template <typename T> Var mul(Tape<T>& t, Var a, Var b);

template <typename T> Var sigmoid(Tape<T>& t, Var x);
template <typename T> Var relu(Tape<T>& t, Var x);
template <typename T> Var tanh(Tape<T>& t, Var x);
template <typename T> Var exp(Tape<T>& t, Var x);
// Throws DomainError for non-positive inputs.
template <typename T> Var log(Tape<T>& t, Var x);
template <typename T> Var square(Tape<T>& t, Var x);
// Throws DomainError for negative inputs.
template <typename T> Var sqrt(Tape<T>& t, Var x);
template <typename T> Var neg(Tape<T>& t, Var x);
template <typename T> Var scale(Tape<T>& t, Var x, T factor);
template <typename T> Var add_scalar(Tape<T>& t, Var x, T offset);
// Gradient is zero where the input lies outside [lo, hi].
template <typename T> Var clamp(Tape<T>& t, Var x, T lo, T hi);

// Reductions to a single-element tensor of shape [1].
template <typename T> Var sum(Tape<T>& t, Var x);
template <typename T> Var mean(Tape<T>& t, Var x);

template <typename T> Var reshape(Tape<T>& t, Var x, Shape shape);

// a[m×k] · b[k×n]
template <typename T> Var matmul(Tape<T>& t, Var a, Var b);

// Projection of the last axis: x[..., in] · w[in×out] (+ bias[out]).
template <typename T> Var linear(Tape<T>& t, Var x, Var w);
template <typename T> Var linear(Tape<T>& t, Var x, Var w, Var bias);

// Per-row normalization over the last axis followed by gain/bias.
template <typename T>
Var layernorm(Tape<T>& t, Var x, Var gain, Var bias, T epsilon = T(1e-5));

// [B×n1] ++ [B×n2] -> [B×(n1+n2)]
template <typename T> Var concat_last(Tape<T>& t, Var a, Var b);
// [B×K1×d] ++ [B×K2×d] -> [B×(K1+K2)×d]
template <typename T> Var concat_tokens(Tape<T>& t, Var a, Var b);
// Token k of [B×K×d] -> [B×d].
template <typename T> Var select_token(Tape<T>& t, Var x, std::size_t k);
// Mean over tokens [begin, end) of [B×K×d] -> [B×d]; an empty range yields zeros.
template <typename T>
Var mean_tokens(Tape<T>& t, Var x, std::size_t begin, std::size_t end);
// Repeats a [K×d] tensor over a batch of B -> [B×K×d].
template <typename T> Var repeat_batch(Tape<T>& t, Var x, std::size_t batch);

// Single-head softmax(q kᵀ / √d) v over [B×K×d] operands.
template <typename T> Var softmax_attention(Tape<T>& t, Var q, Var k, Var v);

// Row-wise attention weights for inspection: [B×K×K].
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k);

}  // namespace ssdrl::ops
