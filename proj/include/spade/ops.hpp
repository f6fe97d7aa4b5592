#pragma once

#include <span>

#include "spade/tensor.hpp"

namespace spade {

// Tensor-level math used by the forward pass and lens training. All
// functions are pure; reductions run through the active kernel table and
// therefore follow the canonical summation order documented in kernels.hpp.

/// [m x k] x [k x n] -> [m x n]. Element (i, j) accumulates k in ascending order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// y = W x for W [rows x cols], x [cols].
Tensor matvec(const Tensor& w, const Tensor& x);

Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

/// x_i * w_i / sqrt(mean(x^2) + eps)
Tensor rmsnorm(const Tensor& x, const Tensor& weight, float eps);

/// Rotates consecutive pairs of each head of a [heads x d_head] (or flat
/// heads*d_head) tensor by position * theta^(-2i/d_head).
Tensor rope_apply(const Tensor& x, std::size_t n_heads, long position, float theta);

/// -sum_v softmax(teacher)_v * log_softmax(student)_v
double cross_entropy(const Tensor& teacher_logits, const Tensor& student_logits);

/// -sum_v p_v log p_v of a probability vector (zero entries contribute 0).
double entropy_of(std::span<const float> probs);

namespace ops {

// Span-level forms used inside the hot loops. Output spans must not alias
// inputs unless stated.

void softmax(std::span<const float> logits, std::span<float> out);
void log_softmax(std::span<const float> logits, std::span<float> out);
/// Returns the inverse RMS factor 1/sqrt(mean(x^2)+eps) used for `out`.
float rmsnorm(std::span<const float> x, std::span<const float> weight, float eps, std::span<float> out);
/// In-place rotary rotation of `n_heads` heads laid out contiguously.
void rope(std::span<float> x, std::size_t n_heads, long position, float theta);
/// Inverse rotation (the transpose), used to back-propagate through rope.
void rope_inverse(std::span<float> x, std::size_t n_heads, long position, float theta);

}  // namespace ops

}  // namespace spade
