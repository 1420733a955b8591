// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Every op validates shapes, computes its value
// eagerly, checks the result is finite and records a backward closure.
// Matrices are row-major 2-D tensors.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gpsd/tensor.hpp"

namespace gpsd {

// [m,k] x [k,n] -> [m,n]
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);
// [m,k] x [n,k]^T -> [m,n]
template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
// [m,n] + [n] broadcast over rows
template <typename Real>
Tensor<Real> add_row(const Tensor<Real>& a, const Tensor<Real>& row);
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor);

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> silu(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> exp(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> log(const Tensor<Real>& a);

// Softmax over the last axis, max-subtracted.
template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a);

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a);

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape);
template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a);

// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
template <typename Real>
Tensor<Real> concat(std::span<const Tensor<Real>> parts, std::size_t axis);

// Rows of a [n,d] table selected by ids -> [ids.size(), d]. Repeated ids
// accumulate gradient additively.
template <typename Real>
Tensor<Real> gather(const Tensor<Real>& table, std::span<const std::int32_t> ids);

// Row-wise x / sqrt(mean(x^2) + eps) * gain.
template <typename Real>
Tensor<Real> rms_norm(const Tensor<Real>& x, const Tensor<Real>& gain, Real eps);

// Rotary position embedding on [rows, heads*head_dim]; row r is rotated by
// positions[r]. Pairs (2i, 2i+1) of each head turn by pos * base^(-2i/hd).
template <typename Real>
Tensor<Real> rope(const Tensor<Real>& x, std::span<const std::int32_t> positions,
                  std::size_t heads, double base = 10000.0);

struct AttentionLayout {
  std::size_t batch = 0;
  std::size_t seq = 0;       // padded length; rows are batch*seq
  std::size_t heads = 0;
  bool causal = true;
  std::vector<std::size_t> lengths;  // valid tokens per sequence
};

// Multi-head scaled dot-product attention over [batch*seq, d] inputs.
// Keys at or beyond a sequence's valid length are masked; padded query
// rows produce zeros.
template <typename Real>
Tensor<Real> attention(const Tensor<Real>& q, const Tensor<Real>& k,
                       const Tensor<Real>& v, const AttentionLayout& layout);

// Negatives shared by a contiguous block of rows (one sequence).
struct SampledSoftmaxTargets {
  std::size_t rows_per_group = 0;
  std::vector<std::int32_t> targets;                 // per row, -1 = no loss
  std::vector<std::vector<std::int32_t>> negatives;  // per group
};

// Sum over rows with a target of -log( e^{h.E[t]} / (e^{h.E[t]} +
// sum_n e^{h.E[n]}) ). `table` acts as the tied output projection.
template <typename Real>
Tensor<Real> sampled_softmax_loss(const Tensor<Real>& hidden,
                                  const Tensor<Real>& table,
                                  const SampledSoftmaxTargets& targets);

// Sum of -[y log p + (1-y) log(1-p)] with p clamped to [1e-7, 1-1e-7].
template <typename Real>
Tensor<Real> binary_cross_entropy(const Tensor<Real>& probs,
                                  std::span<const float> labels);

}  // namespace gpsd
