// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hot loops behind the tensor ops. `serial` holds the straightforward
// reference versions used by the tests; `parallel` holds the OpenMP
// versions the ops call. Parallel kernels split work over output rows (or
// batch*head slices) only, so each output element is produced by exactly
// one thread in a fixed order and results do not depend on thread count.

#pragma once

#include <cstddef>
#include <span>

namespace gpsd::kernels {

enum class Trans { kNo, kYes };

struct GemmShape {
  std::size_t m = 0;  // rows of op(A) and C
  std::size_t n = 0;  // cols of op(B) and C
  std::size_t k = 0;  // inner dimension
};

struct AttentionShape {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  bool causal = true;
};

namespace serial {

// C = op(A) op(B) (+ C when accumulate)
template <typename Real>
void gemm(Trans trans_a, Trans trans_b, GemmShape shape, const Real* a,
          const Real* b, Real* c, bool accumulate);

// probs: [batch, heads, seq, seq]; out: [batch*seq, heads*head_dim]
template <typename Real>
void attention_forward(AttentionShape shape, const std::size_t* lengths,
                       const Real* q, const Real* k, const Real* v, Real* probs,
                       Real* out);

template <typename Real>
void attention_backward(AttentionShape shape, const std::size_t* lengths,
                        const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk,
                        Real* dv);

// out[i] = exp(x[i] - shift); returns the sum of out.
template <typename Real>
Real exp_shifted(const Real* x, Real shift, Real* out, std::size_t n);

}  // namespace serial

namespace parallel {

template <typename Real>
void gemm(Trans trans_a, Trans trans_b, GemmShape shape, const Real* a,
          const Real* b, Real* c, bool accumulate);

template <typename Real>
void attention_forward(AttentionShape shape, const std::size_t* lengths,
                       const Real* q, const Real* k, const Real* v, Real* probs,
                       Real* out);

template <typename Real>
void attention_backward(AttentionShape shape, const std::size_t* lengths,
                        const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk,
                        Real* dv);

// The float version uses a polynomial exp (within 2 ulp of std::exp) that
// the compiler can vectorize.
template <typename Real>
Real exp_shifted(const Real* x, Real shift, Real* out, std::size_t n);

}  // namespace parallel

int max_threads();
void set_threads(int n);

}  // namespace gpsd::kernels
