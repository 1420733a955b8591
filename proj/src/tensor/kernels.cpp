// Copyright 2026 The GPSD Authors
// SPDX-License-Identifier: Apache-2.0

#include "gpsd/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace gpsd::kernels {

namespace {

constexpr std::size_t kParallelWork = std::size_t{1} << 15;

template <typename Real>
inline Real at(const Real* x, Trans t, std::size_t rows, std::size_t cols,
               std::size_t i, std::size_t j) {
  // element (i,j) of op(X) where op(X) is rows x cols
  return t == Trans::kNo ? x[i * cols + j] : x[j * rows + i];
}

constexpr std::size_t kTile = 32;
constexpr std::size_t kRows = 8;

// C[r, j] (+)= sum_p A[r, p] * B[p, j] for r < rows <= kRows and
// j < width <= kTile, summed in increasing p. The block stays in a local
// accumulator while B streams past once.
template <typename Real>
inline void gemm_block(const Real* a, std::size_t a_row, std::size_t a_col, const Real* b,
                       std::size_t ldb, Real* c, std::size_t ldc, std::size_t rows,
                       std::size_t width, std::size_t k, bool accumulate) {
  Real acc[kRows][kTile];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < width; ++j) acc[r][j] = accumulate ? c[r * ldc + j] : Real(0);
  }
  if (width == kTile) {
    for (std::size_t p = 0; p < k; ++p) {
      const Real* bp = b + p * ldb;
      for (std::size_t r = 0; r < rows; ++r) {
        const Real ap = a[r * a_row + p * a_col];
#pragma omp simd
        for (std::size_t j = 0; j < kTile; ++j) acc[r][j] += ap * bp[j];
      }
    }
  } else {
    for (std::size_t p = 0; p < k; ++p) {
      const Real* bp = b + p * ldb;
      for (std::size_t r = 0; r < rows; ++r) {
        const Real ap = a[r * a_row + p * a_col];
#pragma omp simd
        for (std::size_t j = 0; j < width; ++j) acc[r][j] += ap * bp[j];
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(acc[r], width, c + r * ldc);
}

}  // namespace

namespace serial {

template <typename Real>
void gemm(Trans trans_a, Trans trans_b, GemmShape s, const Real* a,
          const Real* b, Real* c, bool accumulate) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      Real acc = accumulate ? c[i * s.n + j] : Real(0);
      for (std::size_t p = 0; p < s.k; ++p) {
        acc += at(a, trans_a, s.m, s.k, i, p) * at(b, trans_b, s.k, s.n, p, j);
      }
      c[i * s.n + j] = acc;
    }
  }
}

template <typename Real>
void attention_forward(AttentionShape s, const std::size_t* lengths,
                       const Real* q, const Real* k, const Real* v, Real* probs,
                       Real* out) {
  const std::size_t width = s.heads * s.head_dim;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(s.head_dim));
  std::fill(out, out + s.batch * s.seq * width, Real(0));
  std::fill(probs, probs + s.batch * s.heads * s.seq * s.seq, Real(0));
  for (std::size_t bh = 0; bh < s.batch * s.heads; ++bh) {
    const std::size_t b = bh / s.heads;
    const std::size_t h = bh % s.heads;
    const std::size_t len = lengths[b];
    for (std::size_t t = 0; t < len; ++t) {
      const Real* qt = q + (b * s.seq + t) * width + h * s.head_dim;
      Real* p = probs + (bh * s.seq + t) * s.seq;
      const std::size_t end = s.causal ? t + 1 : len;
      Real mx = -INFINITY;
      for (std::size_t u = 0; u < end; ++u) {
        const Real* ku = k + (b * s.seq + u) * width + h * s.head_dim;
        Real dot = 0;
        for (std::size_t j = 0; j < s.head_dim; ++j) dot += qt[j] * ku[j];
        p[u] = dot * scale;
        mx = std::max(mx, p[u]);
      }
      Real total = 0;
      for (std::size_t u = 0; u < end; ++u) {
        p[u] = std::exp(p[u] - mx);
        total += p[u];
      }
      Real* ot = out + (b * s.seq + t) * width + h * s.head_dim;
      for (std::size_t u = 0; u < end; ++u) {
        p[u] /= total;
        const Real* vu = v + (b * s.seq + u) * width + h * s.head_dim;
        for (std::size_t j = 0; j < s.head_dim; ++j) ot[j] += p[u] * vu[j];
      }
    }
  }
}

template <typename Real>
void attention_backward(AttentionShape s, const std::size_t* lengths,
                        const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk,
                        Real* dv) {
  const std::size_t width = s.heads * s.head_dim;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(s.head_dim));
  std::vector<Real> dscore(s.seq);
  for (std::size_t bh = 0; bh < s.batch * s.heads; ++bh) {
    const std::size_t b = bh / s.heads;
    const std::size_t h = bh % s.heads;
    const std::size_t len = lengths[b];
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t row_t = (b * s.seq + t) * width + h * s.head_dim;
      const Real* p = probs + (bh * s.seq + t) * s.seq;
      const std::size_t end = s.causal ? t + 1 : len;
      Real weighted = 0;
      for (std::size_t u = 0; u < end; ++u) {
        const std::size_t row_u = (b * s.seq + u) * width + h * s.head_dim;
        Real dp = 0;
        for (std::size_t j = 0; j < s.head_dim; ++j) {
          dp += dout[row_t + j] * v[row_u + j];
          dv[row_u + j] += p[u] * dout[row_t + j];
        }
        dscore[u] = dp;
        weighted += p[u] * dp;
      }
      for (std::size_t u = 0; u < end; ++u) {
        const std::size_t row_u = (b * s.seq + u) * width + h * s.head_dim;
        const Real ds = p[u] * (dscore[u] - weighted) * scale;
        for (std::size_t j = 0; j < s.head_dim; ++j) {
          dq[row_t + j] += ds * k[row_u + j];
          dk[row_u + j] += ds * q[row_t + j];
        }
      }
    }
  }
}

template <typename Real>
Real exp_shifted(const Real* x, Real shift, Real* out, std::size_t n) {
  Real sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - shift);
    sum += out[i];
  }
  return sum;
}

}  // namespace serial

namespace parallel {

template <typename Real>
void gemm(Trans trans_a, Trans trans_b, GemmShape s, const Real* a,
          const Real* b, Real* c, bool accumulate) {
  const std::size_t m = s.m, n = s.n, k = s.k;
  const bool big = m * n * k >= kParallelWork;
  if (trans_b == Trans::kYes && trans_a == Trans::kYes) {
    serial::gemm(trans_a, trans_b, s, a, b, c, accumulate);
    return;
  }
  if (trans_b == Trans::kYes) {
    if (m >= 8 && k > 0) {
      // Transpose one column tile of op(B) at a time, then row-axpy.
      const std::size_t tiles = (n + kTile - 1) / kTile;
#pragma omp parallel for schedule(static) if (big)
      for (std::size_t t = 0; t < tiles; ++t) {
        const std::size_t j0 = t * kTile, width = std::min(kTile, n - j0);
        std::vector<Real> tile(k * kTile);
        for (std::size_t jj = 0; jj < width; ++jj) {
          const Real* bj = b + (j0 + jj) * k;
          for (std::size_t p = 0; p < k; ++p) tile[p * kTile + jj] = bj[p];
        }
        for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
          gemm_block(a + i0 * k, k, 1, tile.data(), kTile, c + i0 * n + j0, n,
                     std::min(kRows, m - i0), width, k, accumulate);
        }
      }
      return;
    }
    // C[i,j] = dot(A[i,:], B[j,:])
#pragma omp parallel for schedule(static) if (big)
    for (std::size_t i = 0; i < m; ++i) {
      const Real* ai = a + i * k;
      Real* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const Real* bj = b + j * k;
        Real acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] = accumulate ? ci[j] + acc : acc;
      }
    }
    return;
  }
  // op(A)[i, p] sits at a[i * a_row + p * a_col].
  const bool ta = trans_a == Trans::kYes;
  const std::size_t a_row = ta ? 1 : k, a_col = ta ? m : 1;
  const std::size_t row_blocks = (m + kRows - 1) / kRows;
#pragma omp parallel for schedule(static) if (big)
  for (std::size_t bi = 0; bi < row_blocks; ++bi) {
    const std::size_t i0 = bi * kRows, rows = std::min(kRows, m - i0);
    for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
      gemm_block(a + i0 * a_row, a_row, a_col, b + j0, n, c + i0 * n + j0, n, rows,
                 std::min(kTile, n - j0), k, accumulate);
    }
  }
}

template <typename Real>
void attention_forward(AttentionShape s, const std::size_t* lengths,
                       const Real* q, const Real* k, const Real* v, Real* probs,
                       Real* out) {
  const std::size_t width = s.heads * s.head_dim;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(s.head_dim));
  const std::size_t slices = s.batch * s.heads;
#pragma omp parallel for schedule(dynamic) if (slices > 1)
  for (std::size_t bh = 0; bh < slices; ++bh) {
    const std::size_t b = bh / s.heads;
    const std::size_t h = bh % s.heads;
    const std::size_t len = lengths[b];
    std::fill(probs + bh * s.seq * s.seq, probs + (bh + 1) * s.seq * s.seq,
              Real(0));
    for (std::size_t t = 0; t < s.seq; ++t) {
      Real* ot = out + (b * s.seq + t) * width + h * s.head_dim;
      std::fill(ot, ot + s.head_dim, Real(0));
    }
    for (std::size_t t = 0; t < len; ++t) {
      const Real* qt = q + (b * s.seq + t) * width + h * s.head_dim;
      Real* p = probs + (bh * s.seq + t) * s.seq;
      const std::size_t end = s.causal ? t + 1 : len;
      Real mx = -INFINITY;
      for (std::size_t u = 0; u < end; ++u) {
        const Real* ku = k + (b * s.seq + u) * width + h * s.head_dim;
        Real dot = 0;
#pragma omp simd reduction(+ : dot)
        for (std::size_t j = 0; j < s.head_dim; ++j) dot += qt[j] * ku[j];
        p[u] = dot * scale;
        mx = std::max(mx, p[u]);
      }
      Real total = 0;
      for (std::size_t u = 0; u < end; ++u) {
        p[u] = std::exp(p[u] - mx);
        total += p[u];
      }
      Real* ot = out + (b * s.seq + t) * width + h * s.head_dim;
      const Real inv = Real(1) / total;
      for (std::size_t u = 0; u < end; ++u) {
        p[u] *= inv;
        const Real* vu = v + (b * s.seq + u) * width + h * s.head_dim;
        const Real pu = p[u];
#pragma omp simd
        for (std::size_t j = 0; j < s.head_dim; ++j) ot[j] += pu * vu[j];
      }
    }
  }
}

template <typename Real>
void attention_backward(AttentionShape s, const std::size_t* lengths,
                        const Real* q, const Real* k, const Real* v,
                        const Real* probs, const Real* dout, Real* dq, Real* dk,
                        Real* dv) {
  const std::size_t width = s.heads * s.head_dim;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(s.head_dim));
  const std::size_t slices = s.batch * s.heads;
#pragma omp parallel if (slices > 1)
  {
    std::vector<Real> dscore(s.seq);
#pragma omp for schedule(dynamic)
    for (std::size_t bh = 0; bh < slices; ++bh) {
      const std::size_t b = bh / s.heads;
      const std::size_t h = bh % s.heads;
      const std::size_t len = lengths[b];
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t row_t = (b * s.seq + t) * width + h * s.head_dim;
        const Real* p = probs + (bh * s.seq + t) * s.seq;
        const std::size_t end = s.causal ? t + 1 : len;
        Real weighted = 0;
        for (std::size_t u = 0; u < end; ++u) {
          const std::size_t row_u = (b * s.seq + u) * width + h * s.head_dim;
          Real dp = 0;
          const Real pu = p[u];
#pragma omp simd reduction(+ : dp)
          for (std::size_t j = 0; j < s.head_dim; ++j) {
            dp += dout[row_t + j] * v[row_u + j];
            dv[row_u + j] += pu * dout[row_t + j];
          }
          dscore[u] = dp;
          weighted += pu * dp;
        }
        for (std::size_t u = 0; u < end; ++u) {
          const std::size_t row_u = (b * s.seq + u) * width + h * s.head_dim;
          const Real ds = p[u] * (dscore[u] - weighted) * scale;
#pragma omp simd
          for (std::size_t j = 0; j < s.head_dim; ++j) {
            dq[row_t + j] += ds * k[row_u + j];
            dk[row_u + j] += ds * q[row_t + j];
          }
        }
      }
    }
  }
}

template <typename Real>
Real exp_shifted(const Real* x, Real shift, Real* out, std::size_t n) {
  return serial::exp_shifted(x, shift, out, n);
}

// Cody-Waite reduction and the Cephes expf polynomial.
template <>
float exp_shifted<float>(const float* x, float shift, float* out, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) {
    const float v = x[i] - shift;
    const float c = std::min(std::max(v, -87.0f), 88.0f);
    // Round to nearest by adding and removing 1.5 * 2^23.
    const float k = (c * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
    const float r = c - k * 0.693359375f + k * 2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    const std::int32_t bits = (static_cast<std::int32_t>(k) + 127) << 23;
    out[i] = p * std::bit_cast<float>(bits) * static_cast<float>(v >= -87.0f);
  }
  float sum = 0;
#pragma omp simd reduction(+ : sum)
  for (std::size_t i = 0; i < n; ++i) sum += out[i];
  return sum;
}

}  // namespace parallel

int max_threads() { return omp_get_max_threads(); }

void set_threads(int n) {
  if (n < 1) throw std::invalid_argument("thread count must be >= 1");
  omp_set_num_threads(n);
}

#define GPSD_INSTANTIATE_KERNELS(NS, Real)                                   \
  template void NS::gemm<Real>(Trans, Trans, GemmShape, const Real*,         \
                               const Real*, Real*, bool);                    \
  template void NS::attention_forward<Real>(AttentionShape,                  \
                                            const std::size_t*, const Real*, \
                                            const Real*, const Real*, Real*, \
                                            Real*);                          \
  template void NS::attention_backward<Real>(                                \
      AttentionShape, const std::size_t*, const Real*, const Real*,          \
      const Real*, const Real*, const Real*, Real*, Real*, Real*);        \
  template Real NS::exp_shifted<Real>(const Real*, Real, Real*, std::size_t);

GPSD_INSTANTIATE_KERNELS(serial, float)
GPSD_INSTANTIATE_KERNELS(serial, double)
GPSD_INSTANTIATE_KERNELS(parallel, float)
GPSD_INSTANTIATE_KERNELS(parallel, double)

#undef GPSD_INSTANTIATE_KERNELS

}  // namespace gpsd::kernels
