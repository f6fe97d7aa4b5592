#include "kernels_impl.hpp"

#if defined(__AVX2__)
#include <immintrin.h>

namespace spade::kernels {
namespace {

inline float hsum_canonical(__m256 acc) {
  const __m128 lo = _mm256_castps256_ps128(acc);
  const __m128 hi = _mm256_extractf128_ps(acc, 1);
  const __m128 s = _mm_add_ps(lo, hi);            // l0+l4, l1+l5, l2+l6, l3+l7
  const __m128 t = _mm_add_ps(s, _mm_movehl_ps(s, s));  // (l0+l4)+(l2+l6), (l1+l5)+(l3+l7)
  return _mm_cvtss_f32(_mm_add_ss(t, _mm_shuffle_ps(t, t, 0x55)));
}

float dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  float r = hsum_canonical(acc);
  for (; i < n; ++i) r = r + a[i] * b[i];
  return r;
}

void axpy_avx2(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), _mm256_mul_ps(va, _mm256_loadu_ps(x + i))));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void matvec_avx2(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
  std::size_t r = 0;
  // Four rows at a time share the loads of x.
  for (; r + 4 <= rows; r += 4) {
    const float* w0 = w + r * cols;
    const float* w1 = w0 + cols;
    const float* w2 = w1 + cols;
    const float* w3 = w2 + cols;
    __m256 a0 = _mm256_setzero_ps(), a1 = _mm256_setzero_ps();
    __m256 a2 = _mm256_setzero_ps(), a3 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= cols; i += 8) {
      const __m256 vx = _mm256_loadu_ps(x + i);
      a0 = _mm256_add_ps(a0, _mm256_mul_ps(_mm256_loadu_ps(w0 + i), vx));
      a1 = _mm256_add_ps(a1, _mm256_mul_ps(_mm256_loadu_ps(w1 + i), vx));
      a2 = _mm256_add_ps(a2, _mm256_mul_ps(_mm256_loadu_ps(w2 + i), vx));
      a3 = _mm256_add_ps(a3, _mm256_mul_ps(_mm256_loadu_ps(w3 + i), vx));
    }
    float r0 = hsum_canonical(a0), r1 = hsum_canonical(a1);
    float r2 = hsum_canonical(a2), r3 = hsum_canonical(a3);
    for (; i < cols; ++i) {
      r0 = r0 + w0[i] * x[i];
      r1 = r1 + w1[i] * x[i];
      r2 = r2 + w2[i] * x[i];
      r3 = r3 + w3[i] * x[i];
    }
    y[r] = r0;
    y[r + 1] = r1;
    y[r + 2] = r2;
    y[r + 3] = r3;
  }
  for (; r < rows; ++r) y[r] = dot_avx2(w + r * cols, x, cols);
}

void matvec_t_acc_avx2(const float* w, std::size_t rows, std::size_t cols, const float* y, float* x) {
  for (std::size_t r = 0; r < rows; ++r) axpy_avx2(y[r], w + r * cols, x, cols);
}

void outer_acc_avx2(const float* a, std::size_t rows, const float* b, std::size_t cols, float* w) {
  for (std::size_t r = 0; r < rows; ++r) axpy_avx2(a[r], b, w + r * cols, cols);
}

constexpr KernelTable kAvx2{Isa::Avx2, dot_avx2, axpy_avx2, matvec_avx2, matvec_t_acc_avx2, outer_acc_avx2};

}  // namespace

const KernelTable* detail::avx2_table_impl() noexcept { return &kAvx2; }

}  // namespace spade::kernels

#else

namespace spade::kernels {
const KernelTable* detail::avx2_table_impl() noexcept { return nullptr; }
}  // namespace spade::kernels

#endif
