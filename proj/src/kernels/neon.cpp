#include "kernels_impl.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)
#include <arm_neon.h>

namespace spade::kernels {
namespace {

// Lanes 0-3 live in `lo`, lanes 4-7 in `hi`, mirroring the 8-wide layout.
inline float hsum_canonical(float32x4_t lo, float32x4_t hi) {
  const float32x4_t s = vaddq_f32(lo, hi);
  const float32x2_t t = vadd_f32(vget_low_f32(s), vget_high_f32(s));
  return vget_lane_f32(t, 0) + vget_lane_f32(t, 1);
}

float dot_neon(const float* a, const float* b, std::size_t n) {
  float32x4_t lo = vdupq_n_f32(0.0f);
  float32x4_t hi = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    lo = vaddq_f32(lo, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
    hi = vaddq_f32(hi, vmulq_f32(vld1q_f32(a + i + 4), vld1q_f32(b + i + 4)));
  }
  float r = hsum_canonical(lo, hi);
  for (; i < n; ++i) r = r + a[i] * b[i];
  return r;
}

void axpy_neon(float alpha, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vmulq_f32(va, vld1q_f32(x + i))));
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void matvec_neon(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_neon(w + r * cols, x, cols);
}

void matvec_t_acc_neon(const float* w, std::size_t rows, std::size_t cols, const float* y, float* x) {
  for (std::size_t r = 0; r < rows; ++r) axpy_neon(y[r], w + r * cols, x, cols);
}

void outer_acc_neon(const float* a, std::size_t rows, const float* b, std::size_t cols, float* w) {
  for (std::size_t r = 0; r < rows; ++r) axpy_neon(a[r], b, w + r * cols, cols);
}

constexpr KernelTable kNeon{Isa::Neon, dot_neon, axpy_neon, matvec_neon, matvec_t_acc_neon, outer_acc_neon};

}  // namespace

const KernelTable* detail::neon_table_impl() noexcept { return &kNeon; }

}  // namespace spade::kernels

#else

namespace spade::kernels {
const KernelTable* detail::neon_table_impl() noexcept { return nullptr; }
}  // namespace spade::kernels

#endif
