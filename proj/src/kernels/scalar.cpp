#include "kernels_impl.hpp"

namespace spade::kernels {
namespace {

float dot_scalar(const float* a, const float* b, std::size_t n) {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] = acc[l] + a[i + l] * b[i + l];
  }
  float r = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
  for (; i < n; ++i) r = r + a[i] * b[i];
  return r;
}

void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void matvec_scalar(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot_scalar(w + r * cols, x, cols);
}

void matvec_t_acc_scalar(const float* w, std::size_t rows, std::size_t cols, const float* y, float* x) {
  for (std::size_t r = 0; r < rows; ++r) axpy_scalar(y[r], w + r * cols, x, cols);
}

void outer_acc_scalar(const float* a, std::size_t rows, const float* b, std::size_t cols, float* w) {
  for (std::size_t r = 0; r < rows; ++r) axpy_scalar(a[r], b, w + r * cols, cols);
}

constexpr KernelTable kScalar{Isa::Scalar, dot_scalar, axpy_scalar, matvec_scalar, matvec_t_acc_scalar,
                              outer_acc_scalar};

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

}  // namespace spade::kernels
