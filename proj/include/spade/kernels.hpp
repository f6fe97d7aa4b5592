#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

// Inner-loop kernels with a scalar reference and SIMD variants selected at
// runtime.
//
// Every variant follows the same canonical summation order, so results are
// bit-identical across variants:
//   * dot: eight striped partial sums (lane l accumulates elements i with
//     i % 8 == l over the 8-aligned prefix), combined as
//     ((l0+l4)+(l2+l6)) + ((l1+l5)+(l3+l7)), then the tail added in order.
//   * every other kernel is element-wise or accumulates rows in ascending
//     order, one multiply and one add per step.
// No variant uses fused multiply-add; the build disables FP contraction.

namespace spade::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa) noexcept;

struct KernelTable {
  Isa isa;
  /// sum_i a[i] * b[i]
  float (*dot)(const float* a, const float* b, std::size_t n);
  /// y[i] += alpha * x[i]
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
  /// y[r] = dot(w[r, :], x) for a rows x cols row-major w
  void (*matvec)(const float* w, std::size_t rows, std::size_t cols, const float* x, float* y);
  /// x[c] += sum_r y[r] * w[r, c], rows visited in ascending order
  void (*matvec_t_acc)(const float* w, std::size_t rows, std::size_t cols, const float* y, float* x);
  /// w[r, c] += a[r] * b[c]
  void (*outer_acc)(const float* a, std::size_t rows, const float* b, std::size_t cols, float* w);
};

const KernelTable& scalar_table() noexcept;
/// Null when the variant was not compiled into this build.
const KernelTable* avx2_table() noexcept;
const KernelTable* neon_table() noexcept;

/// Variants that are compiled in and supported by the running CPU.
std::vector<Isa> available();
bool is_available(Isa isa);

/// The table used by all tensor ops. Chosen once from CPU features, or from
/// the SPADE_KERNELS environment variable ("scalar", "avx2", "neon").
const KernelTable& active() noexcept;
/// Overrides the active table. Throws ConfigError if unavailable.
void select(Isa isa);
Isa parse_isa(std::string_view name);

}  // namespace spade::kernels
