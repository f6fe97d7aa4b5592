#pragma once

#include "spade/kernels.hpp"

namespace spade::kernels::detail {

// Defined in the per-ISA translation units that are compiled in.
const KernelTable* avx2_table_impl() noexcept;
const KernelTable* neon_table_impl() noexcept;

}  // namespace spade::kernels::detail
