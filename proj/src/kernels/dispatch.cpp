#include <atomic>
#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"
#include "spade/error.hpp"

namespace spade::kernels {

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::Scalar;
  if (name == "avx2") return Isa::Avx2;
  if (name == "neon") return Isa::Neon;
  throw ConfigError("unknown kernel variant '" + std::string(name) + "'");
}

const KernelTable* avx2_table() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  if (!__builtin_cpu_supports("avx2")) return nullptr;
#endif
  return detail::avx2_table_impl();
}

const KernelTable* neon_table() noexcept { return detail::neon_table_impl(); }

namespace {

const KernelTable* table_for(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return &scalar_table();
    case Isa::Avx2: return avx2_table();
    case Isa::Neon: return neon_table();
  }
  return nullptr;
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("SPADE_KERNELS"); env && *env) {
    const KernelTable* t = table_for(parse_isa(env));
    if (!t) throw ConfigError(std::string("SPADE_KERNELS=") + env + " is not available on this machine");
    return t;
  }
  if (auto* t = avx2_table()) return t;
  if (auto* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{initial_table()};
  return slot;
}

}  // namespace

std::vector<Isa> available() {
  std::vector<Isa> out{Isa::Scalar};
  if (avx2_table()) out.push_back(Isa::Avx2);
  if (neon_table()) out.push_back(Isa::Neon);
  return out;
}

bool is_available(Isa isa) { return table_for(isa) != nullptr; }

const KernelTable& active() noexcept { return *active_slot().load(std::memory_order_acquire); }

void select(Isa isa) {
  const KernelTable* t = table_for(isa);
  if (!t) throw ConfigError("kernel variant " + std::string(isa_name(isa)) + " is not available");
  active_slot().store(t, std::memory_order_release);
}

}  // namespace spade::kernels
