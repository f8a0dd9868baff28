#include <cstdlib>
#include <string_view>

#include "apef/kernels.hpp"

namespace apef::kernels {

#if defined(APEF_HAVE_AVX2)
const KernelTable& avx2_kernels() noexcept;
#endif
#if defined(APEF_HAVE_NEON)
const KernelTable& neon_kernels() noexcept;
#endif

const KernelTable* avx2_table() noexcept {
#if defined(APEF_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &avx2_kernels() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() noexcept {
#if defined(APEF_HAVE_NEON)
  return &neon_kernels();  // NEON is mandatory on AArch64
#else
  return nullptr;
#endif
}

namespace {

const KernelTable& select() noexcept {
  const char* env = std::getenv("APEF_SIMD");
  const std::string_view want = env ? env : "";
  if (want == "scalar") return scalar_table();
  if (want == "avx2" && avx2_table()) return *avx2_table();
  if (want == "neon" && neon_table()) return *neon_table();
  if (const auto* t = avx2_table()) return *t;
  if (const auto* t = neon_table()) return *t;
  return scalar_table();
}

}  // namespace

const KernelTable& active() noexcept {
  static const KernelTable& table = select();
  return table;
}

}  // namespace apef::kernels
