#pragma once
// Reduction kernels behind the metric inner loops.
//
// Every kernel has a scalar reference implementation. Vector variants
// (AVX2 on x86-64, NEON on AArch64) are selected once at startup from the
// CPU feature set; APEF_SIMD=scalar|avx2|neon overrides the choice. Vector
// variants reassociate sums, so they agree with the reference to a relative
// 1e-12 rather than bit-for-bit.

#include <cstddef>
#include <span>
#include <string_view>

namespace apef::kernels {

struct KernelTable {
  std::string_view name;
  double (*sum)(const double* a, std::size_t n);
  // sum (a_i - b_i)^2
  double (*sum_sq_diff)(const double* a, const double* b, std::size_t n);
  // sum |a_i - b_i|
  double (*sum_abs_diff)(const double* a, const double* b, std::size_t n);
  // sum (a_i - c)^2
  double (*sum_sq_dev)(const double* a, std::size_t n, double c);
  // With e = a - b: sum over t < n-1 of (e_{t+1} - e_t)^2
  double (*diff1_sq_diff)(const double* a, const double* b, std::size_t n);
  // With e = a - b: sum over t < n-2 of (e_{t+2} - 2 e_{t+1} + e_t)^2
  double (*diff2_sq_diff)(const double* a, const double* b, std::size_t n);
};

const KernelTable& scalar_table() noexcept;
// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2_table() noexcept;
const KernelTable* neon_table() noexcept;

// The table every library routine uses. Selected on first call.
const KernelTable& active() noexcept;

inline double sum(std::span<const double> a) { return active().sum(a.data(), a.size()); }

inline double sum_sq_diff(std::span<const double> a, std::span<const double> b) {
  return active().sum_sq_diff(a.data(), b.data(), a.size());
}

inline double sum_abs_diff(std::span<const double> a, std::span<const double> b) {
  return active().sum_abs_diff(a.data(), b.data(), a.size());
}

inline double sum_sq_dev(std::span<const double> a, double c) {
  return active().sum_sq_dev(a.data(), a.size(), c);
}

inline double diff1_sq_diff(std::span<const double> a, std::span<const double> b) {
  return active().diff1_sq_diff(a.data(), b.data(), a.size());
}

inline double diff2_sq_diff(std::span<const double> a, std::span<const double> b) {
  return active().diff2_sq_diff(a.data(), b.data(), a.size());
}

}  // namespace apef::kernels
