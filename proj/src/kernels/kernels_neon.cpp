// Compiled on AArch64 only; see src/CMakeLists.txt.
#include <arm_neon.h>

#include <cmath>

#include "apef/kernels.hpp"

namespace apef::kernels {
namespace {

double sum(const double* a, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}

double sum_sq_diff(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
    acc = vaddq_f64(acc, vmulq_f64(d, d));
  }
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double sum_abs_diff(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vabdq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += std::fabs(a[i] - b[i]);
  return s;
}

double sum_sq_dev(const double* a, std::size_t n, double c) {
  const float64x2_t vc = vdupq_n_f64(c);
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vc);
    acc = vaddq_f64(acc, vmulq_f64(d, d));
  }
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) {
    const double d = a[i] - c;
    s += d * d;
  }
  return s;
}

double diff1_sq_diff(const double* a, const double* b, std::size_t n) {
  if (n < 2) return 0.0;
  const std::size_t m = n - 1;
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t t = 0;
  for (; t + 2 <= m; t += 2) {
    const float64x2_t da = vsubq_f64(vld1q_f64(a + t + 1), vld1q_f64(a + t));
    const float64x2_t db = vsubq_f64(vld1q_f64(b + t + 1), vld1q_f64(b + t));
    const float64x2_t d = vsubq_f64(da, db);
    acc = vaddq_f64(acc, vmulq_f64(d, d));
  }
  double s = vaddvq_f64(acc);
  for (; t < m; ++t) {
    const double d = (a[t + 1] - a[t]) - (b[t + 1] - b[t]);
    s += d * d;
  }
  return s;
}

double diff2_sq_diff(const double* a, const double* b, std::size_t n) {
  if (n < 3) return 0.0;
  const std::size_t m = n - 2;
  const float64x2_t two = vdupq_n_f64(2.0);
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t t = 0;
  for (; t + 2 <= m; t += 2) {
    const float64x2_t ca =
        vaddq_f64(vsubq_f64(vld1q_f64(a + t + 2), vmulq_f64(two, vld1q_f64(a + t + 1))), vld1q_f64(a + t));
    const float64x2_t cb =
        vaddq_f64(vsubq_f64(vld1q_f64(b + t + 2), vmulq_f64(two, vld1q_f64(b + t + 1))), vld1q_f64(b + t));
    const float64x2_t d = vsubq_f64(ca, cb);
    acc = vaddq_f64(acc, vmulq_f64(d, d));
  }
  double s = vaddvq_f64(acc);
  for (; t < m; ++t) {
    const double d = (a[t + 2] - 2.0 * a[t + 1] + a[t]) - (b[t + 2] - 2.0 * b[t + 1] + b[t]);
    s += d * d;
  }
  return s;
}

}  // namespace

const KernelTable& neon_kernels() noexcept {
  static const KernelTable table{"neon",     sum,           sum_sq_diff,  sum_abs_diff,
                                 sum_sq_dev, diff1_sq_diff, diff2_sq_diff};
  return table;
}

}  // namespace apef::kernels
