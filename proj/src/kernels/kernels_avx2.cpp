// Compiled with -mavx2 on x86-64 only; see src/CMakeLists.txt.
#include <immintrin.h>

#include <cmath>

#include "apef/kernels.hpp"

namespace apef::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline __m256d vabs(__m256d v) {
  return _mm256_andnot_pd(_mm256_set1_pd(-0.0), v);
}

double sum(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i];
  return s;
}

double sum_sq_diff(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double sum_abs_diff(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(acc, vabs(_mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i))));
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += std::fabs(a[i] - b[i]);
  return s;
}

double sum_sq_dev(const double* a, std::size_t n, double c) {
  const __m256d vc = _mm256_set1_pd(c);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), vc);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    const double d = a[i] - c;
    s += d * d;
  }
  return s;
}

double diff1_sq_diff(const double* a, const double* b, std::size_t n) {
  if (n < 2) return 0.0;
  const std::size_t m = n - 1;  // number of differences
  __m256d acc = _mm256_setzero_pd();
  std::size_t t = 0;
  for (; t + 4 <= m; t += 4) {
    const __m256d da = _mm256_sub_pd(_mm256_loadu_pd(a + t + 1), _mm256_loadu_pd(a + t));
    const __m256d db = _mm256_sub_pd(_mm256_loadu_pd(b + t + 1), _mm256_loadu_pd(b + t));
    const __m256d d = _mm256_sub_pd(da, db);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double s = hsum(acc);
  for (; t < m; ++t) {
    const double d = (a[t + 1] - a[t]) - (b[t + 1] - b[t]);
    s += d * d;
  }
  return s;
}

double diff2_sq_diff(const double* a, const double* b, std::size_t n) {
  if (n < 3) return 0.0;
  const std::size_t m = n - 2;
  const __m256d two = _mm256_set1_pd(2.0);
  __m256d acc = _mm256_setzero_pd();
  std::size_t t = 0;
  for (; t + 4 <= m; t += 4) {
    const __m256d ca = _mm256_add_pd(
        _mm256_sub_pd(_mm256_loadu_pd(a + t + 2), _mm256_mul_pd(two, _mm256_loadu_pd(a + t + 1))),
        _mm256_loadu_pd(a + t));
    const __m256d cb = _mm256_add_pd(
        _mm256_sub_pd(_mm256_loadu_pd(b + t + 2), _mm256_mul_pd(two, _mm256_loadu_pd(b + t + 1))),
        _mm256_loadu_pd(b + t));
    const __m256d d = _mm256_sub_pd(ca, cb);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double s = hsum(acc);
  for (; t < m; ++t) {
    const double d = (a[t + 2] - 2.0 * a[t + 1] + a[t]) - (b[t + 2] - 2.0 * b[t + 1] + b[t]);
    s += d * d;
  }
  return s;
}

}  // namespace

const KernelTable& avx2_kernels() noexcept {
  static const KernelTable table{"avx2",     sum,           sum_sq_diff,  sum_abs_diff,
                                 sum_sq_dev, diff1_sq_diff, diff2_sq_diff};
  return table;
}

}  // namespace apef::kernels
