#include <cmath>

#include "apef/kernels.hpp"

namespace apef::kernels {
namespace {

double sum(const double* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i];
  return s;
}

double sum_sq_diff(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double sum_abs_diff(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::fabs(a[i] - b[i]);
  return s;
}

double sum_sq_dev(const double* a, std::size_t n, double c) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - c;
    s += d * d;
  }
  return s;
}

double diff1_sq_diff(const double* a, const double* b, std::size_t n) {
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const double d = (a[t + 1] - a[t]) - (b[t + 1] - b[t]);
    s += d * d;
  }
  return s;
}

double diff2_sq_diff(const double* a, const double* b, std::size_t n) {
  if (n < 3) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t + 2 < n; ++t) {
    const double d = (a[t + 2] - 2.0 * a[t + 1] + a[t]) - (b[t + 2] - 2.0 * b[t + 1] + b[t]);
    s += d * d;
  }
  return s;
}

}  // namespace

const KernelTable& scalar_table() noexcept {
  static const KernelTable table{"scalar",     sum,           sum_sq_diff,  sum_abs_diff,
                                 sum_sq_dev,   diff1_sq_diff, diff2_sq_diff};
  return table;
}

}  // namespace apef::kernels
