#include <doctest.h>

#include <cmath>
#include <vector>

#include "apef/kernels.hpp"
#include "apef/rng.hpp"
#include "apef/series.hpp"

using apef::kernels::KernelTable;

namespace {

std::vector<const KernelTable*> vector_tables() {
  std::vector<const KernelTable*> out;
  if (auto* t = apef::kernels::avx2_table()) out.push_back(t);
  if (auto* t = apef::kernels::neon_table()) out.push_back(t);
  return out;
}

std::vector<double> random_vector(apef::Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal(3.0, 10.0);
  return v;
}

void check_close(double got, double want) {
  const double scale = std::max(1.0, std::fabs(want));
  CHECK(std::fabs(got - want) <= 1e-12 * scale);
}

}  // namespace

TEST_CASE("vector kernels agree with the scalar reference") {
  const KernelTable& ref = apef::kernels::scalar_table();
  const auto tables = vector_tables();
  MESSAGE("active kernel table: " << apef::kernels::active().name << ", vector variants: " << tables.size());
  apef::Rng rng(42);
  // Every length 0..67 exercises all tail paths; 365 and 1000 the bulk loop.
  std::vector<std::size_t> lengths;
  for (std::size_t n = 0; n < 68; ++n) lengths.push_back(n);
  lengths.push_back(365);
  lengths.push_back(1000);
  for (const KernelTable* t : tables) {
    for (std::size_t n : lengths) {
      const auto a = random_vector(rng, n);
      const auto b = random_vector(rng, n);
      check_close(t->sum(a.data(), n), ref.sum(a.data(), n));
      check_close(t->sum_sq_diff(a.data(), b.data(), n), ref.sum_sq_diff(a.data(), b.data(), n));
      check_close(t->sum_abs_diff(a.data(), b.data(), n), ref.sum_abs_diff(a.data(), b.data(), n));
      check_close(t->sum_sq_dev(a.data(), n, 1.5), ref.sum_sq_dev(a.data(), n, 1.5));
      check_close(t->diff1_sq_diff(a.data(), b.data(), n), ref.diff1_sq_diff(a.data(), b.data(), n));
      check_close(t->diff2_sq_diff(a.data(), b.data(), n), ref.diff2_sq_diff(a.data(), b.data(), n));
    }
  }
}

TEST_CASE("derivative kernels match explicit difference sequences") {
  apef::Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto a = random_vector(rng, 50);
    const auto b = random_vector(rng, 50);
    const auto da = apef::first_derivative(a);
    const auto db = apef::first_derivative(b);
    const auto ca = apef::second_derivative(a);
    const auto cb = apef::second_derivative(b);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < da.size(); ++i) s1 += (da[i] - db[i]) * (da[i] - db[i]);
    for (std::size_t i = 0; i < ca.size(); ++i) s2 += (ca[i] - cb[i]) * (ca[i] - cb[i]);
    check_close(apef::kernels::diff1_sq_diff(a, b), s1);
    check_close(apef::kernels::diff2_sq_diff(a, b), s2);
  }
}

TEST_CASE("kernels handle degenerate lengths") {
  const std::vector<double> one{1.0};
  for (const KernelTable* t : vector_tables()) {
    CHECK(t->diff1_sq_diff(one.data(), one.data(), 1) == 0.0);
    CHECK(t->diff2_sq_diff(one.data(), one.data(), 1) == 0.0);
    CHECK(t->sum(one.data(), 0) == 0.0);
  }
}
