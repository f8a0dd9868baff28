#include <doctest.h>

#include <numeric>

#include "apef/error.hpp"
#include "apef/rng.hpp"
#include "apef/series.hpp"

using namespace apef;

namespace {

const std::vector<double> kRamp{0, .05, .10, .15, .20, .25, .30, .30, .25, .20, .15, .10, .05, 0};

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected apef::Error");
  return ErrorCode::kIoError;
}

}  // namespace

TEST_CASE("segment: trapezoid ramp") {
  const Segmentation seg = segment(kRamp);
  CHECK(seg.rise_start == 1);
  CHECK(seg.fall_end == 14);
  CHECK(seg.rising_steps == std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
  CHECK(seg.falling_steps == std::vector<std::size_t>{8, 9, 10, 11, 12, 13});
  CHECK(seg.peak_period_length() == 14);
}

TEST_CASE("segment: no pattern") {
  CHECK(code_of([] { segment(std::vector<double>{1, 1, 1, 1, 1, 1, 1}); }) == ErrorCode::kNoRiseFallPattern);
  CHECK(code_of([] { segment(std::vector<double>{0, .02, 0, .02, 0, .02, 0}); }) == ErrorCode::kNoRiseFallPattern);
  // A fall that only precedes the rise does not count.
  const std::vector<double> valley{.3, .25, .2, .15, .1, .05, 0, .05, .1, .15, .2, .25, .3};
  CHECK_FALSE(try_segment(valley).has_value());
}

TEST_CASE("segment: bad parameters") {
  SegmentationParams p;
  p.theta_rise = -0.1;
  CHECK(code_of([&] { segment(kRamp, p); }) == ErrorCode::kInvalidParams);
  p = {};
  p.theta_period = 0;
  CHECK(code_of([&] { segment(kRamp, p); }) == ErrorCode::kInvalidParams);
}

TEST_CASE("segment: short runs are filtered, first rise and last fall win") {
  // rise of 3 (filtered), flat, rise of 5, fall of 5, flat, fall of 6
  std::vector<double> v{0, .1, .2, .3, .3, .4, .5, .6, .7, .8, .7, .6, .5, .4, .3, .3, .2, .1, 0, -.1, -.2, -.3};
  const Segmentation seg = segment(v);
  CHECK(seg.rise_start == 5);
  CHECK(seg.fall_end == 22);
}

TEST_CASE("segment is invariant under constant shift") {
  Rng rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<double> v(60);
    for (std::size_t t = 0; t < v.size(); ++t) v[t] = std::sin(t / 9.0) + 0.01 * rng.normal();
    std::vector<double> shifted = v;
    for (double& x : shifted) x += 5.0;
    const auto a = try_segment(v);
    const auto b = try_segment(shifted);
    REQUIRE(a.has_value() == b.has_value());
    if (a) {
      CHECK(a->rise_start == b->rise_start);
      CHECK(a->fall_end == b->fall_end);
    }
    CHECK(detect_peaks(v).indices == detect_peaks(shifted).indices);
  }
}

TEST_CASE("split_occurrences finds each rise-fall window") {
  std::vector<double> one = kRamp;
  std::vector<double> twice = kRamp;
  twice.insert(twice.end(), kRamp.begin(), kRamp.end());
  const auto w1 = split_occurrences(one);
  REQUIRE(w1.size() == 1);
  CHECK(w1[0] == std::pair<std::size_t, std::size_t>{1, 14});
  const auto w2 = split_occurrences(twice);
  REQUIRE(w2.size() == 2);
  CHECK(w2[0] == std::pair<std::size_t, std::size_t>{1, 14});
  CHECK(w2[1] == std::pair<std::size_t, std::size_t>{15, 28});
  CHECK(split_occurrences(std::vector<double>{1, 1, 1, 1}).empty());
}

TEST_CASE("detect_peaks") {
  auto p = detect_peaks(std::vector<double>{1, 3, 2});
  CHECK(p.indices == std::vector<std::size_t>{2});
  CHECK(p.values == std::vector<double>{3});
  CHECK(detect_peaks(std::vector<double>{1, 2, 3}).empty());
  p = detect_peaks(std::vector<double>{0, 2, 1, 4, 1});
  CHECK(p.indices == std::vector<std::size_t>{2, 4});
  CHECK(p.values == std::vector<double>{2, 4});
  // plateau maxima are not strict
  CHECK(detect_peaks(std::vector<double>{0, 2, 2, 0}).empty());
}

TEST_CASE("derivatives") {
  CHECK(first_derivative(std::vector<double>{1, 1, 1}) == std::vector<double>{0, 0});
  CHECK(first_derivative(std::vector<double>{0, 1, 3}) == std::vector<double>{1, 2});
  CHECK(second_derivative(std::vector<double>{0, 1, 3}) == std::vector<double>{1});

  std::vector<double> linear(10), quad(10);
  for (int t = 0; t < 10; ++t) {
    linear[t] = 2.5 - 0.75 * t;
    quad[t] = static_cast<double>(t * t);
  }
  for (double d : first_derivative(linear)) CHECK(d == doctest::Approx(-0.75).epsilon(1e-14));
  for (double d : second_derivative(linear)) CHECK(d == doctest::Approx(0.0));
  for (double d : second_derivative(quad)) CHECK(d == 2.0);
}

TEST_CASE("discrete calculus: second difference of a cumulative sum is the first difference") {
  Rng rng(11);
  std::vector<double> x(40);
  for (double& v : x) v = rng.normal();
  std::vector<double> cum(x.size());
  std::partial_sum(x.begin(), x.end(), cum.begin());
  const auto d2 = second_derivative(cum);
  const auto d1 = first_derivative(x);
  // cum[t+2] - 2 cum[t+1] + cum[t] = x[t+2] - x[t+1] = d1[t+1]
  REQUIRE(d2.size() + 1 == d1.size());
  for (std::size_t t = 0; t < d2.size(); ++t) CHECK(d2[t] == doctest::Approx(d1[t + 1]).epsilon(1e-12));
}

TEST_CASE("check_series rejects short or non-finite series") {
  TimeSeries s{"i", "GPP", {1.0, 2.0}, "daily"};
  CHECK(code_of([&] { check_series(s); }) == ErrorCode::kInvalidSeries);
  s.values = {1.0, std::nan(""), 2.0};
  CHECK(code_of([&] { check_series(s); }) == ErrorCode::kInvalidSeries);
}
