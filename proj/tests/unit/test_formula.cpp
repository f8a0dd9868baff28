#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "apef/error.hpp"
#include "apef/formula.hpp"
#include "apef/metrics.hpp"
#include "apef/rng.hpp"
#include "apef/series.hpp"
#include "apef/stats.hpp"
#include "oracles.hpp"

using namespace apef;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected apef::Error");
  return ErrorCode::kIoError;
}

double run(const std::string& src, const std::vector<double>& p, const std::vector<double>& o) {
  FormulaInputs in;
  in.pred = p;
  in.obs = o;
  return eval_formula(Formula::parse(src), in);
}

const std::vector<double> kRamp{0, .05, .10, .15, .20, .25, .30, .30, .25, .20, .15, .10, .05, 0};

}  // namespace

TEST_CASE("arithmetic and precedence") {
  const std::vector<double> x{1, 2, 3};
  CHECK(run("1 + 2 * 3", x, x) == 7);
  CHECK(run("(1 + 2) * 3", x, x) == 9);
  CHECK(run("-2 * -3", x, x) == 6);
  CHECK(run("10 / 4 - 1", x, x) == 1.5);
  CHECK(run("2 - 3 - 4", x, x) == -5);
  CHECK(run("1.5e1 + .5", x, x) == 15.5);
  CHECK(run("sum(pred * 2 + obs)", x, x) == 18);
  CHECK(run("mean(abs(pred - 5))", x, x) == 3);
  CHECK(run("max(pred) - min(obs)", x, x) == 2);
  CHECK(run("sum(max(pred, 2))", x, x) == 7);
  CHECK(run("clamp01(3) + clamp01(-1) + clamp01(0.25)", x, x) == 1.25);
  CHECK(run("len(obs)", x, x) == 3);
}

TEST_CASE("PPCS parses to seven operation nodes") {
  const Formula f =
      Formula::parse("1 - abs(peak_period_length(pred) - peak_period_length(obs)) / peak_period_length(obs)");
  // -, /, abs, -, and three peak_period_length calls
  CHECK(f.operation_count() == 7);
  CHECK(f.names() == std::set<std::string>{"pred", "obs"});
  CHECK(run(f.source(), kRamp, kRamp) == 1.0);
  std::vector<double> wider = kRamp;
  wider.insert(wider.begin() + 7, .30);  // one more plateau step: 15 vs 14
  wider.pop_back();
  // peak period 14 vs 13 (wider loses the final 0 and the fall ends one step early)
  const auto a = segment(wider), b = segment(kRamp);
  const double expect = 1.0 - std::fabs(double(a.peak_period_length()) - double(b.peak_period_length())) / b.peak_period_length();
  CHECK(run(f.source(), wider, kRamp) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("violation fraction") {
  const std::string vf = "count_where(abs(pred - obs) > 1.0) / len(obs)";
  CHECK(run(vf, kRamp, kRamp) == 0.0);
  const std::vector<double> p{0, 3, 0, 0}, o{0, 0, 0, 1.5};
  CHECK(run(vf, p, o) == 0.5);
  CHECK(run("count_where(pred >= 0)", p, o) == 4);
  CHECK(run("count_where(pred != obs)", p, o) == 2);
}

TEST_CASE("syntax errors carry a position") {
  auto msg = [](const std::string& src) -> std::string {
    try {
      Formula::parse(src);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kFormulaSyntaxError);
      return e.what();
    }
    FAIL("expected a syntax error for " << src);
    return "";
  };
  CHECK(msg("1 +").find("position 3") != std::string::npos);
  CHECK(msg("foo(pred)").find("unknown function 'foo'") != std::string::npos);
  CHECK(msg("rmse(pred)").find("takes 2") != std::string::npos);
  CHECK(msg("mean(3)").find("must be a series") != std::string::npos);
  CHECK(msg("pred").find("scalar") != std::string::npos);
  CHECK(msg("pred > obs").find("count_where") != std::string::npos);
  CHECK(msg("count_where(pred)").find("comparison") != std::string::npos);
  CHECK(msg("mean(pred) $ 2").find("position 11") != std::string::npos);
  CHECK(msg("weather").find("unknown name") != std::string::npos);
  CHECK(msg("(1 + 2").find("expected ')'") != std::string::npos);
}

TEST_CASE("aggregation scope sees metric names only") {
  const FormulaScope s = FormulaScope::aggregation({"A", "B"});
  const Formula f = Formula::parse("A + 2 * B", s);
  FormulaInputs in;
  in.scalars = {{"A", 1.0}, {"B", 3.0}};
  CHECK(eval_formula(f, in) == 7.0);
  CHECK(code_of([&] { Formula::parse("A + mean(pred)", s); }) == ErrorCode::kFormulaSyntaxError);
  CHECK(code_of([] { Formula::parse("A + 1"); }) == ErrorCode::kFormulaSyntaxError);
}

TEST_CASE("evaluation errors") {
  const std::vector<double> x{1, 2, 3}, flat{1, 1, 1, 1, 1, 1};
  CHECK(code_of([&] { run("1 / (mean(pred) - 2)", x, x); }) == ErrorCode::kEvaluationError);
  CHECK(code_of([&] { run("sum(pred / (obs - 2))", x, x); }) == ErrorCode::kEvaluationError);
  CHECK(code_of([&] { run("sqrt(-1)", x, x); }) == ErrorCode::kEvaluationError);
  CHECK(code_of([&] { run("peak_period_length(obs)", flat, flat); }) == ErrorCode::kEvaluationError);
  CHECK(code_of([&] { run("exp(1000)", x, x); }) == ErrorCode::kEvaluationError);
  CHECK(code_of([&] { run("rmse(pred2, obs)", x, x); }) == ErrorCode::kEvaluationError);
  CHECK(code_of([&] { run("sum(pred - obs)", x, std::vector<double>{1, 2}); }) == ErrorCode::kEvaluationError);
  CHECK(code_of([&] { run("corr_spearman(pred, obs)", flat, flat); }) == ErrorCode::kEvaluationError);
}

TEST_CASE("builtins match their native implementations") {
  Rng rng(303);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 30 + rng.below(60);
    std::vector<double> p(n), o(n);
    for (std::size_t t = 0; t < n; ++t) {
      o[t] = std::sin(t / 6.0) + 0.3 * rng.normal();
      p[t] = o[t] + 0.5 * rng.normal();
    }
    auto near = [](double a, double b) { return std::fabs(a - b) <= 1e-12 * std::max(1.0, std::fabs(b)); };
    CHECK(near(run("rmse(pred, obs)", p, o), rmse(p, o)));
    CHECK(near(run("mae(pred, obs)", p, o), mae(p, o)));
    CHECK(near(run("corr_spearman(pred, obs)", p, o), oracle::spearman(p, o)));
    double d1 = 0, d2 = 0;
    for (std::size_t t = 1; t < n; ++t) d1 += std::pow((p[t] - p[t - 1]) - (o[t] - o[t - 1]), 2);
    for (std::size_t t = 2; t < n; ++t) {
      d2 += std::pow((p[t] - 2 * p[t - 1] + p[t - 2]) - (o[t] - 2 * o[t - 1] + o[t - 2]), 2);
    }
    CHECK(near(run("derivative_mse(pred, obs)", p, o), d1 / (n - 1)));
    CHECK(near(run("second_derivative_mse(pred, obs)", p, o), d2 / (n - 2)));
    CHECK(run("peak_count(pred)", p, o) == static_cast<double>(detect_peaks(p).indices.size()));
    if (const auto seg = try_segment(o)) {
      CHECK(run("peak_period_length(obs)", p, o) == static_cast<double>(seg->peak_period_length()));
    }
    CHECK(near(run("mean(pred)", p, o), mean(p)));
    double s = 0, mx = p[0], mn = p[0], sa = 0, se = 0, sq = 0, cl = 0;
    for (double v : p) {
      s += v;
      mx = std::max(mx, v);
      mn = std::min(mn, v);
      sa += std::fabs(v);
      se += std::exp(v);
      sq += std::sqrt(std::fabs(v));
      cl += std::clamp(v, 0.0, 1.0);
    }
    CHECK(near(run("sum(pred)", p, o), s));
    CHECK(run("max(pred)", p, o) == mx);
    CHECK(run("min(pred)", p, o) == mn);
    CHECK(near(run("sum(abs(pred))", p, o), sa));
    CHECK(near(run("sum(exp(pred))", p, o), se));
    CHECK(near(run("sum(sqrt(abs(pred)))", p, o), sq));
    CHECK(near(run("sum(clamp01(pred))", p, o), cl));
    CHECK(run("len(pred)", p, o) == static_cast<double>(n));
    std::size_t c = 0;
    for (std::size_t t = 0; t < n; ++t) c += std::fabs(p[t] - o[t]) > 0.4;
    CHECK(run("count_where(abs(pred - obs) > 0.4)", p, o) == static_cast<double>(c));
  }
}

TEST_CASE("canonical rendering reparses to the same value") {
  const std::vector<double> p{1, 4, 2, 8, 5}, o{2, 3, 2, 7, 6};
  for (const char* src : {"1 - abs(mean(pred) - mean(obs)) / 3", "-(2 * rmse(pred, obs)) + -mae(pred, obs)",
                          "count_where(pred - obs >= -1) / len(obs)"}) {
    const Formula f = Formula::parse(src);
    CHECK(run(f.canonical(), p, o) == run(src, p, o));
  }
}
