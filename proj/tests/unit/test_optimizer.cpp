#include <doctest.h>

#include <cmath>
#include <sstream>

#include "apef/datagen.hpp"
#include "apef/error.hpp"
#include "apef/optimizer.hpp"
#include "apef/rng.hpp"
#include "apef/stats.hpp"
#include "oracles.hpp"

using namespace apef;

namespace {

struct Row {
  int iteration;
  double w_peak, w_der, w_amp, tolerance, rho;
};

// Reads back the rows of a rendered history table. Written against the
// documented layout, independently of the formatter.
std::vector<Row> parse_history_table(const std::string& text) {
  std::vector<Row> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() < 2 || line[0] != '|' || !std::isdigit(static_cast<unsigned char>(line[2]))) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line.substr(1));
    while (std::getline(ls, cell, '|')) {
      const auto b = cell.find_first_not_of(' ');
      const auto e = cell.find_last_not_of(' ');
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    rows.push_back({std::stoi(cells[0]), std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]),
                    std::stod(cells[4]), std::stod(cells[6])});
  }
  return rows;
}

// Nearest feasible point on a 0.005 grid.
std::array<double, 3> grid_projection(const std::array<double, 3>& p, const std::array<double, 3>& prev, double delta) {
  double best = 1e300;
  std::array<double, 3> arg{};
  for (int i = 20; i <= 200; ++i) {
    for (int j = 20; j <= 200 - i; ++j) {
      const double a = i * 0.005, b = j * 0.005, c = 1.0 - a - b;
      const std::array<double, 3> w{a, b, c};
      bool ok = true;
      for (int k = 0; k < 3; ++k) {
        ok = ok && w[k] >= 0.1 - 1e-9 && w[k] <= 1.0 + 1e-9 && std::fabs(w[k] - prev[k]) <= delta + 1e-9;
      }
      if (!ok) continue;
      const double d = std::hypot(w[0] - p[0], w[1] - p[1], w[2] - p[2]);
      if (d < best) {
        best = d;
        arg = w;
      }
    }
  }
  return arg;
}

double dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected apef::Error");
  return ErrorCode::kIoError;
}

struct Fixture {
  Dataset data;
  std::vector<std::string> variables{"GPP", "CO2"};
  OptimizerContext ctx;

  explicit Fixture(std::uint64_t seed = 1, MetricWeights preset = preset_peak())
      : data(generate_dataset({synthetic_observation("GPP"), synthetic_observation("CO2")}, 20, seed)) {
    ctx.data = &data;
    ctx.variables = variables;
    ctx.train_target = build_target_ranking(data, data.split.train, variables, preset);
  }
};

}  // namespace

TEST_CASE("format_history: empty, windowed, round trip") {
  CHECK(format_history({}).find("no prior iterations") != std::string::npos);
  CHECK(parse_history_table(format_history({})).empty());
  std::vector<HistoryEntry> h{
      {1, {0.4, 0.3, 0.3, 5}, "m00~m01", 0.25, ""},
      {2, {0.5, 0.25, 0.25, 4}, "m02~m03", 1.0 / 3.0, ""},
      {3, {0.6, 0.2, 0.2, 3}, "m04~m05", -0.1, ""},
  };
  const auto rows = parse_history_table(format_history(h, 2));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].iteration == 2);
  CHECK(rows[1].iteration == 3);
  const auto all = parse_history_table(format_history(h, 10));
  REQUIRE(all.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(all[k].w_peak == h[k].weights.w_peak);
    CHECK(all[k].w_der == h[k].weights.w_der);
    CHECK(all[k].w_amp == h[k].weights.w_amp);
    CHECK(all[k].tolerance == h[k].weights.tolerance);
    CHECK(all[k].rho == h[k].train_correlation);
  }
}

TEST_CASE("validate_weights: feasible proposal is a fixed point") {
  const MetricWeights prev{0.4, 0.3, 0.3, 5};
  const MetricWeights p{0.5, 0.25, 0.25, 7};
  const ValidatedWeights v = validate_weights(p, prev);
  CHECK(v.weights == p);
  CHECK_FALSE(v.repaired);
}

TEST_CASE("validate_weights: large step is projected") {
  const MetricWeights prev{0.4, 0.3, 0.3, 5};
  const ValidatedWeights v = validate_weights({0.95, 0.025, 0.025, 5}, prev);
  CHECK(v.repaired);
  // box [0.2,0.6] x [0.1,0.5] x [0.1,0.5]; w_peak pinned at 0.6, the rest split evenly
  CHECK(v.weights.w_peak == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(v.weights.w_der == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(v.weights.w_amp == doctest::Approx(0.2).epsilon(1e-12));
  const auto oracle = grid_projection({0.95, 0.025, 0.025}, prev.simplex(), 0.2);
  CHECK(dist(v.weights.simplex(), oracle) < 0.01);
}

TEST_CASE("validate_weights: tolerance clamp and non-finite values") {
  const MetricWeights prev{0.4, 0.3, 0.3, 5};
  CHECK(validate_weights({0.4, 0.3, 0.3, 25}, prev).weights.tolerance == 10);
  CHECK(validate_weights({0.4, 0.3, 0.3, 0}, prev).weights.tolerance == 1);
  const ValidatedWeights v = validate_weights({std::nan(""), 0.3, 0.3, 5}, prev);
  CHECK(v.repaired);
  CHECK(weights_valid(v.weights));
}

TEST_CASE("validate_weights: unrepairable and bad constraints") {
  ConstraintSet c;
  c.lower = 0.4;
  CHECK(code_of([&] { validate_weights({0.4, 0.3, 0.3, 5}, {0.4, 0.3, 0.3, 5}, c); }) == ErrorCode::kUnrepairable);
  c = {};
  c.delta = 0;
  CHECK(code_of([&] { validate_weights({0.4, 0.3, 0.3, 5}, {0.4, 0.3, 0.3, 5}, c); }) == ErrorCode::kInvalidParams);
}

TEST_CASE("validate_weights matches the grid projection oracle") {
  Rng rng(101);
  for (int rep = 0; rep < 20; ++rep) {
    // random feasible previous point
    MetricWeights prev;
    do {
      prev.w_peak = 0.1 + 0.8 * rng.uniform();
      prev.w_der = 0.1 + 0.8 * rng.uniform();
      prev.w_amp = 1.0 - prev.w_peak - prev.w_der;
    } while (prev.w_amp < 0.1);
    const MetricWeights p{rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5), rng.uniform(-0.5, 1.5), 5};
    const ValidatedWeights v = validate_weights(p, prev);
    const auto oracle = grid_projection(p.simplex(), prev.simplex(), 0.2);
    // exact projection is never farther than the best grid point
    CHECK(dist(v.weights.simplex(), p.simplex()) <= dist(oracle, p.simplex()) + 1e-9);
    CHECK(dist(v.weights.simplex(), oracle) < 0.01);
  }
}

TEST_CASE("pairwise_agreement: self labels, inverted labels, recount") {
  Fixture f;
  Rng rng(4);
  const MetricWeights w{0.5, 0.3, 0.2, 4};
  std::vector<PairedSample> pairs;
  for (const IdPair& ids : sample_pairs(f.data.split.train, 20, 6)) {
    PairedSample p = make_pair(f.data, ids, f.variables);
    const double sa = score_bundle(p.a, p.obs, w), sb = score_bundle(p.b, p.obs, w);
    p.preferred = sa > sb ? Preference::kA : Preference::kB;
    pairs.push_back(p);
  }
  CHECK(pairwise_agreement(w, pairs) == 1.0);
  auto inverted = pairs;
  for (auto& p : inverted) p.preferred = *p.preferred == Preference::kA ? Preference::kB : Preference::kA;
  CHECK(pairwise_agreement(w, inverted) == 0.0);

  auto random_labels = pairs;
  for (auto& p : random_labels) p.preferred = rng.below(2) ? Preference::kA : Preference::kB;
  const MetricWeights other{0.2, 0.2, 0.6, 2};
  int hits = 0;
  for (const auto& p : random_labels) {
    const double sa = score_bundle(p.a, p.obs, other), sb = score_bundle(p.b, p.obs, other);
    hits += (*p.preferred == Preference::kA) == (sa > sb) && sa != sb;
  }
  CHECK(pairwise_agreement(other, random_labels) == static_cast<double>(hits) / 20.0);
}

TEST_CASE("training_correlation: same preset, reversal, composition") {
  Fixture f;
  CHECK(training_correlation(preset_peak(), f.ctx.train_target, f.data, f.variables) == doctest::Approx(1.0));
  TargetRanking rev = f.ctx.train_target;
  std::reverse(rev.ids.begin(), rev.ids.end());
  std::reverse(rev.scores.begin(), rev.scores.end());
  for (double& s : rev.scores) s = -s;
  CHECK(training_correlation(preset_peak(), rev, f.data, f.variables) == doctest::Approx(-1.0));

  const MetricWeights w{0.3, 0.4, 0.3, 6};
  std::vector<double> mine;
  for (const auto& id : f.ctx.train_target.ids) {
    const Candidate& c = f.data.candidate(id);
    mine.push_back(two_variable_score(c.series[0], c.series[1], f.data.observations[0], f.data.observations[1], w));
  }
  CHECK(training_correlation(w, f.ctx.train_target, f.data, f.variables) ==
        doctest::Approx(oracle::spearman(mine, f.ctx.train_target.scores)).epsilon(1e-12));
}

TEST_CASE("llm_step: identity script, repair path, skip path") {
  Fixture f;
  const MetricWeights cur{1.0 / 3, 1.0 / 3, 1.0 / 3, 5};
  PairedSample pair = make_pair(f.data, {f.data.split.train[0], f.data.split.train[1]}, f.variables, &f.ctx.train_target);
  std::vector<HistoryEntry> history;

  ScriptedAdapter same({{RequestTag::kWeightUpdate, "Keep them.\n" + serialize_weights(cur)}});
  StepResult r = llm_step(cur, history, pair, f.ctx, same);
  CHECK(r.weights == cur);
  CHECK_FALSE(r.skipped);
  REQUIRE(history.size() == 1);
  CHECK(history[0].iteration == 1);
  CHECK(history[0].pair_id == pair.pair_id);

  ScriptedAdapter wild({{RequestTag::kWeightUpdate, R"({"w_peak":0.98,"w_der":0.01,"w_amp":0.01,"tolerance":40})"}});
  r = llm_step(cur, history, pair, f.ctx, wild);
  CHECK(r.entry.rationale.find("[repaired:") != std::string::npos);
  CHECK(weights_valid(r.weights));
  CHECK(std::fabs(r.weights.w_peak - cur.w_peak) <= 0.2 + 1e-12);
  CHECK(r.weights.tolerance == 10);
  CHECK(history.size() == 2);
  CHECK(history[1].iteration == 2);

  ScriptedAdapter junk({{RequestTag::kWeightUpdate, "no idea"}, {RequestTag::kWeightUpdate, "still none"}});
  r = llm_step(r.weights, history, pair, f.ctx, junk);
  CHECK(r.skipped);
  CHECK(junk.remaining() == 0);
  CHECK(r.weights == history[1].weights);
  CHECK(history.size() == 3);

  ScriptedAdapter retry({{RequestTag::kWeightUpdate, "oops"}, {RequestTag::kWeightUpdate, serialize_weights(cur)}});
  r = llm_step(cur, history, pair, f.ctx, retry);
  CHECK_FALSE(r.skipped);
  CHECK(r.weights == cur);
}

TEST_CASE("llm_step: replaying a script is deterministic") {
  Fixture f;
  std::vector<ScriptEntry> script;
  Rng rng(12);
  for (int i = 0; i < 10; ++i) {
    const MetricWeights w{rng.uniform(), rng.uniform(), rng.uniform(), std::floor(1 + 12 * rng.uniform())};
    script.push_back({RequestTag::kWeightUpdate, "step " + std::to_string(i) + " " + serialize_weights(w)});
  }
  const auto pairs = sample_pairs(f.data.split.train, 10, 3);
  auto run = [&] {
    ScriptedAdapter a(script);
    std::vector<HistoryEntry> h;
    MetricWeights w{};
    for (const IdPair& ids : pairs) {
      w = llm_step(w, h, make_pair(f.data, ids, f.variables, &f.ctx.train_target), f.ctx, a).weights;
      CHECK(weights_valid(w));
    }
    return h;
  };
  const auto h1 = run();
  const auto h2 = run();
  REQUIRE(h1.size() == 10);
  for (std::size_t k = 0; k < h1.size(); ++k) {
    CHECK(h1[k].weights == h2[k].weights);
    CHECK(h1[k].train_correlation == h2[k].train_correlation);
    CHECK(h1[k].rationale == h2[k].rationale);
  }
}

TEST_CASE("weight prompt carries the pieces the model needs") {
  Fixture f;
  PairedSample pair = make_pair(f.data, {f.data.split.train[0], f.data.split.train[1]}, f.variables, &f.ctx.train_target);
  const std::string text = weight_user_prompt(MetricWeights{}, {}, pair, f.ctx);
  for (const char* needle : {"Current weights", "Constraints", "no prior iterations", "expert prefers", "\"w_peak\""}) {
    CHECK(text.find(needle) != std::string::npos);
  }
}

TEST_CASE("deterministic_optimize: budget semantics and monotone objective") {
  Fixture f;
  CHECK(code_of([&] { deterministic_optimize(MetricWeights{}, f.ctx, 0); }) == ErrorCode::kInvalidParams);
  CHECK(deterministic_optimize(MetricWeights{}, f.ctx, 1).history.size() <= 1);
  const OptimizeResult r = deterministic_optimize(MetricWeights{}, f.ctx, 200);
  const ObjectiveFn obj = training_objective(f.ctx);
  Objective last = obj(MetricWeights{});
  for (const HistoryEntry& e : r.history) {
    CHECK(weights_valid(e.weights));
    const Objective now = obj(e.weights);
    CHECK(now > last);
    CHECK(e.train_correlation >= last.primary);
    last = now;
  }
  const OptimizeResult again = deterministic_optimize(MetricWeights{}, f.ctx, 200);
  CHECK(again.weights == r.weights);
  CHECK(again.history.size() == r.history.size());
}

TEST_CASE("deterministic_optimize recovers the peak preset on the training split") {
  Fixture f(1, preset_peak());
  const OptimizeResult r = deterministic_optimize(MetricWeights{}, f.ctx, 200);
  CHECK(r.objective.primary >= 0.9);
  CHECK(r.weights.w_peak > r.weights.w_der);
  CHECK(r.weights.w_peak > r.weights.w_amp);
}
