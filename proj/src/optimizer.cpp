#include "apef/optimizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "apef/error.hpp"
#include "apef/io.hpp"
#include "apef/stats.hpp"

namespace apef {

std::string to_string(Preference p) { return p == Preference::kA ? "A" : "B"; }

Preference preference_from_string(const std::string& text) {
  if (text == "A" || text == "a") return Preference::kA;
  if (text == "B" || text == "b") return Preference::kB;
  throw Error(ErrorCode::kParseFailure, "preference must be A or B, got '" + text + "'");
}

std::string make_pair_id(const std::string& a, const std::string& b) { return a + "~" + b; }

PairedSample make_pair(const Dataset& data, const IdPair& ids, const std::vector<std::string>& variables,
                       const TargetRanking* target) {
  PairedSample s;
  s.pair_id = make_pair_id(ids.a, ids.b);
  s.id_a = ids.a;
  s.id_b = ids.b;
  s.a = data.predictions_for(ids.a, variables);
  s.b = data.predictions_for(ids.b, variables);
  s.obs = data.observations_for(variables);
  if (target) {
    auto pos = [&](const std::string& id) {
      return std::find(target->ids.begin(), target->ids.end(), id) - target->ids.begin();
    };
    const auto pa = pos(ids.a);
    const auto pb = pos(ids.b);
    if (pa == static_cast<std::ptrdiff_t>(target->ids.size()) ||
        pb == static_cast<std::ptrdiff_t>(target->ids.size())) {
      throw Error(ErrorCode::kInvalidParams, "pair " + s.pair_id + " is not covered by the target ranking");
    }
    s.preferred = pa < pb ? Preference::kA : Preference::kB;
  }
  return s;
}

void check_constraints(const ConstraintSet& c) {
  if (!(c.delta > 0.0) || !(c.lower >= 0.0) || !(c.lower < c.upper) || !(c.tolerance_lower <= c.tolerance_upper)) {
    throw Error(ErrorCode::kInvalidParams, "constraint set needs delta > 0 and ordered bounds");
  }
}

std::string format_history(const std::vector<HistoryEntry>& history, std::size_t window) {
  std::ostringstream out;
  if (history.empty() || window == 0) {
    out << "## Optimization history\nno prior iterations\n";
    return out.str();
  }
  out << "## Optimization history (oldest first)\n";
  out << "| iteration | w_peak | w_der | w_amp | tolerance | pair | train_correlation |\n";
  out << "|---|---|---|---|---|---|---|\n";
  const std::size_t first = history.size() > window ? history.size() - window : 0;
  for (std::size_t k = first; k < history.size(); ++k) {
    const HistoryEntry& e = history[k];
    out << "| " << e.iteration << " | " << io::format_double(e.weights.w_peak) << " | "
        << io::format_double(e.weights.w_der) << " | " << io::format_double(e.weights.w_amp) << " | "
        << io::format_double(e.weights.tolerance) << " | " << (e.pair_id.empty() ? "-" : e.pair_id) << " | "
        << io::format_double(e.train_correlation) << " |\n";
  }
  return out.str();
}

namespace {

// Euclidean projection of p onto {w : lo <= w <= hi, sum w = 1}.
// w(lambda) = clamp(p - lambda, lo, hi) has a piecewise-linear, nonincreasing
// sum; find the breakpoint interval holding 1 and interpolate.
std::array<double, 3> project(const std::array<double, 3>& p, const std::array<double, 3>& lo,
                              const std::array<double, 3>& hi) {
  auto at = [&](double lambda) {
    std::array<double, 3> w{};
    for (int i = 0; i < 3; ++i) w[i] = std::clamp(p[i] - lambda, lo[i], hi[i]);
    return w;
  };
  auto total = [&](double lambda) {
    const auto w = at(lambda);
    return w[0] + w[1] + w[2];
  };
  std::vector<double> breaks;
  for (int i = 0; i < 3; ++i) {
    breaks.push_back(p[i] - hi[i]);
    breaks.push_back(p[i] - lo[i]);
  }
  std::sort(breaks.begin(), breaks.end());
  double lambda = breaks.front();
  for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
    const double f0 = total(breaks[k]);
    const double f1 = total(breaks[k + 1]);
    if (f0 >= 1.0 && f1 <= 1.0) {
      lambda = f0 == f1 ? breaks[k] : breaks[k] + (f0 - 1.0) / (f0 - f1) * (breaks[k + 1] - breaks[k]);
      break;
    }
  }
  auto w = at(lambda);
  // Push the rounding residue into a coordinate with room for it.
  const double residue = 1.0 - (w[0] + w[1] + w[2]);
  for (int i = 0; i < 3; ++i) {
    const double moved = std::clamp(w[i] + residue, lo[i], hi[i]);
    if (moved - w[i] == residue) {
      w[i] = moved;
      break;
    }
  }
  return w;
}

}  // namespace

ValidatedWeights validate_weights(const MetricWeights& proposed, const MetricWeights& previous,
                                  const ConstraintSet& c) {
  check_constraints(c);
  ValidatedWeights out;
  const auto prev = previous.simplex();
  auto raw = proposed.simplex();
  static const char* kNames[] = {"w_peak", "w_der", "w_amp"};
  std::array<double, 3> lo{}, hi{};
  for (int i = 0; i < 3; ++i) {
    if (!std::isfinite(prev[i])) throw Error(ErrorCode::kInvalidWeights, "previous weights are not finite");
    lo[i] = std::max(c.lower, prev[i] - c.delta);
    hi[i] = std::min(c.upper, prev[i] + c.delta);
    if (!std::isfinite(raw[i])) {
      raw[i] = prev[i];
      out.notes.push_back(std::string(kNames[i]) + " was not a finite number; kept the previous value");
    }
  }
  if (lo[0] > hi[0] || lo[1] > hi[1] || lo[2] > hi[2] || lo[0] + lo[1] + lo[2] > 1.0 + 1e-12 ||
      hi[0] + hi[1] + hi[2] < 1.0 - 1e-12) {
    throw Error(ErrorCode::kUnrepairable, "no weights satisfy bounds, step limit and normalization together");
  }

  bool feasible = out.notes.empty() && std::fabs(raw[0] + raw[1] + raw[2] - 1.0) <= 1e-9;
  for (int i = 0; i < 3; ++i) feasible = feasible && raw[i] >= lo[i] && raw[i] <= hi[i];
  std::array<double, 3> w = raw;
  if (!feasible) {
    w = project(raw, lo, hi);
    for (int i = 0; i < 3; ++i) {
      if (w[i] != raw[i]) {
        out.notes.push_back(std::string(kNames[i]) + " " + io::format_double(raw[i]) + " -> " +
                            io::format_double(w[i]));
      }
    }
  }
  out.weights = {w[0], w[1], w[2], proposed.tolerance};
  if (!std::isfinite(proposed.tolerance)) {
    out.weights.tolerance = previous.tolerance;
    out.notes.push_back("tolerance was not a finite number; kept the previous value");
  } else if (proposed.tolerance < c.tolerance_lower || proposed.tolerance > c.tolerance_upper) {
    out.weights.tolerance = std::clamp(proposed.tolerance, c.tolerance_lower, c.tolerance_upper);
    out.notes.push_back("tolerance " + io::format_double(proposed.tolerance) + " -> " +
                        io::format_double(out.weights.tolerance));
  }
  out.repaired = !out.notes.empty();
  return out;
}

double pairwise_agreement(const MetricWeights& weights, const std::vector<PairedSample>& pairs,
                          const MetricOptions& options) {
  if (pairs.empty()) return 0.0;
  std::size_t hits = 0;
  for (const PairedSample& p : pairs) {
    if (!p.preferred) throw Error(ErrorCode::kInvalidParams, "pair " + p.pair_id + " has no label");
    const double sa = score_bundle(p.a, p.obs, weights, options);
    const double sb = score_bundle(p.b, p.obs, weights, options);
    if ((*p.preferred == Preference::kA && sa > sb) || (*p.preferred == Preference::kB && sb > sa)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

std::vector<double> bundle_scores(const MetricWeights& weights, const Dataset& data,
                                  const std::vector<std::string>& ids, const std::vector<std::string>& variables,
                                  const MetricOptions& options) {
  const std::vector<TimeSeries> obs = data.observations_for(variables);
  std::vector<double> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) out.push_back(score_bundle(data.predictions_for(id, variables), obs, weights, options));
  return out;
}

double training_correlation(const MetricWeights& weights, const TargetRanking& ranking, const Dataset& data,
                            const std::vector<std::string>& variables, const MetricOptions& options) {
  return spearman(bundle_scores(weights, data, ranking.ids, variables, options), ranking.scores);
}

std::string weight_system_prompt() {
  return "You tune the weights of a time series similarity metric so that it ranks model predictions the way a "
         "domain expert does. Think about which component explains the expert's preference, then answer with one "
         "JSON object.";
}

namespace {

void describe_side(std::ostringstream& out, const char* label, const std::string& id, const std::vector<TimeSeries>& side,
                   const std::vector<TimeSeries>& obs, const MetricWeights& w, const MetricOptions& options) {
  for (std::size_t v = 0; v < side.size(); ++v) {
    const ScoreBreakdown b = base_metric(side[v], obs[v], w, options);
    out << "| " << label << " (" << id << ") | " << obs[v].variable << " | " << io::format_double(b.similarity) << " | "
        << io::format_double(b.s_peak) << " | " << io::format_double(b.s_deriv) << " | "
        << io::format_double(b.s_before) << " | " << io::format_double(b.s_in) << " | "
        << io::format_double(b.s_after) << " |\n";
  }
}

}  // namespace

std::string weight_user_prompt(const MetricWeights& current, const std::vector<HistoryEntry>& history,
                               const PairedSample& pair, const OptimizerContext& ctx) {
  const ConstraintSet& c = ctx.constraints;
  std::ostringstream out;
  out << "The similarity between a prediction P and the observation Y is S = 1 / (1 + s_total) with\n"
         "s_total = w_peak * D_in + (1 - w_peak) / 2 * (D_before + D_after), where the observation is split into "
         "the periods before, during and after its peak period and each period distance is\n"
         "D = (1 - s_peak) + w_der * (slope + curvature error).\n"
         "s_peak mixes peak timing (peaks within `tolerance` timesteps) and peak amplitude, the latter with weight "
         "w_amp.\n";
  if (pair.obs.size() == 2) {
    out << "With two variables the score is the mean of both similarities times 1 - |difference of their Spearman "
           "cross-correlations|.\n";
  }
  out << "\n## Current weights\n" << serialize_weights(current) << "\n\n";
  out << "## Constraints\n"
      << "- w_peak, w_der, w_amp each in [" << io::format_double(c.lower) << ", " << io::format_double(c.upper)
      << "] and summing to 1\n"
      << "- each of them changes by at most " << io::format_double(c.delta) << " from the current value\n"
      << "- tolerance in [" << io::format_double(c.tolerance_lower) << ", " << io::format_double(c.tolerance_upper)
      << "]\n\n";
  out << format_history(history, ctx.history_window) << "\n";
  out << "## Pair " << pair.pair_id << "\n";
  if (!pair.preferred) throw Error(ErrorCode::kInvalidParams, "pair " + pair.pair_id + " has no label");
  const bool a_wins = *pair.preferred == Preference::kA;
  out << "The expert prefers " << (a_wins ? "(a) " + pair.id_a : "(b) " + pair.id_b) << " over "
      << (a_wins ? "(b) " + pair.id_b : "(a) " + pair.id_a) << ".\n";
  out << "| side | variable | similarity | s_peak | s_deriv | D_before | D_in | D_after |\n"
         "|---|---|---|---|---|---|---|---|\n";
  describe_side(out, "a", pair.id_a, pair.a, pair.obs, current, ctx.options);
  describe_side(out, "b", pair.id_b, pair.b, pair.obs, current, ctx.options);
  const double sa = score_bundle(pair.a, pair.obs, current, ctx.options);
  const double sb = score_bundle(pair.b, pair.obs, current, ctx.options);
  const bool agrees = a_wins ? sa > sb : sb > sa;
  out << "Overall score (a) " << io::format_double(sa) << ", (b) " << io::format_double(sb) << ": the current weights "
      << (agrees ? "agree" : "disagree") << " with the expert.\n\n";
  out << "Propose new weights that make the metric agree with the expert while keeping the training correlation "
         "high. Give a short rationale, then exactly one JSON object:\n"
         "{\"w_peak\": <number>, \"w_der\": <number>, \"w_amp\": <number>, \"tolerance\": <number>}\n";
  return out.str();
}

StepResult llm_step(const MetricWeights& current, std::vector<HistoryEntry>& history, const PairedSample& pair,
                    const OptimizerContext& ctx, LlmAdapter& adapter) {
  if (!ctx.data) throw Error(ErrorCode::kInvalidParams, "optimizer context has no dataset");
  LlmRequest req;
  req.tag = RequestTag::kWeightUpdate;
  req.temperature = default_temperature(req.tag);
  req.system_text = weight_system_prompt();
  req.user_text = weight_user_prompt(current, history, pair, ctx);

  StepResult result;
  result.weights = current;
  std::string rationale;
  std::optional<MetricWeights> proposal;
  for (int attempt = 0; attempt < 2 && !proposal; ++attempt) {
    if (attempt == 1) {
      req.user_text += "\nYour previous reply had no usable JSON object. Reply with exactly one JSON object with "
                       "numeric keys w_peak, w_der, w_amp and tolerance.\n";
    }
    const LlmResponse resp = adapter.complete(req);
    rationale = resp.text;
    try {
      proposal = parse_weight_response(resp.text);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kParseFailure) throw;
    }
  }

  if (!proposal) {
    result.skipped = true;
    rationale = "skipped: no parsable weights after retry";
  } else {
    try {
      ValidatedWeights v = validate_weights(*proposal, current, ctx.constraints);
      result.weights = v.weights;
      if (v.repaired) {
        rationale += "\n[repaired:";
        for (const std::string& n : v.notes) rationale += " " + n + ";";
        rationale += "]";
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kUnrepairable) throw;
      result.skipped = true;
      rationale = "skipped: unrepairable proposal " + serialize_weights(*proposal);
    }
  }

  HistoryEntry entry;
  entry.iteration = history.empty() ? 1 : history.back().iteration + 1;
  entry.weights = result.weights;
  entry.pair_id = pair.pair_id;
  entry.train_correlation = training_correlation(result.weights, ctx.train_target, *ctx.data, ctx.variables, ctx.options);
  entry.rationale = std::move(rationale);
  history.push_back(entry);
  result.entry = std::move(entry);
  return result;
}

ObjectiveFn training_objective(const OptimizerContext& ctx) {
  if (!ctx.data) throw Error(ErrorCode::kInvalidParams, "optimizer context has no dataset");
  return [ctx](const MetricWeights& w) {
    const std::vector<double> s = bundle_scores(w, *ctx.data, ctx.train_target.ids, ctx.variables, ctx.options);
    Objective o;
    o.primary = spearman(s, ctx.train_target.scores);
    try {
      o.secondary = pearson(s, ctx.train_target.scores);
    } catch (const Error&) {
      o.secondary = 0.0;
    }
    return o;
  };
}

HillClimber::HillClimber(MetricWeights start, ObjectiveFn objective, ConstraintSet c)
    : weights_(start), objective_(std::move(objective)), c_(c) {
  check_constraints(c_);
  value_ = objective_(weights_);
}

bool HillClimber::step() {
  static const char* kNames[] = {"w_peak", "w_der", "w_amp"};
  constexpr double kStep = 0.05;
  constexpr double kEps = 1e-12;
  auto in_bounds = [&](double v) { return v >= c_.lower - kEps && v <= c_.upper + kEps; };
  std::vector<std::pair<MetricWeights, std::string>> moves;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      auto w = weights_.simplex();
      w[i] += kStep;
      w[j] -= kStep;
      if (!in_bounds(w[i]) || !in_bounds(w[j])) continue;
      moves.push_back({{w[0], w[1], w[2], weights_.tolerance},
                       std::string("+") + kNames[i] + " -" + kNames[j]});
    }
  }
  for (double d : {1.0, -1.0}) {
    const double t = weights_.tolerance + d;
    if (t < c_.tolerance_lower || t > c_.tolerance_upper) continue;
    MetricWeights w = weights_;
    w.tolerance = t;
    moves.push_back({w, d > 0 ? "+tolerance" : "-tolerance"});
  }
  for (const auto& [w, name] : moves) {
    const Objective v = objective_(w);
    if (v > value_) {
      weights_ = w;
      value_ = v;
      last_move_ = name;
      return true;
    }
  }
  last_move_.clear();
  return false;
}

OptimizeResult deterministic_optimize(const MetricWeights& initial, const ObjectiveFn& objective,
                                      const ConstraintSet& c, int budget) {
  if (budget < 1) throw Error(ErrorCode::kInvalidParams, "budget must be at least 1");
  HillClimber climber(initial, objective, c);
  OptimizeResult r;
  for (int k = 1; k <= budget; ++k) {
    if (!climber.step()) break;
    HistoryEntry e;
    e.iteration = static_cast<int>(r.history.size()) + 1;
    e.weights = climber.weights();
    e.train_correlation = climber.objective().primary;
    e.rationale = climber.last_move();
    r.history.push_back(std::move(e));
  }
  r.weights = climber.weights();
  r.objective = climber.objective();
  return r;
}

OptimizeResult deterministic_optimize(const MetricWeights& initial, const OptimizerContext& ctx, int budget) {
  return deterministic_optimize(initial, training_objective(ctx), ctx.constraints, budget);
}

}  // namespace apef
