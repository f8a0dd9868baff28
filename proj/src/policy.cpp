#include "apef/policy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>

#include "apef/error.hpp"
#include "apef/io.hpp"
#include "apef/stats.hpp"

namespace apef {

using nlohmann::json;

std::vector<std::string> Policy::metric_names() const {
  std::vector<std::string> out;
  for (const auto& m : metrics) out.push_back(m.name);
  return out;
}

namespace {

[[noreturn]] void schema(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::kSchemaViolation, field + ": " + what);
}

const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) schema(where.empty() ? key : where + "." + key, "missing");
  return j.at(key);
}

std::string tie_breaker_metric(const std::string& t) { return !t.empty() && t[0] == '-' ? t.substr(1) : t; }

}  // namespace

Policy parse_policy(const json& j) {
  if (!j.is_object()) schema("policy", "must be a JSON object");
  Policy p;
  const json& version = require(j, "version", "");
  if (!version.is_number_integer() || version.get<long long>() < 1) schema("version", "must be a positive integer");
  p.version = version.get<int>();

  static const std::regex kIdent("[A-Za-z_][A-Za-z0-9_]*");
  static const std::set<std::string> kReserved = [] {
    std::set<std::string> r{"pred", "obs", "pred2", "obs2"};
    for (const auto& f : formula_functions()) r.insert(f);
    return r;
  }();

  const json& metrics = require(j, "metrics", "");
  if (!metrics.is_array() || metrics.empty()) schema("metrics", "must be a non-empty array");
  std::set<std::string> names;
  for (std::size_t k = 0; k < metrics.size(); ++k) {
    const std::string where = "metrics[" + std::to_string(k) + "]";
    const json& m = metrics[k];
    const json& name = require(m, "name", where);
    if (!name.is_string()) schema(where + ".name", "must be a string");
    const std::string n = name.get<std::string>();
    if (!std::regex_match(n, kIdent)) schema(where + ".name", "'" + n + "' is not an identifier");
    if (kReserved.count(n)) schema(where + ".name", "'" + n + "' is a reserved word");
    if (!names.insert(n).second) schema(where + ".name", "duplicate metric '" + n + "'");
    std::string description;
    if (m.contains("description")) {
      if (!m.at("description").is_string()) schema(where + ".description", "must be a string");
      description = m.at("description").get<std::string>();
    }
    p.metrics.push_back({n, description});
  }

  const json& formulas = require(j, "formulas", "");
  if (!formulas.is_object()) schema("formulas", "must be an object");
  for (const auto& [name, expr] : formulas.items()) {
    if (!names.count(name)) schema("formulas." + name, "not a declared metric");
    if (!expr.is_string()) schema("formulas." + name, "must be a formula string");
    try {
      p.formulas.emplace(name, Formula::parse(expr.get<std::string>()));
    } catch (const Error& e) {
      throw Error(e.code(), "formulas." + name + ": " + e.what());
    }
  }
  for (const auto& n : names) {
    if (!p.formulas.count(n)) schema("formulas", "metric '" + n + "' has no formula");
  }

  const json& scoring = require(j, "scoring", "");
  if (!scoring.is_object()) schema("scoring", "must be an object");
  long long total = 0;
  for (const auto& [name, pts] : scoring.items()) {
    if (!names.count(name)) schema("scoring." + name, "not a declared metric");
    if (!pts.is_number_integer() || pts.get<long long>() < 1) schema("scoring." + name, "points must be a positive integer");
    total += pts.get<long long>();
    p.scoring.emplace(name, pts.get<int>());
  }
  for (const auto& n : names) {
    if (!p.scoring.count(n)) schema("scoring", "metric '" + n + "' has no points");
  }
  if (total != kPolicyPoints) {
    throw Error(ErrorCode::kPointSumError,
                "scoring: points sum to " + std::to_string(total) + ", expected " + std::to_string(kPolicyPoints));
  }

  if (j.contains("decision")) {
    const json& d = j.at("decision");
    if (!d.is_object()) schema("decision", "must be an object");
    if (d.contains("aggregation") && !d.at("aggregation").is_null()) {
      if (!d.at("aggregation").is_string()) schema("decision.aggregation", "must be a formula string");
      try {
        p.aggregation = Formula::parse(d.at("aggregation").get<std::string>(), FormulaScope::aggregation(names));
      } catch (const Error& e) {
        throw Error(e.code(), std::string("decision.aggregation: ") + e.what());
      }
    }
    if (d.contains("tie_breakers")) {
      const json& t = d.at("tie_breakers");
      if (!t.is_array()) schema("decision.tie_breakers", "must be an array");
      for (const json& name : t) {
        if (!name.is_string() || !names.count(tie_breaker_metric(name.get<std::string>()))) {
          schema("decision.tie_breakers", "'" + name.dump() + "' is not a declared metric");
        }
        p.tie_breakers.push_back(name.get<std::string>());
      }
    }
  }
  if (j.contains("provenance")) {
    const json& pv = j.at("provenance");
    if (!pv.is_object()) schema("provenance", "must be an object");
    if (pv.contains("iteration")) {
      if (!pv.at("iteration").is_number_integer()) schema("provenance.iteration", "must be an integer");
      p.provenance.iteration = pv.at("iteration").get<int>();
    }
    if (pv.contains("adapter_id")) {
      if (!pv.at("adapter_id").is_string()) schema("provenance.adapter_id", "must be a string");
      p.provenance.adapter_id = pv.at("adapter_id").get<std::string>();
    }
  }
  return p;
}

Policy parse_policy(const std::string& json_text) {
  const json j = json::parse(json_text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kParseFailure, "policy is not valid JSON");
  return parse_policy(j);
}

json policy_to_json(const Policy& p) {
  json metrics = json::array();
  for (const auto& m : p.metrics) metrics.push_back({{"name", m.name}, {"description", m.description}});
  json formulas = json::object();
  for (const auto& [name, f] : p.formulas) formulas[name] = f.source();
  json scoring = json::object();
  for (const auto& [name, pts] : p.scoring) scoring[name] = pts;
  json decision = {{"tie_breakers", p.tie_breakers}};
  decision["aggregation"] = p.aggregation ? json(p.aggregation->source()) : json(nullptr);
  return {
      {"version", p.version},
      {"metrics", metrics},
      {"formulas", formulas},
      {"scoring", scoring},
      {"decision", decision},
      {"provenance", {{"iteration", p.provenance.iteration}, {"adapter_id", p.provenance.adapter_id}}},
  };
}

std::string serialize_policy(const Policy& p) { return policy_to_json(p).dump(2); }

Policy parse_policy_response(const std::string& text) {
  for (const json& j : json_objects_in(text)) {
    if (j.contains("metrics") && j.contains("scoring")) return parse_policy(j);
  }
  throw Error(ErrorCode::kParseFailure, "no policy JSON object in response");
}

FormulaInputs formula_inputs(const std::vector<TimeSeries>& pred, const std::vector<TimeSeries>& obs) {
  if (pred.empty() || pred.size() != obs.size() || pred.size() > 2) {
    throw Error(ErrorCode::kInvalidParams, "policies take one or two variables with a prediction for each");
  }
  FormulaInputs in;
  in.pred = pred[0].values;
  in.obs = obs[0].values;
  if (pred.size() == 2) {
    in.pred2 = pred[1].values;
    in.obs2 = obs[1].values;
  }
  return in;
}

const CandidateVerdict& PolicyVerdict::of(const std::string& id) const {
  for (const auto& c : candidates) {
    if (c.id == id) return c;
  }
  throw Error(ErrorCode::kInvalidParams, "no verdict for '" + id + "'");
}

PolicyVerdict apply_policy(const Policy& policy, const std::vector<Candidate>& candidates,
                           const std::vector<TimeSeries>& obs) {
  PolicyVerdict v;
  for (const Candidate& c : candidates) {
    CandidateVerdict cv;
    cv.id = c.id;
    for (std::size_t k = 0; k < c.series.size(); ++k) {
      if (k >= obs.size() || c.series[k].size() != obs[k].size()) {
        throw Error(ErrorCode::kInvalidParams, "candidate " + c.id + " does not match the observation lengths");
      }
    }
    try {
      const FormulaInputs in = formula_inputs(c.series, obs);
      FormulaInputs scaled;
      for (const auto& m : policy.metrics) {
        const double raw = eval_formula(policy.formulas.at(m.name), in);
        cv.raw[m.name] = raw;
        scaled.scalars[m.name] = raw * policy.scoring.at(m.name);
      }
      double score = 0.0;
      if (policy.aggregation) {
        score = eval_formula(*policy.aggregation, scaled);
      } else {
        for (const auto& m : policy.metrics) score += scaled.scalars[m.name];
      }
      cv.score = score;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEvaluationError) throw;
      cv.error = e.what();
    }
    v.candidates.push_back(std::move(cv));
  }

  std::vector<const CandidateVerdict*> order;
  for (const auto& c : v.candidates) order.push_back(&c);
  std::sort(order.begin(), order.end(), [&](const CandidateVerdict* a, const CandidateVerdict* b) {
    if (a->score.has_value() != b->score.has_value()) return a->score.has_value();
    if (a->score && *a->score != *b->score) return *a->score > *b->score;
    if (a->score) {
      for (const std::string& t : policy.tie_breakers) {
        const std::string m = tie_breaker_metric(t);
        const double x = a->raw.at(m), y = b->raw.at(m);
        if (x != y) return t[0] == '-' ? x < y : x > y;
      }
    }
    return a->id < b->id;
  });
  for (const auto* c : order) v.ranking.push_back(c->id);
  return v;
}

std::vector<std::string> InterpreterEvaluator::rank(const Policy& policy, const std::vector<Candidate>& candidates,
                                                    const std::vector<TimeSeries>& obs) {
  return apply_policy(policy, candidates, obs).ranking;
}

std::string series_as_text(const std::vector<double>& v) {
  std::string out;
  for (std::size_t t = 0; t < v.size(); ++t) {
    if (t) out += ", ";
    out += io::format_double(std::round(v[t] * 1e4) / 1e4);
  }
  return out;
}

std::vector<std::string> AdapterEvaluator::rank(const Policy& policy, const std::vector<Candidate>& candidates,
                                                const std::vector<TimeSeries>& obs) {
  std::ostringstream user;
  user << "Apply this evaluation policy to the candidate predictions and score each one.\n\n## Policy\n"
       << serialize_policy(policy) << "\n\n## Observation\n";
  for (const auto& o : obs) user << o.variable << ": " << series_as_text(o.values) << "\n";
  for (const auto& c : candidates) {
    user << "\n## Candidate " << c.id << "\n";
    for (const auto& s : c.series) user << s.variable << ": " << series_as_text(s.values) << "\n";
  }
  user << "\nReply with one JSON object {\"scores\": {\"<candidate id>\": <number>, ...}}, higher is better.\n";
  LlmRequest req;
  req.tag = RequestTag::kPolicyEvaluation;
  req.temperature = default_temperature(req.tag);
  req.system_text = "You are a careful evaluator of environmental model predictions.";
  req.user_text = user.str();
  const LlmResponse resp = adapter_.complete(req);

  std::map<std::string, double> scores;
  for (const json& j : json_objects_in(resp.text)) {
    if (j.contains("scores") && j.at("scores").is_object()) {
      for (const auto& [id, value] : j.at("scores").items()) {
        if (value.is_number()) scores[id] = value.get<double>();
      }
      break;
    }
  }
  std::vector<std::string> ids;
  for (const auto& c : candidates) ids.push_back(c.id);
  std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
    const auto ia = scores.find(a), ib = scores.find(b);
    const bool ha = ia != scores.end(), hb = ib != scores.end();
    if (ha != hb) return ha;
    if (ha && ia->second != ib->second) return ia->second > ib->second;
    return a < b;
  });
  return ids;
}

double ranking_correlation(const std::vector<std::string>& ranking, const TargetRanking& target) {
  std::vector<double> mine, theirs;
  for (std::size_t k = 0; k < ranking.size(); ++k) {
    const auto s = target.score_of(ranking[k]);
    if (!s) throw Error(ErrorCode::kInvalidParams, "'" + ranking[k] + "' has no target score");
    mine.push_back(static_cast<double>(ranking.size() - k));
    theirs.push_back(*s);
  }
  return spearman(mine, theirs);
}

ValidationDecision validate_policy(const Policy& candidate, const Policy* incumbent,
                                   const std::vector<Candidate>& validation, const std::vector<TimeSeries>& obs,
                                   const TargetRanking& target, int runs, PolicyEvaluator& evaluator) {
  if (runs < 1) throw Error(ErrorCode::kInvalidParams, "validation needs at least one run");
  ValidationDecision d;
  d.runs = runs;
  const int distinct = evaluator.deterministic() ? 1 : runs;
  for (int r = 0; r < runs; ++r) {
    if (r < distinct) {
      d.candidate_rho.push_back(ranking_correlation(evaluator.rank(candidate, validation, obs), target));
      if (incumbent) d.incumbent_rho.push_back(ranking_correlation(evaluator.rank(*incumbent, validation, obs), target));
    } else {
      d.candidate_rho.push_back(d.candidate_rho.back());
      if (incumbent) d.incumbent_rho.push_back(d.incumbent_rho.back());
    }
    const bool win = incumbent ? d.candidate_rho.back() > d.incumbent_rho.back() : d.candidate_rho.back() > 0.0;
    d.wins += win ? 1 : 0;
  }
  // wins / runs >= 0.7, in integers to avoid rounding at the boundary
  d.accepted = d.wins * 10 >= runs * 7;
  std::ostringstream why;
  why << (incumbent ? "beat the incumbent in " : "positive validation correlation in ") << d.wins << "/" << runs
      << " runs";
  d.reason = why.str();
  return d;
}

ScreeningResult screen_new_metric(const std::string& metric_name, const Policy& policy,
                                  const std::vector<PairedSample>& labeled_pairs, ComponentStats* stats) {
  const auto f = policy.formulas.find(metric_name);
  if (f == policy.formulas.end()) throw Error(ErrorCode::kInvalidParams, "policy has no metric '" + metric_name + "'");
  if (static_cast<int>(labeled_pairs.size()) < kScreeningMinPairs) {
    throw Error(ErrorCode::kInsufficientPairs, "screening needs at least " + std::to_string(kScreeningMinPairs) +
                                                   " labeled pairs, got " + std::to_string(labeled_pairs.size()));
  }
  ScreeningResult r;
  for (const PairedSample& p : labeled_pairs) {
    if (!p.preferred) throw Error(ErrorCode::kInvalidParams, "pair " + p.pair_id + " has no label");
    ++r.stats.applications;
    try {
      const double a = eval_formula(f->second, formula_inputs(p.a, p.obs));
      const double b = eval_formula(f->second, formula_inputs(p.b, p.obs));
      if ((*p.preferred == Preference::kA && a > b) || (*p.preferred == Preference::kB && b > a)) ++r.stats.successes;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEvaluationError) throw;
    }
  }
  r.accepted = r.stats.applications >= kScreeningMinPairs && r.stats.successes * 10 >= r.stats.applications * 7;
  if (stats) {
    MetricStats& s = (*stats)[metric_name];
    s.applications += r.stats.applications;
    s.successes += r.stats.successes;
  }
  return r;
}

std::string policy_system_prompt() {
  return "You write evaluation policies that explain why experts prefer one model prediction over another. A policy "
         "is machine-executed, so follow the JSON schema and formula grammar exactly.";
}

std::string policy_user_prompt(const std::vector<HistoryEntry>& history, const PairedSample& pair,
                               const Policy* prior, std::size_t window) {
  std::ostringstream out;
  out << format_history(history, window) << "\n";
  out << "## Latest pair " << pair.pair_id << "\n";
  if (pair.preferred) {
    out << "The expert prefers " << (*pair.preferred == Preference::kA ? "(a) " + pair.id_a : "(b) " + pair.id_b)
        << ".\n";
  }
  for (std::size_t v = 0; v < pair.obs.size(); ++v) {
    out << "obs " << pair.obs[v].variable << ": " << series_as_text(pair.obs[v].values) << "\n";
    out << "(a) " << pair.obs[v].variable << ": " << series_as_text(pair.a[v].values) << "\n";
    out << "(b) " << pair.obs[v].variable << ": " << series_as_text(pair.b[v].values) << "\n";
  }
  out << "\n## Current policy\n" << (prior ? serialize_policy(*prior) : std::string("none yet")) << "\n\n";
  out << "## Format\n"
         "Reply with one JSON object:\n"
         "{\"version\": <int>, \"metrics\": [{\"name\": <identifier>, \"description\": <text>}], "
         "\"formulas\": {<name>: <formula>}, \"scoring\": {<name>: <positive int>}, "
         "\"decision\": {\"aggregation\": <formula over metric names or null for the sum>, "
         "\"tie_breakers\": [<name>, ...]}}\n"
         "Points must sum to exactly " << kPolicyPoints << ". Larger metric values must mean a better prediction.\n"
         "Formulas use + - * /, parentheses, numbers, the series pred and obs"
      << (pair.obs.size() == 2 ? " (pred2 and obs2 for " + pair.obs[1].variable + ")" : std::string()) << ", and:\n";
  for (const auto& f : formula_functions()) out << f << " ";
  out << "\nComparisons (< <= > >= == !=) may appear only inside count_where, e.g. count_where(abs(pred - obs) > 1) "
         "/ len(obs).\n";
  if (prior) out << "Add or remove at most one metric relative to the current policy.\n";
  return out.str();
}

ExtractionResult extract_policy(const std::vector<HistoryEntry>& history, const PairedSample& pair,
                                const Policy* prior, LlmAdapter& adapter, int iteration) {
  if (history.empty()) throw Error(ErrorCode::kInvalidParams, "policy extraction needs optimization history");
  LlmRequest req;
  req.tag = RequestTag::kPolicyExtraction;
  req.temperature = default_temperature(req.tag);
  req.system_text = policy_system_prompt();
  req.user_text = policy_user_prompt(history, pair, prior);

  ExtractionResult r;
  for (int attempt = 0; attempt < 2; ++attempt) {
    ++r.attempts;
    const LlmResponse resp = adapter.complete(req);
    Policy p;
    try {
      p = parse_policy_response(resp.text);
    } catch (const Error& e) {
      const ErrorCode c = e.code();
      if (c != ErrorCode::kParseFailure && c != ErrorCode::kSchemaViolation && c != ErrorCode::kFormulaSyntaxError &&
          c != ErrorCode::kPointSumError) {
        throw;
      }
      r.reason = e.what();
      req.user_text += "\nYour previous reply was rejected (" + r.reason + "). Reply again with one valid policy.\n";
      continue;
    }
    std::vector<std::string> added, removed;
    if (prior) {
      const auto before = prior->metric_names();
      const auto after = p.metric_names();
      const std::set<std::string> b(before.begin(), before.end()), a(after.begin(), after.end());
      std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(added));
      std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(removed));
      if (added.size() + removed.size() > 1) {
        r.reason = "changed " + std::to_string(added.size() + removed.size()) + " metrics, at most one allowed";
        req.user_text += "\nYour previous reply was rejected (" + r.reason + "). Reply again.\n";
        continue;
      }
    }
    p.version = prior ? prior->version + 1 : 1;
    p.provenance = {iteration, adapter.id()};
    r.policy = std::move(p);
    r.added = std::move(added);
    r.removed = std::move(removed);
    r.reason.clear();
    return r;
  }
  r.reason = "skipped: " + r.reason;
  return r;
}

Policy template_policy(const MetricWeights& w, std::size_t variables, int version) {
  if (variables < 1 || variables > 2) throw Error(ErrorCode::kInvalidParams, "template policy needs 1 or 2 variables");
  const bool two = variables == 2;
  auto both = [&](const std::string& expr_1, const std::string& expr_2) {
    return two ? "(" + expr_1 + " + " + expr_2 + ") / 2" : expr_1;
  };
  const std::string peak =
      both("1 - abs(peak_count(pred) - peak_count(obs)) / max(peak_count(obs), 1)",
           "1 - abs(peak_count(pred2) - peak_count(obs2)) / max(peak_count(obs2), 1)");
  const std::string deriv = both("-(derivative_mse(pred, obs) + second_derivative_mse(pred, obs))",
                                 "-(derivative_mse(pred2, obs2) + second_derivative_mse(pred2, obs2))");
  const std::string amp = both("-abs(max(pred) - max(obs)) / max(abs(obs))",
                               "-abs(max(pred2) - max(obs2)) / max(abs(obs2))");

  // largest remainder over 10 points, at least one each
  const std::array<double, 3> share{w.w_peak, w.w_der, w.w_amp};
  const double total = share[0] + share[1] + share[2];
  std::array<int, 3> pts{};
  std::array<double, 3> rem{};
  int used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = kPolicyPoints * share[i] / total;
    pts[i] = std::max(1, static_cast<int>(std::floor(exact)));
    rem[i] = exact - std::floor(exact);
    used += pts[i];
  }
  while (used < kPolicyPoints) {
    const int i = static_cast<int>(std::max_element(rem.begin(), rem.end()) - rem.begin());
    ++pts[i];
    rem[i] = -1.0;
    ++used;
  }
  while (used > kPolicyPoints) {
    const int i = static_cast<int>(std::max_element(pts.begin(), pts.end()) - pts.begin());
    --pts[i];
    --used;
  }

  json j = {
      {"version", version},
      {"metrics",
       {{{"name", "peak_alignment"}, {"description", "agreement in the number of peaks"}},
        {{"name", "shape_error"}, {"description", "negated slope and curvature mismatch"}},
        {{"name", "amplitude_error"}, {"description", "negated relative error of the maximum"}}}},
      {"formulas", {{"peak_alignment", peak}, {"shape_error", deriv}, {"amplitude_error", amp}}},
      {"scoring", {{"peak_alignment", pts[0]}, {"shape_error", pts[1]}, {"amplitude_error", pts[2]}}},
      {"decision", {{"aggregation", nullptr}, {"tie_breakers", {"shape_error"}}}},
  };
  return parse_policy(j);
}

}  // namespace apef
