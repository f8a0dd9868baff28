#include "apef/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <regex>
#include <set>
#include <sstream>

#include "apef/error.hpp"
#include "apef/metrics.hpp"
#include "apef/stats.hpp"

namespace apef {

using nlohmann::json;

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::kPresetPeak: return "preset_peak";
    case Scenario::kPresetDeriv: return "preset_deriv";
    case Scenario::kPresetAmp: return "preset_amp";
    case Scenario::kExpert: return "expert";
    case Scenario::kIlamb: return "ilamb";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& text) {
  if (text == "preset_peak" || text == "peak") return Scenario::kPresetPeak;
  if (text == "preset_deriv" || text == "deriv") return Scenario::kPresetDeriv;
  if (text == "preset_amp" || text == "amp") return Scenario::kPresetAmp;
  if (text == "expert") return Scenario::kExpert;
  if (text == "ilamb") return Scenario::kIlamb;
  throw Error(ErrorCode::kInvalidParams, "unknown scenario '" + text + "'");
}

std::string to_string(AdapterMode m) {
  switch (m) {
    case AdapterMode::kLlm: return "llm";
    case AdapterMode::kScripted: return "scripted";
    case AdapterMode::kDeterministic: return "deterministic";
  }
  return "?";
}

AdapterMode adapter_mode_from_string(const std::string& text) {
  if (text == "llm") return AdapterMode::kLlm;
  if (text == "scripted") return AdapterMode::kScripted;
  if (text == "deterministic") return AdapterMode::kDeterministic;
  throw Error(ErrorCode::kInvalidParams, "unknown adapter mode '" + text + "'");
}

void check_config(const RunConfig& c) {
  if (c.warmup_iterations < 0 || c.main_iterations < 0 || c.warmup_iterations + c.main_iterations < 1) {
    throw Error(ErrorCode::kInvalidParams, "need at least one iteration");
  }
  if (c.validation_runs < 1) throw Error(ErrorCode::kInvalidParams, "validation_runs must be >= 1");
  if (c.variables.empty() || c.variables.size() > 2) throw Error(ErrorCode::kInvalidParams, "one or two variables");
  if (c.variables.size() == 2 && c.variables[0] == c.variables[1]) {
    throw Error(ErrorCode::kInvalidParams, "variables must differ");
  }
  if (c.scenario == Scenario::kIlamb && c.variables.size() != 1) {
    throw Error(ErrorCode::kInvalidParams, "the ilamb scenario takes a single variable");
  }
  if (c.policy_evaluator != "interpreter" && c.policy_evaluator != "adapter") {
    throw Error(ErrorCode::kInvalidParams, "policy_evaluator must be interpreter or adapter");
  }
  if (c.mode == AdapterMode::kDeterministic && c.policy_evaluator == "adapter") {
    throw Error(ErrorCode::kInvalidParams, "deterministic mode has no adapter to evaluate policies");
  }
  check_constraints(c.constraints);
  if (!weights_valid(c.initial_weights)) throw Error(ErrorCode::kInvalidWeights, "initial weights violate constraints");
}

namespace {

json weights_json(const MetricWeights& w) {
  return {{"w_peak", w.w_peak}, {"w_der", w.w_der}, {"w_amp", w.w_amp}, {"tolerance", w.tolerance}};
}

MetricWeights weights_from(const json& j) {
  MetricWeights w;
  w.w_peak = j.at("w_peak").get<double>();
  w.w_der = j.at("w_der").get<double>();
  w.w_amp = j.at("w_amp").get<double>();
  w.tolerance = j.at("tolerance").get<double>();
  return w;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json config_to_json(const RunConfig& c) {
  return {{"scenario", to_string(c.scenario)},
          {"variables", c.variables},
          {"warmup_iterations", c.warmup_iterations},
          {"main_iterations", c.main_iterations},
          {"validation_runs", c.validation_runs},
          {"seed", c.seed},
          {"mode", to_string(c.mode)},
          {"policy_evaluator", c.policy_evaluator},
          {"initial_weights", weights_json(c.initial_weights)},
          {"constraints",
           {{"lower", c.constraints.lower},
            {"upper", c.constraints.upper},
            {"delta", c.constraints.delta},
            {"tolerance_lower", c.constraints.tolerance_lower},
            {"tolerance_upper", c.constraints.tolerance_upper}}},
          {"history_window", c.history_window},
          {"transcript_path", c.transcript_path},
          {"log_path", c.log_path},
          {"script_path", c.script_path}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("scenario")) c.scenario = scenario_from_string(j.at("scenario").get<std::string>());
    if (j.contains("variables")) c.variables = j.at("variables").get<std::vector<std::string>>();
    c.warmup_iterations = j.value("warmup_iterations", c.warmup_iterations);
    c.main_iterations = j.value("main_iterations", c.main_iterations);
    c.validation_runs = j.value("validation_runs", c.validation_runs);
    c.seed = j.value("seed", c.seed);
    if (j.contains("mode")) c.mode = adapter_mode_from_string(j.at("mode").get<std::string>());
    c.policy_evaluator = j.value("policy_evaluator", c.policy_evaluator);
    if (j.contains("initial_weights")) c.initial_weights = weights_from(j.at("initial_weights"));
    if (j.contains("constraints")) {
      const json& k = j.at("constraints");
      c.constraints.lower = k.value("lower", c.constraints.lower);
      c.constraints.upper = k.value("upper", c.constraints.upper);
      c.constraints.delta = k.value("delta", c.constraints.delta);
      c.constraints.tolerance_lower = k.value("tolerance_lower", c.constraints.tolerance_lower);
      c.constraints.tolerance_upper = k.value("tolerance_upper", c.constraints.tolerance_upper);
    }
    c.history_window = j.value("history_window", c.history_window);
    c.transcript_path = j.value("transcript_path", c.transcript_path);
    c.log_path = j.value("log_path", c.log_path);
    c.script_path = j.value("script_path", c.script_path);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidParams, std::string("bad run config: ") + e.what());
  }
  check_config(c);
  return c;
}

bool AccessLog::touched_before(const std::string& id, const std::string& phase) const {
  for (const auto& [p, i] : events) {
    if (p == phase) return false;
    if (i == id) return true;
  }
  return false;
}

json iteration_to_json(const IterationRecord& r) {
  json j = {{"iteration", r.iteration},
            {"phase", r.phase},
            {"pair", r.pair_id},
            {"preferred", r.preferred},
            {"weights", weights_json(r.weights)},
            {"train_correlation", r.train_correlation},
            {"validation_correlation", r.validation_correlation},
            {"policy_validation_correlation", optional_json(r.policy_validation_correlation)},
            {"skipped", r.skipped},
            {"rationale", r.rationale}};
  if (r.policy.attempted) {
    j["policy"] = {{"outcome", r.policy.outcome}, {"version", r.policy.version}, {"wins", r.policy.wins},
                   {"runs", r.policy.runs},       {"added", r.policy.added},     {"removed", r.policy.removed},
                   {"reason", r.policy.reason}};
  }
  return j;
}

json report_to_json(const RunReport& r) {
  json iters = json::array();
  json train = json::array();
  for (const auto& it : r.iterations) {
    iters.push_back(iteration_to_json(it));
    train.push_back(it.train_correlation);
  }
  json stats = json::object();
  for (const auto& [name, s] : r.component_stats) {
    stats[name] = {{"applications", s.applications}, {"successes", s.successes}, {"success_rate", s.success_rate()}};
  }
  json baselines = json::object();
  for (const auto& [k, v] : r.test.baselines) baselines[k] = v;
  // File locations are not part of the experiment; leaving them out keeps
  // reports comparable across machines.
  json config = config_to_json(r.config);
  for (const char* k : {"transcript_path", "log_path", "script_path"}) config.erase(k);
  return {{"config", config},
          {"adapter_id", r.adapter_id},
          {"final_weights", weights_json(r.final_weights)},
          {"final_policy", r.final_policy ? policy_to_json(*r.final_policy) : json(nullptr)},
          {"iterations", iters},
          {"train_correlations", train},
          {"validation", {{"weights", r.validation_weights}, {"policy", optional_json(r.validation_policy)}}},
          {"test",
           {{"weights", r.test.weights}, {"policy", optional_json(r.test.policy)}, {"baselines", baselines}}},
          {"test_evaluations", r.test_evaluations},
          {"component_stats", stats}};
}

std::string serialize_report(const RunReport& r) { return report_to_json(r).dump(2) + "\n"; }

TargetRanking scenario_target(const DatasetBundle& bundle, Scenario scenario, const std::vector<std::string>& variables) {
  const std::string key = to_string(scenario) + "/" + task_name(variables);
  if (const auto it = bundle.targets.find(key); it != bundle.targets.end()) return it->second;
  std::vector<std::string> ids;
  for (const auto& c : bundle.data.candidates) ids.push_back(c.id);
  switch (scenario) {
    case Scenario::kPresetPeak: return build_target_ranking(bundle.data, ids, variables, preset_peak());
    case Scenario::kPresetDeriv: return build_target_ranking(bundle.data, ids, variables, preset_deriv());
    case Scenario::kPresetAmp: return build_target_ranking(bundle.data, ids, variables, preset_amp());
    case Scenario::kIlamb:
      if (variables.size() != 1) throw Error(ErrorCode::kInvalidParams, "the ilamb scenario takes a single variable");
      return build_ilamb_ranking(bundle.data, ids, variables[0], {},
                                 bundle.data.observations_for(variables).front().size());
    case Scenario::kExpert: break;
  }
  throw Error(ErrorCode::kUnknownDataset, "dataset has no target '" + key + "'; import expert annotations first");
}

std::map<std::string, double> baseline_scores(const std::vector<TimeSeries>& pred, const std::vector<TimeSeries>& obs) {
  if (pred.size() != obs.size() || obs.empty()) throw Error(ErrorCode::kInvalidParams, "baseline needs aligned series");
  std::map<std::string, double> out{{"r2", 0.0}, {"rmse", 0.0}, {"mae", 0.0}, {"nse", 0.0}};
  for (std::size_t k = 0; k < obs.size(); ++k) {
    out["r2"] += r2(pred[k].view(), obs[k].view());
    out["rmse"] += rmse(pred[k].view(), obs[k].view());
    out["mae"] += mae(pred[k].view(), obs[k].view());
    out["nse"] += nse(pred[k].view(), obs[k].view());
  }
  for (auto& [k, v] : out) v /= static_cast<double>(obs.size());
  return out;
}

bool baseline_ascending(const std::string& name) { return name == "rmse" || name == "mae"; }

TestEvaluation evaluate_on_test(const MetricWeights& weights, const Policy* policy, const Dataset& data,
                                const std::vector<std::string>& variables, const TargetRanking& test_target) {
  TestEvaluation t;
  const std::vector<TimeSeries> obs = data.observations_for(variables);
  t.weights = spearman(bundle_scores(weights, data, test_target.ids, variables), test_target.scores);
  if (policy) {
    std::vector<Candidate> cands;
    for (const auto& id : test_target.ids) cands.push_back({id, data.predictions_for(id, variables), {}});
    t.policy = ranking_correlation(apply_policy(*policy, cands, obs).ranking, test_target);
  }
  std::map<std::string, std::vector<double>> per_metric;
  for (const auto& id : test_target.ids) {
    for (const auto& [k, v] : baseline_scores(data.predictions_for(id, variables), obs)) {
      per_metric[k].push_back(baseline_ascending(k) ? -v : v);
    }
  }
  for (const auto& [k, v] : per_metric) t.baselines[k] = spearman(v, test_target.scores);
  return t;
}

namespace {

// Only training and validation candidates; the test split stays out of reach.
Dataset training_view(const Dataset& data) {
  Dataset view;
  view.observations = data.observations;
  view.split = data.split;
  view.split.test.clear();
  std::set<std::string> keep(data.split.train.begin(), data.split.train.end());
  keep.insert(data.split.validation.begin(), data.split.validation.end());
  for (const auto& c : data.candidates) {
    if (keep.count(c.id)) view.candidates.push_back(c);
  }
  return view;
}

[[noreturn]] void adapter_failure(int iteration, const Error& e) {
  throw Error(ErrorCode::kAdapterFailure, "iteration " + std::to_string(iteration) + ": " + e.what());
}

bool adapter_error(ErrorCode c) {
  return c == ErrorCode::kTransportError || c == ErrorCode::kScriptExhausted || c == ErrorCode::kTagMismatch;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

RunReport run_training(const RunConfig& config, const Dataset& data, const TargetRanking& target, LlmAdapter* adapter,
                       AccessLog* access) {
  check_config(config);
  if (config.mode != AdapterMode::kDeterministic && !adapter) {
    throw Error(ErrorCode::kInvalidParams, "mode " + to_string(config.mode) + " needs an adapter");
  }
  if (data.split.train.size() < 2 || data.split.validation.size() < 2 || data.split.test.size() < 2) {
    throw Error(ErrorCode::kInvalidParams, "every split needs at least two series");
  }

  const Dataset view = training_view(data);
  OptimizerContext ctx;
  ctx.data = &view;
  ctx.variables = config.variables;
  ctx.train_target = target.restrict_to(data.split.train);
  ctx.constraints = config.constraints;
  ctx.history_window = config.history_window;
  const TargetRanking val_target = target.restrict_to(data.split.validation);
  if (ctx.train_target.ids.size() != data.split.train.size() ||
      val_target.ids.size() != data.split.validation.size()) {
    throw Error(ErrorCode::kInvalidParams, "target does not cover the training and validation splits");
  }
  const std::vector<TimeSeries> obs = view.observations_for(config.variables);
  std::vector<Candidate> val_cands;
  for (const auto& id : data.split.validation) val_cands.push_back({id, view.predictions_for(id, config.variables), {}});

  std::ofstream log;
  if (!config.log_path.empty()) {
    const std::filesystem::path lp(config.log_path);
    if (lp.has_parent_path()) std::filesystem::create_directories(lp.parent_path());
    log.open(lp, std::ios::trunc);
    if (!log) throw Error(ErrorCode::kIoError, "cannot write " + config.log_path);
  }
  auto touch = [&](const char* phase, const std::string& id) {
    if (access) access->touch(phase, id);
  };

  RunReport report;
  report.config = config;
  report.adapter_id = adapter && config.mode != AdapterMode::kDeterministic ? adapter->id() : "deterministic";

  const int total = config.warmup_iterations + config.main_iterations;
  const std::vector<IdPair> pairs = sample_pairs(data.split.train, static_cast<std::size_t>(total), config.seed);

  MetricWeights weights = config.initial_weights;
  std::optional<HillClimber> climber;
  if (config.mode == AdapterMode::kDeterministic) climber.emplace(weights, training_objective(ctx), ctx.constraints);

  std::vector<HistoryEntry> history;
  std::vector<PairedSample> labeled;  // distinct pairs seen so far
  std::optional<Policy> incumbent;
  std::optional<double> incumbent_rho;
  InterpreterEvaluator interpreter;
  std::optional<AdapterEvaluator> model_evaluator;
  if (config.policy_evaluator == "adapter") model_evaluator.emplace(*adapter);
  PolicyEvaluator& evaluator = model_evaluator ? static_cast<PolicyEvaluator&>(*model_evaluator) : interpreter;

  for (int i = 1; i <= total; ++i) {
    const IdPair& ids = pairs[static_cast<std::size_t>(i - 1)];
    touch("train", ids.a);
    touch("train", ids.b);
    const PairedSample pair = make_pair(view, ids, config.variables, &ctx.train_target);
    if (std::none_of(labeled.begin(), labeled.end(), [&](const PairedSample& p) { return p.pair_id == pair.pair_id; })) {
      labeled.push_back(pair);
    }

    IterationRecord rec;
    rec.iteration = i;
    rec.phase = i <= config.warmup_iterations ? "warmup" : "main";
    rec.pair_id = pair.pair_id;
    rec.preferred = pair.preferred ? to_string(*pair.preferred) : "";

    if (climber) {
      const bool moved = climber->step();
      weights = climber->weights();
      HistoryEntry e;
      e.iteration = i;
      e.weights = weights;
      e.pair_id = pair.pair_id;
      e.train_correlation = climber->objective().primary;
      e.rationale = moved ? "hill climb: " + climber->last_move() : "hill climb: no improving move";
      history.push_back(e);
      rec.skipped = !moved;
      rec.rationale = e.rationale;
    } else {
      StepResult s;
      try {
        s = llm_step(weights, history, pair, ctx, *adapter);
      } catch (const Error& e) {
        if (adapter_error(e.code())) adapter_failure(i, e);
        throw;
      }
      weights = s.weights;
      history.back().iteration = i;
      rec.skipped = s.skipped;
      rec.rationale = s.entry.rationale;
    }
    rec.weights = weights;
    rec.train_correlation = history.back().train_correlation;
    for (const auto& id : data.split.validation) touch("validation", id);
    rec.validation_correlation = spearman(bundle_scores(weights, view, val_target.ids, config.variables), val_target.scores);

    if (i > config.warmup_iterations) {
      PolicyOutcome& po = rec.policy;
      po.attempted = true;
      std::optional<Policy> candidate;
      if (climber) {
        candidate = template_policy(weights, config.variables.size(), incumbent ? incumbent->version + 1 : 1);
        candidate->provenance = {i, "deterministic"};
      } else {
        ExtractionResult ex;
        try {
          ex = extract_policy(history, pair, incumbent ? &*incumbent : nullptr, *adapter, i);
        } catch (const Error& e) {
          if (adapter_error(e.code())) adapter_failure(i, e);
          throw;
        }
        candidate = ex.policy;
        po.added = ex.added;
        po.removed = ex.removed;
        if (!candidate) {
          po.outcome = "skipped";
          po.reason = ex.reason;
        }
      }
      if (candidate) {
        po.version = candidate->version;
        // Metrics new to an existing policy must first explain labeled pairs.
        for (const std::string& name : po.added) {
          try {
            const ScreeningResult sr = screen_new_metric(name, *candidate, labeled, &report.component_stats);
            if (!sr.accepted) {
              po.outcome = "screened_out";
              po.reason = name + " decided " + std::to_string(sr.stats.successes) + "/" +
                          std::to_string(sr.stats.applications) + " labeled pairs";
              break;
            }
          } catch (const Error& e) {
            if (e.code() != ErrorCode::kInsufficientPairs) throw;
            po.outcome = "screened_out";
            po.reason = e.what();
            break;
          }
        }
      }
      if (candidate && po.outcome.empty()) {
        ValidationDecision d;
        try {
          d = validate_policy(*candidate, incumbent ? &*incumbent : nullptr, val_cands, obs, val_target,
                              config.validation_runs, evaluator);
        } catch (const Error& e) {
          if (adapter_error(e.code())) adapter_failure(i, e);
          throw;
        }
        po.wins = d.wins;
        po.runs = d.runs;
        po.reason = d.reason;
        po.outcome = d.accepted ? "accepted" : "rejected";
        if (d.accepted) {
          incumbent = std::move(candidate);
          incumbent_rho = mean_of(d.candidate_rho);
        }
      }
    }
    rec.policy_validation_correlation = incumbent_rho;
    if (log.is_open()) log << iteration_to_json(rec).dump() << "\n" << std::flush;
    report.iterations.push_back(std::move(rec));
  }

  report.final_weights = weights;
  report.final_policy = incumbent;
  report.validation_weights = report.iterations.back().validation_correlation;
  report.validation_policy = incumbent_rho;

  for (const auto& id : data.split.test) touch("test", id);
  report.test = evaluate_on_test(weights, incumbent ? &*incumbent : nullptr, data, config.variables,
                                 target.restrict_to(data.split.test));
  ++report.test_evaluations;
  return report;
}

std::optional<Preference> parse_pairwise_verdict(const std::string& text) {
  for (const json& j : json_objects_in(text)) {
    for (const char* key : {"choice", "answer", "preferred", "verdict"}) {
      if (j.contains(key) && j.at(key).is_string()) {
        const std::string v = j.at(key).get<std::string>();
        if (v == "A" || v == "a") return Preference::kA;
        if (v == "B" || v == "b") return Preference::kB;
      }
    }
  }
  std::string bare;
  for (char ch : text) {
    if (!std::isspace(static_cast<unsigned char>(ch)) && ch != '"' && ch != '\'' && ch != '(' && ch != ')' &&
        ch != '.' && ch != '*') {
      bare += ch;
    }
  }
  if (bare == "A" || bare == "a") return Preference::kA;
  if (bare == "B" || bare == "b") return Preference::kB;
  static const std::regex kStated(
      R"((?:[Aa]nswer|[Cc]hoice|[Pp]refer\w*|[Vv]erdict)\W{0,5}(?:is\s+)?(?:[Pp]rediction\s+|[Ss]eries\s+)?\(?([AB])\b)");
  std::smatch m;
  if (std::regex_search(text, m, kStated)) return m[1] == "A" ? Preference::kA : Preference::kB;
  return std::nullopt;
}

PrpResult prp_rank(const std::vector<Candidate>& candidates, const std::vector<TimeSeries>& obs, LlmAdapter& adapter,
                   int in_flight) {
  if (candidates.size() < 2) throw Error(ErrorCode::kInvalidParams, "prp_rank needs at least two candidates");
  if (in_flight < 1) throw Error(ErrorCode::kInvalidParams, "in_flight must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> order;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t j = i + 1; j < candidates.size(); ++j) order.emplace_back(i, j);
  }
  auto request_for = [&](std::size_t i, std::size_t j) {
    std::ostringstream u;
    u << "Which prediction is closer to the observation? Consider timing, shape and magnitude.\n\n";
    for (const auto& o : obs) u << "Observation " << o.variable << ": " << series_as_text(o.values) << "\n";
    for (std::size_t v = 0; v < obs.size(); ++v) {
      u << "Prediction A " << obs[v].variable << ": " << series_as_text(candidates[i].series.at(v).values) << "\n";
    }
    for (std::size_t v = 0; v < obs.size(); ++v) {
      u << "Prediction B " << obs[v].variable << ": " << series_as_text(candidates[j].series.at(v).values) << "\n";
    }
    u << "\nAnswer with a single letter: A or B.\n";
    LlmRequest r;
    r.tag = RequestTag::kPrpRank;
    r.temperature = default_temperature(r.tag);
    r.system_text = "You compare environmental model predictions against observations.";
    r.user_text = u.str();
    return r;
  };

  std::vector<std::string> replies(order.size());
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(in_flight)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(in_flight));
    if (in_flight == 1) {
      replies[start] = adapter.complete(request_for(order[start].first, order[start].second)).text;
      continue;
    }
    std::vector<std::future<std::string>> batch;
    for (std::size_t k = start; k < stop; ++k) {
      const LlmRequest r = request_for(order[k].first, order[k].second);
      batch.push_back(std::async(std::launch::async, [&adapter, r] { return adapter.complete(r).text; }));
    }
    for (std::size_t k = start; k < stop; ++k) replies[k] = batch[k - start].get();
  }

  PrpResult res;
  for (const auto& c : candidates) res.wins[c.id] = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    ++res.calls;
    const std::string& a = candidates[order[k].first].id;
    const std::string& b = candidates[order[k].second].id;
    const auto v = parse_pairwise_verdict(replies[k]);
    if (!v) {
      ++res.unparsed;
      res.wins[a] += 0.5;
      res.wins[b] += 0.5;
    } else {
      res.wins[*v == Preference::kA ? a : b] += 1.0;
    }
  }
  res.ranking = rank_by_scores(res.wins, TargetSource::kPresetWeights).ids;
  return res;
}

MajorityResult majority_vote(const std::vector<Annotation>& annotations,
                             const std::optional<std::string>& tie_break_rater) {
  struct Tally {
    std::string a, b;
    std::map<std::string, Preference> by_rater;
  };
  std::map<std::string, Tally> pairs;
  std::set<std::string> raters;
  for (const Annotation& x : annotations) {
    Tally& t = pairs[x.pair_id];
    if (t.a.empty()) {
      t.a = x.id_a;
      t.b = x.id_b;
    } else if (t.a != x.id_a || t.b != x.id_b) {
      throw Error(ErrorCode::kInvalidParams, "pair " + x.pair_id + " has inconsistent sides");
    }
    t.by_rater.emplace(x.rater_id, x.choice);
    raters.insert(x.rater_id);
  }
  MajorityResult out;
  out.raters = raters.size();
  std::map<std::string, double> wins;
  std::vector<std::vector<int>> counts;
  for (const auto& [pid, t] : pairs) {
    int na = 0, nb = 0;
    for (const auto& [r, c] : t.by_rater) (c == Preference::kA ? na : nb)++;
    counts.push_back({na, nb});
    Preference label;
    if (na != nb) {
      label = na > nb ? Preference::kA : Preference::kB;
    } else {
      const auto tb = tie_break_rater ? t.by_rater.find(*tie_break_rater) : t.by_rater.end();
      if (tb == t.by_rater.end()) {
        throw Error(ErrorCode::kUnresolvedTie, "pair " + pid + " is split " + std::to_string(na) + "-" +
                                                   std::to_string(nb) + " with no tie-break rater");
      }
      label = tb->second;
    }
    out.labels[pid] = label;
    wins.emplace(t.a, 0.0);
    wins.emplace(t.b, 0.0);
    wins[label == Preference::kA ? t.a : t.b] += 1.0;
  }
  out.ranking = rank_by_scores(wins, TargetSource::kExpertMajority);
  try {
    if (!counts.empty()) out.kappa = fleiss_kappa(counts);
  } catch (const Error&) {
    // fewer than two raters, uneven rater counts, or one category only
  }
  return out;
}

json annotation_to_json(const Annotation& a) {
  return {{"pair_id", a.pair_id}, {"id_a", a.id_a},   {"id_b", a.id_b},
          {"rater_id", a.rater_id}, {"task", a.task}, {"choice", a.choice == Preference::kA ? "A" : "B"}};
}

Annotation annotation_from_json(const json& j) {
  Annotation a;
  a.pair_id = j.at("pair_id").get<std::string>();
  a.id_a = j.at("id_a").get<std::string>();
  a.id_b = j.at("id_b").get<std::string>();
  a.rater_id = j.at("rater_id").get<std::string>();
  a.task = j.value("task", std::string{});
  const std::string c = j.at("choice").get<std::string>();
  if (c != "A" && c != "B") throw Error(ErrorCode::kInvalidParams, "choice must be A or B");
  a.choice = c == "A" ? Preference::kA : Preference::kB;
  return a;
}

}  // namespace apef
