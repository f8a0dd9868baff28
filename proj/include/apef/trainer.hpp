#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "apef/dataset_io.hpp"
#include "apef/llm.hpp"
#include "apef/optimizer.hpp"
#include "apef/policy.hpp"

namespace apef {

enum class Scenario { kPresetPeak, kPresetDeriv, kPresetAmp, kExpert, kIlamb };
std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& text);

enum class AdapterMode { kLlm, kScripted, kDeterministic };
std::string to_string(AdapterMode m);
AdapterMode adapter_mode_from_string(const std::string& text);

struct RunConfig {
  Scenario scenario = Scenario::kPresetPeak;
  std::vector<std::string> variables{"GPP"};
  int warmup_iterations = 10;
  int main_iterations = 10;
  int validation_runs = 5;
  std::uint64_t seed = 1;
  AdapterMode mode = AdapterMode::kDeterministic;
  // "interpreter" runs the formulas; "adapter" asks the model to apply the
  // policy (non-deterministic, so validation_runs matter).
  std::string policy_evaluator = "interpreter";
  MetricWeights initial_weights{};
  ConstraintSet constraints{};
  std::size_t history_window = 10;
  // Informational; recorded in the report.
  std::string transcript_path;
  std::string log_path;
  std::string script_path;  // scripted mode
};

// Throws Error(kInvalidParams) on inconsistent settings.
void check_config(const RunConfig& c);
nlohmann::json config_to_json(const RunConfig& c);
RunConfig config_from_json(const nlohmann::json& j);

// Records every candidate id the training phase hands to the optimizer,
// the policy engine or the adapter.
struct AccessLog {
  std::vector<std::pair<std::string, std::string>> events;  // (phase, id)
  void touch(const std::string& phase, const std::string& id) { events.emplace_back(phase, id); }
  bool touched_before(const std::string& id, const std::string& phase) const;
};

struct PolicyOutcome {
  bool attempted = false;
  std::string outcome;  // accepted | rejected | skipped | screened_out
  int version = 0;
  int wins = 0;
  int runs = 0;
  std::vector<std::string> added;
  std::vector<std::string> removed;
  std::string reason;
};

struct IterationRecord {
  int iteration = 0;
  std::string phase;  // warmup | main
  std::string pair_id;
  std::string preferred;  // A | B
  MetricWeights weights;
  double train_correlation = 0.0;
  double validation_correlation = 0.0;  // current weights
  std::optional<double> policy_validation_correlation;  // incumbent after this iteration
  bool skipped = false;
  std::string rationale;
  PolicyOutcome policy;
};

nlohmann::json iteration_to_json(const IterationRecord& r);

struct TestEvaluation {
  double weights = 0.0;
  std::optional<double> policy;
  std::map<std::string, double> baselines;  // r2, rmse, mae, nse
};

struct RunReport {
  RunConfig config;
  std::string adapter_id;
  MetricWeights final_weights;
  std::optional<Policy> final_policy;
  std::vector<IterationRecord> iterations;
  double validation_weights = 0.0;
  std::optional<double> validation_policy;
  TestEvaluation test;
  int test_evaluations = 0;
  ComponentStats component_stats;
};

nlohmann::json report_to_json(const RunReport& r);
// Stable text: two-space indent, sorted keys, trailing newline.
std::string serialize_report(const RunReport& r);

// The target over every candidate for the scenario and variables, from the
// bundle when stored there, else computed.
TargetRanking scenario_target(const DatasetBundle& bundle, Scenario scenario, const std::vector<std::string>& variables);

// Warm-up weight steps, then main iterations of one weight step followed by
// extraction, screening and validation. One training pair per iteration.
// The adapter may be null in deterministic mode. Adapter errors are rethrown
// as Error(kAdapterFailure); log lines already written are kept.
RunReport run_training(const RunConfig& config, const Dataset& data, const TargetRanking& target, LlmAdapter* adapter,
                       AccessLog* access = nullptr);

// Baseline scores for one candidate: averaged over variables.
std::map<std::string, double> baseline_scores(const std::vector<TimeSeries>& pred, const std::vector<TimeSeries>& obs);
// Fit metrics (r2, nse) rank descending, errors (rmse, mae) ascending.
bool baseline_ascending(const std::string& name);

// Spearman against the test target for the final weights, the final policy
// (when present) and each baseline.
TestEvaluation evaluate_on_test(const MetricWeights& weights, const Policy* policy, const Dataset& data,
                                const std::vector<std::string>& variables, const TargetRanking& test_target);

struct PrpResult {
  std::vector<std::string> ranking;
  std::map<std::string, double> wins;
  int calls = 0;
  int unparsed = 0;
};

// Parses "A"/"B" from a pairwise verdict; empty when unclear.
std::optional<Preference> parse_pairwise_verdict(const std::string& text);

// All-pairs tournament in input order (i < j, i shown as A). Unclear
// verdicts give half a win to each side. Up to `in_flight` requests run at
// once; the tally follows pair order either way.
PrpResult prp_rank(const std::vector<Candidate>& candidates, const std::vector<TimeSeries>& obs, LlmAdapter& adapter,
                   int in_flight = 1);

struct Annotation {
  std::string pair_id;
  std::string id_a;
  std::string id_b;
  std::string rater_id;
  std::string task;
  Preference choice = Preference::kA;
};

struct MajorityResult {
  TargetRanking ranking;
  std::map<std::string, Preference> labels;  // per pair
  std::optional<double> kappa;               // empty when undefined
  std::size_t raters = 0;
};

// Majority label per pair, then ranking by wins over the labeled pairs.
// An even split is settled by tie_break_rater when given, else
// Error(kUnresolvedTie).
MajorityResult majority_vote(const std::vector<Annotation>& annotations,
                             const std::optional<std::string>& tie_break_rater = std::nullopt);

nlohmann::json annotation_to_json(const Annotation& a);
Annotation annotation_from_json(const nlohmann::json& j);

}  // namespace apef
