#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apef/datagen.hpp"
#include "apef/formula.hpp"
#include "apef/llm.hpp"
#include "apef/optimizer.hpp"

namespace apef {

inline constexpr int kPolicyPoints = 10;

struct PolicyMetric {
  std::string name;
  std::string description;
  friend bool operator==(const PolicyMetric&, const PolicyMetric&) = default;
};

struct PolicyProvenance {
  int iteration = 0;
  std::string adapter_id;
  friend bool operator==(const PolicyProvenance&, const PolicyProvenance&) = default;
};

// Metric values are computed by their formulas, multiplied by their points,
// and combined by the aggregation formula (sum when absent). Tie breakers
// compare raw metric values, larger first; a leading '-' means smaller first.
struct Policy {
  int version = 1;
  std::vector<PolicyMetric> metrics;
  std::map<std::string, Formula> formulas;
  std::map<std::string, int> scoring;
  std::optional<Formula> aggregation;
  std::vector<std::string> tie_breakers;
  PolicyProvenance provenance;

  std::vector<std::string> metric_names() const;
  friend bool operator==(const Policy&, const Policy&) = default;
};

// Throws Error(kSchemaViolation) naming the offending field,
// Error(kFormulaSyntaxError) or Error(kPointSumError).
Policy parse_policy(const std::string& json_text);
Policy parse_policy(const nlohmann::json& j);
nlohmann::json policy_to_json(const Policy& p);
std::string serialize_policy(const Policy& p);

// First JSON object in free text that looks like a policy (has "metrics").
Policy parse_policy_response(const std::string& text);

// pred/obs is the first variable, pred2/obs2 the second (when present).
FormulaInputs formula_inputs(const std::vector<TimeSeries>& pred, const std::vector<TimeSeries>& obs);

struct CandidateVerdict {
  std::string id;
  std::map<std::string, double> raw;  // per-metric values, audit trail
  std::optional<double> score;        // empty when evaluation failed
  std::string error;
  friend bool operator==(const CandidateVerdict&, const CandidateVerdict&) = default;
};

struct PolicyVerdict {
  std::vector<CandidateVerdict> candidates;  // input order
  std::vector<std::string> ranking;          // best first; failed candidates last
  const CandidateVerdict& of(const std::string& id) const;
  friend bool operator==(const PolicyVerdict&, const PolicyVerdict&) = default;
};

// Each candidate carries one series per variable, aligned with obs.
PolicyVerdict apply_policy(const Policy& policy, const std::vector<Candidate>& candidates,
                           const std::vector<TimeSeries>& obs);

// Ranks candidates under a policy: the interpreter, or a language model.
class PolicyEvaluator {
 public:
  virtual ~PolicyEvaluator() = default;
  virtual std::vector<std::string> rank(const Policy& policy, const std::vector<Candidate>& candidates,
                                        const std::vector<TimeSeries>& obs) = 0;
  // True when repeated calls always give the same answer.
  virtual bool deterministic() const = 0;
};

class InterpreterEvaluator : public PolicyEvaluator {
 public:
  std::vector<std::string> rank(const Policy& policy, const std::vector<Candidate>& candidates,
                                const std::vector<TimeSeries>& obs) override;
  bool deterministic() const override { return true; }
};

// Asks the adapter to score candidates under the policy. The reply must hold
// {"scores": {id: number, ...}}; ids it leaves out rank last.
class AdapterEvaluator : public PolicyEvaluator {
 public:
  explicit AdapterEvaluator(LlmAdapter& adapter) : adapter_(adapter) {}
  std::vector<std::string> rank(const Policy& policy, const std::vector<Candidate>& candidates,
                                const std::vector<TimeSeries>& obs) override;
  bool deterministic() const override { return false; }

 private:
  LlmAdapter& adapter_;
};

std::string series_as_text(const std::vector<double>& v);

// Spearman between ranking positions (best = highest) and target scores.
double ranking_correlation(const std::vector<std::string>& ranking, const TargetRanking& target);

struct ValidationDecision {
  bool accepted = false;
  int wins = 0;
  int runs = 0;
  std::vector<double> candidate_rho;
  std::vector<double> incumbent_rho;
  std::string reason;
};

inline constexpr double kValidationThreshold = 0.7;

// The candidate wins a run when its validation Spearman beats the
// incumbent's; with no incumbent, when it is positive. Accepted when
// wins / runs >= 0.7. A deterministic evaluator is run once.
ValidationDecision validate_policy(const Policy& candidate, const Policy* incumbent,
                                   const std::vector<Candidate>& validation, const std::vector<TimeSeries>& obs,
                                   const TargetRanking& target, int runs, PolicyEvaluator& evaluator);

struct MetricStats {
  int applications = 0;
  int successes = 0;
  double success_rate() const { return applications > 0 ? static_cast<double>(successes) / applications : 0.0; }
};

using ComponentStats = std::map<std::string, MetricStats>;

struct ScreeningResult {
  bool accepted = false;
  MetricStats stats;
};

inline constexpr double kScreeningThreshold = 0.7;
inline constexpr int kScreeningMinPairs = 5;

// Uses the metric alone (larger is better) to decide each labeled pair.
// Throws Error(kInsufficientPairs) below five pairs.
ScreeningResult screen_new_metric(const std::string& metric_name, const Policy& policy,
                                  const std::vector<PairedSample>& labeled_pairs, ComponentStats* stats = nullptr);

struct ExtractionResult {
  std::optional<Policy> policy;  // empty when the iteration was skipped
  std::vector<std::string> added;
  std::vector<std::string> removed;
  int attempts = 0;
  std::string reason;
};

std::string policy_system_prompt();
std::string policy_user_prompt(const std::vector<HistoryEntry>& history, const PairedSample& pair,
                               const Policy* prior, std::size_t window = 10);

// Asks for a policy; at most one metric may be added or removed relative to
// the prior. One retry on a malformed or over-churned answer.
ExtractionResult extract_policy(const std::vector<HistoryEntry>& history, const PairedSample& pair,
                                const Policy* prior, LlmAdapter& adapter, int iteration);

// Policy built from metric weights without a model: peak, derivative and
// amplitude metrics with points in proportion to the weights.
Policy template_policy(const MetricWeights& w, std::size_t variables, int version = 1);

}  // namespace apef
