#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "apef/datagen.hpp"
#include "apef/llm.hpp"
#include "apef/metrics.hpp"

namespace apef {

enum class Preference { kA, kB };

std::string to_string(Preference p);
Preference preference_from_string(const std::string& text);

// Two candidates and the observation they are judged against. Each side holds
// one series per variable (one or two).
struct PairedSample {
  std::string pair_id;
  std::string id_a;
  std::string id_b;
  std::vector<TimeSeries> a;
  std::vector<TimeSeries> b;
  std::vector<TimeSeries> obs;
  std::optional<Preference> preferred;
};

std::string make_pair_id(const std::string& a, const std::string& b);

// Builds the sample and labels it from the target ranking (higher target
// score wins; equal scores prefer the earlier position).
PairedSample make_pair(const Dataset& data, const IdPair& ids, const std::vector<std::string>& variables,
                       const TargetRanking* target = nullptr);

struct HistoryEntry {
  int iteration = 0;
  MetricWeights weights;
  std::string pair_id;
  double train_correlation = 0.0;
  std::string rationale;
};

struct ConstraintSet {
  double lower = kWeightLower;
  double upper = kWeightUpper;
  double delta = 0.2;
  double tolerance_lower = kToleranceLower;
  double tolerance_upper = kToleranceUpper;
};

void check_constraints(const ConstraintSet& c);

// Table of the most recent `window` entries, oldest first.
std::string format_history(const std::vector<HistoryEntry>& history, std::size_t window = 10);

struct ValidatedWeights {
  MetricWeights weights;
  bool repaired = false;
  std::vector<std::string> notes;
};

// Nearest point (Euclidean, over w_peak, w_der, w_amp) to the proposal that
// lies on the simplex, inside [lower, upper] and within delta of previous.
// Tolerance is clamped to its bounds. A proposal that is already feasible
// comes back unchanged. Throws Error(kUnrepairable) when no such point exists.
ValidatedWeights validate_weights(const MetricWeights& proposed, const MetricWeights& previous,
                                  const ConstraintSet& c = {});

// Fraction of labeled pairs whose similarity order under `weights` agrees
// with the label. Ties count as disagreement.
double pairwise_agreement(const MetricWeights& weights, const std::vector<PairedSample>& pairs,
                          const MetricOptions& options = {});

// Scores each id with score_bundle and correlates (Spearman) with the target
// scores. `ranking` decides which ids take part.
std::vector<double> bundle_scores(const MetricWeights& weights, const Dataset& data,
                                  const std::vector<std::string>& ids, const std::vector<std::string>& variables,
                                  const MetricOptions& options = {});
double training_correlation(const MetricWeights& weights, const TargetRanking& ranking, const Dataset& data,
                            const std::vector<std::string>& variables, const MetricOptions& options = {});

struct OptimizerContext {
  const Dataset* data = nullptr;
  std::vector<std::string> variables;
  TargetRanking train_target;  // restricted to the training ids
  ConstraintSet constraints;
  MetricOptions options;
  std::size_t history_window = 10;
};

std::string weight_system_prompt();
std::string weight_user_prompt(const MetricWeights& current, const std::vector<HistoryEntry>& history,
                               const PairedSample& pair, const OptimizerContext& ctx);

struct StepResult {
  MetricWeights weights;
  HistoryEntry entry;
  bool skipped = false;
};

// One LLM-guided update. Appends the new entry to history.
StepResult llm_step(const MetricWeights& current, std::vector<HistoryEntry>& history, const PairedSample& pair,
                    const OptimizerContext& ctx, LlmAdapter& adapter);

// Lexicographic objective: training Spearman first, Pearson between the
// similarity scores and the target scores to break plateaus.
struct Objective {
  double primary = 0.0;
  double secondary = 0.0;
  bool operator>(const Objective& o) const {
    return primary > o.primary || (primary == o.primary && secondary > o.secondary);
  }
};

using ObjectiveFn = std::function<Objective(const MetricWeights&)>;

ObjectiveFn training_objective(const OptimizerContext& ctx);

// Coordinate hill climbing: transfer 0.05 between two weights or move the
// tolerance by 1 on the grid 1..10; first strict improvement in a fixed move
// order is taken.
class HillClimber {
 public:
  HillClimber(MetricWeights start, ObjectiveFn objective, ConstraintSet c = {});
  // Tries one move; returns true when a move was accepted.
  bool step();
  const MetricWeights& weights() const { return weights_; }
  const Objective& objective() const { return value_; }
  const std::string& last_move() const { return last_move_; }

 private:
  MetricWeights weights_;
  ObjectiveFn objective_;
  ConstraintSet c_;
  Objective value_;
  std::string last_move_;
};

struct OptimizeResult {
  MetricWeights weights;
  std::vector<HistoryEntry> history;  // one entry per accepted move
  Objective objective;
};

// Runs up to budget moves, stopping early at a local optimum.
OptimizeResult deterministic_optimize(const MetricWeights& initial, const ObjectiveFn& objective,
                                      const ConstraintSet& c, int budget);
OptimizeResult deterministic_optimize(const MetricWeights& initial, const OptimizerContext& ctx, int budget);

}  // namespace apef
