#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "apef/metrics.hpp"
#include "apef/series.hpp"

namespace apef {

enum class AugmentationKind { kNoise, kSliceShuffle, kMagnitudeWarp, kWindowWarp };

std::string to_string(AugmentationKind kind);
AugmentationKind augmentation_kind_from_string(const std::string& text);

struct AugmentationSpec {
  AugmentationKind kind = AugmentationKind::kNoise;
  double sigma = 0.0;             // noise: Gaussian standard deviation, > 0
  int slices = 4;                 // slice_shuffle: >= 2
  int knots = 4;                  // magnitude_warp: interior knots, >= 2
  double envelope_std = 0.2;      // magnitude_warp: knot value spread, > 0
  double window_fraction = 0.1;   // window_warp: fraction of T in (0, 1)
  double factor = 2.0;            // window_warp: time-stretch factor, > 0
  std::uint64_t seed = 0;

  friend bool operator==(const AugmentationSpec&, const AugmentationSpec&) = default;
};

// Defaults: noise sigma = 0.1 std(obs); 4 slices; 4 knots with spread 0.2;
// 10% window stretched by 0.5 or 2 (drawn from the seed).
AugmentationSpec default_spec(AugmentationKind kind, const TimeSeries& obs, std::uint64_t seed);

// Same length as obs; deterministic in (obs, spec). Throws
// Error(kInvalidParams) on out-of-range parameters.
TimeSeries augment(const TimeSeries& obs, const AugmentationSpec& spec);

// Smooth seasonal curves standing in for flux-tower observations.
// variable "GPP" gives a single growing-season peak; "CO2" the matching net
// exchange (respiration minus uptake). Any other name gets the GPP shape.
TimeSeries synthetic_observation(const std::string& variable, std::size_t length = 365, std::uint64_t seed = 2005);

// One candidate model: a prediction for every observed variable, in the
// same order as Dataset::observations.
struct Candidate {
  std::string id;
  std::vector<TimeSeries> series;
  std::vector<AugmentationSpec> specs;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct Dataset {
  std::vector<TimeSeries> observations;  // one per variable
  std::vector<Candidate> candidates;
  DatasetSplit split;

  const Candidate& candidate(const std::string& id) const;
  std::vector<std::string> variables() const;
  // Observations restricted to the given variables (in that order).
  std::vector<TimeSeries> observations_for(const std::vector<std::string>& variables) const;
  std::vector<TimeSeries> predictions_for(const std::string& id, const std::vector<std::string>& variables) const;
};

// Largest-remainder allocation of n items to the given ratios.
std::vector<std::size_t> split_sizes(std::size_t n, const std::vector<double>& ratios = {0.5, 0.25, 0.25});

DatasetSplit split_ids(std::vector<std::string> ids, std::uint64_t seed,
                       const std::vector<double>& ratios = {0.5, 0.25, 0.25});

// n candidates (n >= 4), kinds assigned round-robin so n = 20 gives five of
// each, no compositions. Candidate ids are "m00", "m01", ...
Dataset generate_dataset(const std::vector<TimeSeries>& obs_set, std::size_t n, std::uint64_t seed);

enum class TargetSource { kPresetWeights, kExpertMajority, kIlamb };

std::string to_string(TargetSource source);
TargetSource target_source_from_string(const std::string& text);

// Best first; scores weakly decreasing.
struct TargetRanking {
  std::vector<std::string> ids;
  std::vector<double> scores;
  TargetSource source = TargetSource::kPresetWeights;

  std::optional<double> score_of(const std::string& id) const;
  // Keeps only the given ids, preserving order.
  TargetRanking restrict_to(const std::vector<std::string>& subset) const;
  friend bool operator==(const TargetRanking&, const TargetRanking&) = default;
};

// Sorts by score descending, ties by id.
TargetRanking rank_by_scores(const std::map<std::string, double>& scores, TargetSource source);

// Similarity under one variable, two_variable_score under two.
double score_bundle(const std::vector<TimeSeries>& pred, const std::vector<TimeSeries>& obs,
                    const MetricWeights& weights, const MetricOptions& options = {});

TargetRanking build_target_ranking(const Dataset& data, const std::vector<std::string>& ids,
                                   const std::vector<std::string>& variables, const MetricWeights& preset,
                                   const MetricOptions& options = {});

TargetRanking build_ilamb_ranking(const Dataset& data, const std::vector<std::string>& ids,
                                  const std::string& variable, const IlambWeights& weights = {},
                                  std::size_t cycle_length = 365);

struct IdPair {
  std::string a;
  std::string b;
  friend bool operator==(const IdPair&, const IdPair&) = default;
};

// count pairs over train ids. When count >= |train| - 1 the pairs connect
// every training id; consecutive pairs never repeat unless only one pair
// exists.
std::vector<IdPair> sample_pairs(const std::vector<std::string>& train, std::size_t count, std::uint64_t seed);

}  // namespace apef
