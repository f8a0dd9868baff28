#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "apef/series.hpp"

namespace apef {

// Adjustable parameters of the base metric. w_peak, w_der and w_amp live on
// the simplex (each in [0.1, 1], sum 1); tolerance is a window length in
// timesteps with its own bounds and does not take part in normalization.
struct MetricWeights {
  double w_peak = 1.0 / 3.0;
  double w_der = 1.0 / 3.0;
  double w_amp = 1.0 / 3.0;
  double tolerance = 5.0;

  std::array<double, 3> simplex() const noexcept { return {w_peak, w_der, w_amp}; }
  friend bool operator==(const MetricWeights&, const MetricWeights&) = default;
};

inline constexpr double kWeightLower = 0.1;
inline constexpr double kWeightUpper = 1.0;
inline constexpr double kToleranceLower = 1.0;
inline constexpr double kToleranceUpper = 10.0;

// True when every documented MetricWeights invariant holds.
bool weights_valid(const MetricWeights& w, double sum_tolerance = 1e-9) noexcept;

// Preset scenarios used to generate synthetic targets.
MetricWeights preset_peak();
MetricWeights preset_deriv();
MetricWeights preset_amp();

struct MetricOptions {
  SegmentationParams segmentation;
  // Min-max normalize both series by the observation range before scoring.
  bool normalize = false;
};

struct PeakScores {
  double x = 0.0;     // temporal alignment
  double y = 0.0;     // amplitude agreement
  double peak = 0.0;  // (1 - w_amp) x + w_amp y
};

PeakScores peak_similarity(std::span<const double> pred, std::span<const double> obs, double tolerance,
                           double w_amp);

struct DerivativeScores {
  double slope = 0.0;
  double curv = 0.0;
  double deriv = 0.0;  // w_der (slope + curv)
};

DerivativeScores derivative_distance(std::span<const double> pred, std::span<const double> obs, double w_der);

struct SegmentScore {
  std::string name;     // before | in | after
  std::size_t first = 0;  // 1-based inclusive bounds; length 0 when empty
  std::size_t length = 0;
  PeakScores peak;
  DerivativeScores deriv;
  double distance = 0.0;  // (1 - s_peak) + s_deriv, 0 for an empty segment
};

struct ScoreBreakdown {
  // Peak and derivative components of the in-peak segment.
  double s_peak_x = 0.0;
  double s_peak_y = 0.0;
  double s_peak = 0.0;
  double s_slope = 0.0;
  double s_curv = 0.0;
  double s_deriv = 0.0;
  // Segment distances.
  double s_before = 0.0;
  double s_in = 0.0;
  double s_after = 0.0;
  double s_total = 0.0;
  double similarity = 1.0;  // 1 / (1 + s_total)

  bool segmented = false;  // false when the whole series was scored as one segment
  std::size_t rise_start = 0;
  std::size_t fall_end = 0;
  std::array<SegmentScore, 3> segments;
};

// w_peak * in + (1 - w_peak) / 2 * (before + after)
double combine_segment_distances(double w_peak, double before, double in, double after) noexcept;

ScoreBreakdown base_metric(const TimeSeries& pred, const TimeSeries& obs, const MetricWeights& weights,
                           const MetricOptions& options = {});

struct TwoVariableBreakdown {
  double sim_p = 0.0;
  double sim_q = 0.0;
  double corr = 0.0;  // 1 - |Spear(obs_p, obs_q) - Spear(pred_p, pred_q)|
  double score = 0.0;
};

TwoVariableBreakdown two_variable_breakdown(const TimeSeries& pred_p, const TimeSeries& pred_q,
                                            const TimeSeries& obs_p, const TimeSeries& obs_q,
                                            const MetricWeights& weights, const MetricOptions& options = {});

double two_variable_score(const TimeSeries& pred_p, const TimeSeries& pred_q, const TimeSeries& obs_p,
                          const TimeSeries& obs_q, const MetricWeights& weights, const MetricOptions& options = {});

// Baselines. r2 is the squared Pearson correlation; nse is Nash-Sutcliffe.
double rmse(std::span<const double> pred, std::span<const double> obs);
double mae(std::span<const double> pred, std::span<const double> obs);
double r2(std::span<const double> pred, std::span<const double> obs);
double nse(std::span<const double> pred, std::span<const double> obs);

double mean(std::span<const double> values);
// Population standard deviation.
double stddev(std::span<const double> values);

struct IlambWeights {
  double bias = 1.0;
  double rmse = 1.0;
  double seasonal = 1.0;
};

struct IlambScore {
  double bias_score = 0.0;
  double rmse_score = 0.0;
  double seasonal_score = 0.0;
  double final_score = 0.0;
};

// Mean over whole cycles and the partial tail: out[k] averages values[k + m L].
std::vector<double> cycle_mean(std::span<const double> values, std::size_t cycle_length);

IlambScore ilamb_scores(std::span<const double> pred, std::span<const double> obs,
                        const IlambWeights& weights = {}, std::size_t cycle_length = 365);

}  // namespace apef
