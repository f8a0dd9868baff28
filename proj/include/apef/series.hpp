#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace apef {

// A uniformly sampled sequence for one variable of one instance.
struct TimeSeries {
  std::string instance_id;
  std::string variable;
  std::vector<double> values;
  std::string timestep = "daily";

  std::size_t size() const noexcept { return values.size(); }
  std::span<const double> view() const noexcept { return values; }

  friend bool operator==(const TimeSeries&, const TimeSeries&) = default;
};

// Throws Error(kInvalidSeries) unless the series has at least min_length
// values and all of them are finite.
void check_series(const TimeSeries& series, std::size_t min_length = 3);

struct SegmentationParams {
  double theta_rise = 0.01;
  double theta_fall = -0.01;
  int theta_period = 5;
};

// Indices are 1-based timesteps. rise_start is the timestep at which the
// first sustained rise begins; fall_end is the timestep at which the last
// sustained fall ends. rising_steps / falling_steps list the difference
// indices t (difference p_{t+1} - p_t) that survived the run-length filter.
struct Segmentation {
  std::size_t rise_start = 0;
  std::size_t fall_end = 0;
  std::vector<std::size_t> rising_steps;
  std::vector<std::size_t> falling_steps;

  std::size_t peak_period_length() const noexcept { return fall_end - rise_start + 1; }
};

// Throws Error(kNoRiseFallPattern) when no qualifying rising run precedes a
// qualifying falling run, Error(kInvalidParams) on bad thresholds.
Segmentation segment(std::span<const double> values, const SegmentationParams& params = {});
std::optional<Segmentation> try_segment(std::span<const double> values,
                                        const SegmentationParams& params = {});

// Preprocessing for series holding several rise/fall occurrences: returns
// 1-based inclusive [first, last] windows, one per occurrence, each suitable
// for a separate call to segment(). Empty when there is no occurrence.
std::vector<std::pair<std::size_t, std::size_t>> split_occurrences(
    std::span<const double> values, const SegmentationParams& params = {});

// Strict local maxima; indices are 1-based and lie in [2, T-1].
struct PeakSet {
  std::vector<std::size_t> indices;
  std::vector<double> values;

  bool empty() const noexcept { return indices.empty(); }
  std::size_t size() const noexcept { return indices.size(); }
};

PeakSet detect_peaks(std::span<const double> values);

// Forward differences with unit step.
std::vector<double> first_derivative(std::span<const double> values);
std::vector<double> second_derivative(std::span<const double> values);

}  // namespace apef
