#include "apef/series.hpp"

#include <cmath>

#include "apef/error.hpp"

namespace apef {

void check_series(const TimeSeries& series, std::size_t min_length) {
  if (series.values.size() < min_length) {
    throw Error(ErrorCode::kInvalidSeries, "series '" + series.instance_id + "/" + series.variable +
                                               "' has " + std::to_string(series.values.size()) +
                                               " values, need at least " + std::to_string(min_length));
  }
  for (double v : series.values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidSeries,
                  "series '" + series.instance_id + "/" + series.variable + "' has a non-finite value");
    }
  }
}

namespace {

struct Run {
  std::size_t first;  // 1-based difference index
  std::size_t last;
};

// Maximal runs of flagged difference indices with length >= min_len.
std::vector<Run> qualifying_runs(const std::vector<bool>& flags, std::size_t min_len) {
  std::vector<Run> runs;
  std::size_t t = 0;
  while (t < flags.size()) {
    if (!flags[t]) {
      ++t;
      continue;
    }
    std::size_t end = t;
    while (end + 1 < flags.size() && flags[end + 1]) ++end;
    if (end - t + 1 >= min_len) runs.push_back({t + 1, end + 1});
    t = end + 1;
  }
  return runs;
}

void check_params(const SegmentationParams& p) {
  if (!(p.theta_rise > 0.0) || !(p.theta_fall < 0.0) || p.theta_period < 1) {
    throw Error(ErrorCode::kInvalidParams, "segmentation needs theta_rise > 0 > theta_fall and theta_period >= 1");
  }
}

struct RunSets {
  std::vector<Run> rising;
  std::vector<Run> falling;
};

RunSets find_runs(std::span<const double> values, const SegmentationParams& p) {
  check_params(p);
  RunSets out;
  if (values.size() < 2) return out;
  std::vector<bool> rise(values.size() - 1), fall(values.size() - 1);
  for (std::size_t t = 0; t + 1 < values.size(); ++t) {
    const double d = values[t + 1] - values[t];
    rise[t] = d > p.theta_rise;
    fall[t] = d < p.theta_fall;
  }
  const auto min_len = static_cast<std::size_t>(p.theta_period);
  out.rising = qualifying_runs(rise, min_len);
  out.falling = qualifying_runs(fall, min_len);
  return out;
}

}  // namespace

std::optional<Segmentation> try_segment(std::span<const double> values, const SegmentationParams& params) {
  const RunSets runs = find_runs(values, params);
  if (runs.rising.empty() || runs.falling.empty()) return std::nullopt;
  const Run& rise = runs.rising.front();
  const Run& fall = runs.falling.back();
  if (fall.first <= rise.last) return std::nullopt;

  Segmentation seg;
  seg.rise_start = rise.first;
  seg.fall_end = fall.last + 1;
  for (const Run& r : runs.rising)
    for (std::size_t t = r.first; t <= r.last; ++t) seg.rising_steps.push_back(t);
  for (const Run& r : runs.falling)
    for (std::size_t t = r.first; t <= r.last; ++t) seg.falling_steps.push_back(t);
  return seg;
}

Segmentation segment(std::span<const double> values, const SegmentationParams& params) {
  if (auto seg = try_segment(values, params)) return std::move(*seg);
  throw Error(ErrorCode::kNoRiseFallPattern, "no sustained rise followed by a sustained fall");
}

std::vector<std::pair<std::size_t, std::size_t>> split_occurrences(std::span<const double> values,
                                                                   const SegmentationParams& params) {
  const RunSets runs = find_runs(values, params);
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  std::size_t fi = 0;
  for (std::size_t ri = 0; ri < runs.rising.size(); ++ri) {
    const Run& rise = runs.rising[ri];
    if (!windows.empty() && rise.first <= windows.back().second) continue;
    while (fi < runs.falling.size() && runs.falling[fi].first <= rise.last) ++fi;
    if (fi == runs.falling.size()) break;
    // Absorb every falling run before the next rising run that starts after it.
    const std::size_t next_rise =
        ri + 1 < runs.rising.size() ? runs.rising[ri + 1].first : values.size() + 1;
    std::size_t last_fall = fi;
    while (last_fall + 1 < runs.falling.size() && runs.falling[last_fall + 1].first < next_rise) ++last_fall;
    windows.emplace_back(rise.first, runs.falling[last_fall].last + 1);
    fi = last_fall + 1;
  }
  return windows;
}

PeakSet detect_peaks(std::span<const double> values) {
  PeakSet peaks;
  for (std::size_t i = 1; i + 1 < values.size(); ++i) {
    if (values[i] > values[i - 1] && values[i] > values[i + 1]) {
      peaks.indices.push_back(i + 1);
      peaks.values.push_back(values[i]);
    }
  }
  return peaks;
}

std::vector<double> first_derivative(std::span<const double> values) {
  std::vector<double> out;
  if (values.size() < 2) return out;
  out.reserve(values.size() - 1);
  for (std::size_t t = 0; t + 1 < values.size(); ++t) out.push_back(values[t + 1] - values[t]);
  return out;
}

std::vector<double> second_derivative(std::span<const double> values) {
  std::vector<double> out;
  if (values.size() < 3) return out;
  out.reserve(values.size() - 2);
  for (std::size_t t = 0; t + 2 < values.size(); ++t) out.push_back(values[t + 2] - 2.0 * values[t + 1] + values[t]);
  return out;
}

}  // namespace apef
