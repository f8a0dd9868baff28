#include "apef/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "apef/error.hpp"
#include "apef/kernels.hpp"
#include "apef/stats.hpp"

namespace apef {

bool weights_valid(const MetricWeights& w, double sum_tolerance) noexcept {
  for (double v : w.simplex()) {
    if (!std::isfinite(v) || v < kWeightLower - 1e-12 || v > kWeightUpper + 1e-12) return false;
  }
  if (std::fabs(w.w_peak + w.w_der + w.w_amp - 1.0) > sum_tolerance) return false;
  return std::isfinite(w.tolerance) && w.tolerance >= kToleranceLower && w.tolerance <= kToleranceUpper;
}

MetricWeights preset_peak() { return {0.8, 0.1, 0.1, 5.0}; }
MetricWeights preset_deriv() { return {0.1, 0.8, 0.1, 5.0}; }
MetricWeights preset_amp() { return {0.1, 0.1, 0.8, 5.0}; }

namespace {

struct Match {
  double distance;
  std::size_t lo;
  std::size_t hi;
  std::size_t i;
  std::size_t j;
};

double amplitude_term(double vp, double vy) {
  const double denom = std::max(std::fabs(vp), std::fabs(vy));
  if (denom == 0.0) return 1.0;
  return std::max(0.0, 1.0 - std::fabs(vp - vy) / denom);
}

}  // namespace

PeakScores peak_similarity(std::span<const double> pred, std::span<const double> obs, double tolerance,
                           double w_amp) {
  if (!(tolerance >= 1.0) || !(w_amp >= 0.0 && w_amp <= 1.0)) {
    throw Error(ErrorCode::kInvalidWeights, "peak_similarity needs tolerance >= 1 and w_amp in [0, 1]");
  }
  const PeakSet pp = detect_peaks(pred);
  const PeakSet py = detect_peaks(obs);
  PeakScores s;
  if (pp.empty() && py.empty()) {
    s.x = s.y = s.peak = 1.0;
    return s;
  }
  if (pp.empty() || py.empty()) return s;

  // Greedy one-to-one matching, nearest in time first. The sort key is
  // symmetric in the two series so swapping them yields the same pairs.
  std::vector<Match> candidates;
  candidates.reserve(pp.size() * py.size());
  for (std::size_t i = 0; i < pp.size(); ++i) {
    for (std::size_t j = 0; j < py.size(); ++j) {
      const std::size_t tp = pp.indices[i];
      const std::size_t ty = py.indices[j];
      candidates.push_back({std::fabs(static_cast<double>(tp) - static_cast<double>(ty)), std::min(tp, ty),
                            std::max(tp, ty), i, j});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Match& a, const Match& b) {
    return std::tie(a.distance, a.lo, a.hi, a.i, a.j) < std::tie(b.distance, b.lo, b.hi, b.i, b.j);
  });

  std::vector<bool> used_p(pp.size(), false), used_y(py.size(), false);
  double sum_x = 0.0;
  double sum_y = 0.0;
  for (const Match& m : candidates) {
    if (used_p[m.i] || used_y[m.j]) continue;
    used_p[m.i] = used_y[m.j] = true;
    sum_x += std::max(0.0, 1.0 - m.distance / tolerance);
    sum_y += amplitude_term(pp.values[m.i], py.values[m.j]);
  }
  const double denom = static_cast<double>(std::max(pp.size(), py.size()));
  s.x = sum_x / denom;
  s.y = sum_y / denom;
  s.peak = (1.0 - w_amp) * s.x + w_amp * s.y;
  return s;
}

DerivativeScores derivative_distance(std::span<const double> pred, std::span<const double> obs, double w_der) {
  if (pred.size() != obs.size()) throw Error(ErrorCode::kInvalidParams, "derivative_distance needs equal lengths");
  DerivativeScores d;
  const std::size_t n = pred.size();
  if (n >= 2) d.slope = kernels::diff1_sq_diff(pred, obs) / static_cast<double>(n - 1);
  if (n >= 3) d.curv = kernels::diff2_sq_diff(pred, obs) / static_cast<double>(n - 2);
  d.deriv = w_der * (d.slope + d.curv);
  return d;
}

namespace {

void check_weights_for_scoring(const MetricWeights& w) {
  for (double v : w.simplex()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw Error(ErrorCode::kInvalidWeights, "weights must lie in [0, 1]");
    }
  }
  if (!std::isfinite(w.tolerance) || w.tolerance < 1.0) {
    throw Error(ErrorCode::kInvalidWeights, "tolerance must be >= 1");
  }
}

SegmentScore score_segment(std::string name, std::span<const double> pred, std::span<const double> obs,
                           std::size_t first, const MetricWeights& w) {
  SegmentScore s;
  s.name = std::move(name);
  s.first = first;
  s.length = pred.size();
  if (pred.empty()) {
    s.peak = {1.0, 1.0, 1.0};
    return s;
  }
  s.peak = peak_similarity(pred, obs, w.tolerance, w.w_amp);
  s.deriv = derivative_distance(pred, obs, w.w_der);
  s.distance = (1.0 - s.peak.peak) + s.deriv.deriv;
  return s;
}

std::vector<double> rescale(std::span<const double> v, double lo, double range) {
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x = (x - lo) / range;
  return out;
}

}  // namespace

double combine_segment_distances(double w_peak, double before, double in, double after) noexcept {
  return w_peak * in + 0.5 * (1.0 - w_peak) * (before + after);
}

ScoreBreakdown base_metric(const TimeSeries& pred, const TimeSeries& obs, const MetricWeights& weights,
                           const MetricOptions& options) {
  check_series(pred);
  check_series(obs);
  if (pred.size() != obs.size()) throw Error(ErrorCode::kInvalidParams, "base_metric needs equal lengths");
  check_weights_for_scoring(weights);

  std::span<const double> p = pred.view();
  std::span<const double> y = obs.view();
  std::vector<double> p_norm, y_norm;
  if (options.normalize) {
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    const double range = *hi - *lo;
    if (range > 0.0) {
      p_norm = rescale(p, *lo, range);
      y_norm = rescale(y, *lo, range);
      p = p_norm;
      y = y_norm;
    }
  }

  const std::size_t T = y.size();
  ScoreBreakdown out;
  // 1-based inclusive bounds of the in-peak segment.
  std::size_t in_first = 1;
  std::size_t in_last = T;
  if (auto seg = try_segment(y, options.segmentation)) {
    out.segmented = true;
    out.rise_start = seg->rise_start;
    out.fall_end = seg->fall_end;
    in_first = seg->rise_start;
    in_last = seg->fall_end;
  }

  auto slice = [](std::span<const double> v, std::size_t first, std::size_t last) {
    if (last < first) return v.subspan(0, 0);
    return v.subspan(first - 1, last - first + 1);
  };
  out.segments[0] = score_segment("before", slice(p, 1, in_first - 1), slice(y, 1, in_first - 1), 1, weights);
  out.segments[1] = score_segment("in", slice(p, in_first, in_last), slice(y, in_first, in_last), in_first, weights);
  out.segments[2] = score_segment("after", slice(p, in_last + 1, T), slice(y, in_last + 1, T), in_last + 1, weights);

  const SegmentScore& in = out.segments[1];
  out.s_peak_x = in.peak.x;
  out.s_peak_y = in.peak.y;
  out.s_peak = in.peak.peak;
  out.s_slope = in.deriv.slope;
  out.s_curv = in.deriv.curv;
  out.s_deriv = in.deriv.deriv;
  out.s_before = out.segments[0].distance;
  out.s_in = in.distance;
  out.s_after = out.segments[2].distance;
  out.s_total = combine_segment_distances(weights.w_peak, out.s_before, out.s_in, out.s_after);
  out.similarity = 1.0 / (1.0 + out.s_total);
  return out;
}

TwoVariableBreakdown two_variable_breakdown(const TimeSeries& pred_p, const TimeSeries& pred_q,
                                            const TimeSeries& obs_p, const TimeSeries& obs_q,
                                            const MetricWeights& weights, const MetricOptions& options) {
  const std::size_t n = obs_p.size();
  if (pred_p.size() != n || pred_q.size() != n || obs_q.size() != n) {
    throw Error(ErrorCode::kInvalidParams, "two_variable_score needs four series of equal length");
  }
  TwoVariableBreakdown b;
  b.sim_p = base_metric(pred_p, obs_p, weights, options).similarity;
  b.sim_q = base_metric(pred_q, obs_q, weights, options).similarity;
  b.corr = 1.0 - std::fabs(spearman(obs_p.view(), obs_q.view()) - spearman(pred_p.view(), pred_q.view()));
  b.score = 0.5 * (b.sim_p + b.sim_q) * b.corr;
  return b;
}

double two_variable_score(const TimeSeries& pred_p, const TimeSeries& pred_q, const TimeSeries& obs_p,
                          const TimeSeries& obs_q, const MetricWeights& weights, const MetricOptions& options) {
  return two_variable_breakdown(pred_p, pred_q, obs_p, obs_q, weights, options).score;
}

namespace {

void check_equal(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorCode::kInvalidParams, std::string(what) + " needs two non-empty sequences of equal length");
  }
}

}  // namespace

double mean(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::kInvalidParams, "mean of empty sequence");
  return kernels::sum(values) / static_cast<double>(values.size());
}

double stddev(std::span<const double> values) {
  const double m = mean(values);
  return std::sqrt(kernels::sum_sq_dev(values, m) / static_cast<double>(values.size()));
}

double rmse(std::span<const double> pred, std::span<const double> obs) {
  check_equal(pred, obs, "rmse");
  return std::sqrt(kernels::sum_sq_diff(pred, obs) / static_cast<double>(obs.size()));
}

double mae(std::span<const double> pred, std::span<const double> obs) {
  check_equal(pred, obs, "mae");
  return kernels::sum_abs_diff(pred, obs) / static_cast<double>(obs.size());
}

double nse(std::span<const double> pred, std::span<const double> obs) {
  check_equal(pred, obs, "nse");
  const double ss_tot = kernels::sum_sq_dev(obs, mean(obs));
  if (ss_tot <= 0.0) throw Error(ErrorCode::kDegenerateObservation, "observation variance is zero");
  return 1.0 - kernels::sum_sq_diff(pred, obs) / ss_tot;
}

double r2(std::span<const double> pred, std::span<const double> obs) {
  check_equal(pred, obs, "r2");
  const double ss_obs = kernels::sum_sq_dev(obs, mean(obs));
  if (ss_obs <= 0.0) throw Error(ErrorCode::kDegenerateObservation, "observation variance is zero");
  const double ss_pred = kernels::sum_sq_dev(pred, mean(pred));
  if (ss_pred <= 0.0) return 0.0;  // a constant prediction explains nothing
  const double r = pearson(pred, obs);
  return r * r;
}

std::vector<double> cycle_mean(std::span<const double> values, std::size_t cycle_length) {
  if (cycle_length == 0 || values.size() < cycle_length) {
    throw Error(ErrorCode::kInvalidParams, "cycle_mean needs 0 < cycle_length <= T");
  }
  std::vector<double> sums(cycle_length, 0.0);
  std::vector<double> counts(cycle_length, 0.0);
  for (std::size_t t = 0; t < values.size(); ++t) {
    sums[t % cycle_length] += values[t];
    counts[t % cycle_length] += 1.0;
  }
  for (std::size_t k = 0; k < cycle_length; ++k) sums[k] /= counts[k];
  return sums;
}

IlambScore ilamb_scores(std::span<const double> pred, std::span<const double> obs, const IlambWeights& weights,
                        std::size_t cycle_length) {
  check_equal(pred, obs, "ilamb_scores");
  const double obs_mean = mean(obs);
  const double obs_std = stddev(obs);
  if (obs_mean == 0.0) throw Error(ErrorCode::kDegenerateObservation, "observation mean is zero");
  if (obs_std == 0.0) throw Error(ErrorCode::kDegenerateObservation, "observation standard deviation is zero");
  const double wsum = weights.bias + weights.rmse + weights.seasonal;
  if (!(weights.bias >= 0 && weights.rmse >= 0 && weights.seasonal >= 0) || !(wsum > 0)) {
    throw Error(ErrorCode::kInvalidParams, "ILAMB weights must be non-negative with a positive sum");
  }

  IlambScore s;
  s.bias_score = std::exp(-std::fabs(mean(pred) - obs_mean) / std::fabs(obs_mean));
  s.rmse_score = std::exp(-rmse(pred, obs) / obs_std);
  const std::vector<double> pc = cycle_mean(pred, cycle_length);
  const std::vector<double> oc = cycle_mean(obs, cycle_length);
  s.seasonal_score = std::exp(-rmse(pc, oc) / obs_std);
  s.final_score =
      (weights.bias * s.bias_score + weights.rmse * s.rmse_score + weights.seasonal * s.seasonal_score) / wsum;
  return s;
}

}  // namespace apef
