#include "apef/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "apef/error.hpp"
#include "apef/rng.hpp"

namespace apef {

std::string to_string(AugmentationKind kind) {
  switch (kind) {
    case AugmentationKind::kNoise: return "noise";
    case AugmentationKind::kSliceShuffle: return "slice_shuffle";
    case AugmentationKind::kMagnitudeWarp: return "magnitude_warp";
    case AugmentationKind::kWindowWarp: return "window_warp";
  }
  return "noise";
}

AugmentationKind augmentation_kind_from_string(const std::string& text) {
  if (text == "noise") return AugmentationKind::kNoise;
  if (text == "slice_shuffle") return AugmentationKind::kSliceShuffle;
  if (text == "magnitude_warp") return AugmentationKind::kMagnitudeWarp;
  if (text == "window_warp") return AugmentationKind::kWindowWarp;
  throw Error(ErrorCode::kInvalidParams, "unknown augmentation kind '" + text + "'");
}

AugmentationSpec default_spec(AugmentationKind kind, const TimeSeries& obs, std::uint64_t seed) {
  AugmentationSpec spec;
  spec.kind = kind;
  spec.seed = seed;
  if (kind == AugmentationKind::kNoise) {
    const double s = stddev(obs.view());
    spec.sigma = s > 0.0 ? 0.1 * s : 0.1;
  }
  if (kind == AugmentationKind::kWindowWarp) {
    Rng rng(splitmix64(seed ^ 0x77696e646f77ULL));
    spec.factor = rng.below(2) == 0 ? 0.5 : 2.0;
  }
  return spec;
}

namespace {

// Linear resampling of values onto `length` evenly spaced points.
std::vector<double> resample(const std::vector<double>& values, std::size_t length) {
  std::vector<double> out(length);
  if (values.size() == 1 || length == 1) {
    std::fill(out.begin(), out.end(), values.front());
    return out;
  }
  const double scale = static_cast<double>(values.size() - 1) / static_cast<double>(length - 1);
  for (std::size_t i = 0; i < length; ++i) {
    const double x = static_cast<double>(i) * scale;
    const auto lo = std::min(static_cast<std::size_t>(x), values.size() - 2);
    const double frac = x - static_cast<double>(lo);
    out[i] = values[lo] + frac * (values[lo + 1] - values[lo]);
  }
  return out;
}

void check_spec(const AugmentationSpec& spec, std::size_t T) {
  auto bad = [](const std::string& msg) { throw Error(ErrorCode::kInvalidParams, msg); };
  switch (spec.kind) {
    case AugmentationKind::kNoise:
      if (!(spec.sigma > 0.0)) bad("noise sigma must be > 0");
      break;
    case AugmentationKind::kSliceShuffle:
      if (spec.slices < 2 || static_cast<std::size_t>(spec.slices) > T) bad("slice count must lie in [2, T]");
      break;
    case AugmentationKind::kMagnitudeWarp:
      if (spec.knots < 2) bad("magnitude warp needs at least 2 knots");
      if (!(spec.envelope_std > 0.0)) bad("envelope std must be > 0");
      break;
    case AugmentationKind::kWindowWarp:
      if (!(spec.window_fraction > 0.0 && spec.window_fraction < 1.0)) bad("window fraction must lie in (0, 1)");
      if (!(spec.factor > 0.0)) bad("window warp factor must be > 0");
      break;
  }
}

}  // namespace

TimeSeries augment(const TimeSeries& obs, const AugmentationSpec& spec) {
  check_series(obs, 3);
  const std::size_t T = obs.size();
  check_spec(spec, T);
  Rng rng(spec.seed);
  TimeSeries out = obs;
  std::vector<double>& v = out.values;

  switch (spec.kind) {
    case AugmentationKind::kNoise:
      for (double& x : v) x += rng.normal(0.0, spec.sigma);
      break;

    case AugmentationKind::kSliceShuffle: {
      const auto k = static_cast<std::size_t>(spec.slices);
      std::vector<std::size_t> order(k);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order.begin(), order.end());
      std::vector<double> shuffled;
      shuffled.reserve(T);
      for (std::size_t s : order) {
        const std::size_t first = s * T / k;
        const std::size_t last = (s + 1) * T / k;
        shuffled.insert(shuffled.end(), obs.values.begin() + first, obs.values.begin() + last);
      }
      v = std::move(shuffled);
      break;
    }

    case AugmentationKind::kMagnitudeWarp: {
      // knots + 2 control points spanning [0, T-1], cosine interpolation
      // between them keeps the envelope smooth and inside the knot range.
      const auto points = static_cast<std::size_t>(spec.knots) + 2;
      std::vector<double> knot_values(points);
      for (double& kv : knot_values) kv = std::max(0.1, rng.normal(1.0, spec.envelope_std));
      const double step = static_cast<double>(T - 1) / static_cast<double>(points - 1);
      for (std::size_t t = 0; t < T; ++t) {
        const double x = static_cast<double>(t) / step;
        const auto lo = std::min(static_cast<std::size_t>(x), points - 2);
        const double frac = x - static_cast<double>(lo);
        const double blend = 0.5 * (1.0 - std::cos(std::numbers::pi * frac));
        v[t] *= knot_values[lo] + blend * (knot_values[lo + 1] - knot_values[lo]);
      }
      break;
    }

    case AugmentationKind::kWindowWarp: {
      const auto window =
          std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(spec.window_fraction * T)), 2, T - 1);
      const std::size_t start = rng.below(T - window + 1);
      const auto warped_len =
          std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(static_cast<double>(window) * spec.factor)));
      const std::vector<double> win(obs.values.begin() + start, obs.values.begin() + start + window);
      const std::vector<double> warped = resample(win, warped_len);
      std::vector<double> stretched(obs.values.begin(), obs.values.begin() + start);
      stretched.insert(stretched.end(), warped.begin(), warped.end());
      stretched.insert(stretched.end(), obs.values.begin() + start + window, obs.values.end());
      v = resample(stretched, T);
      break;
    }
  }
  return out;
}

TimeSeries synthetic_observation(const std::string& variable, std::size_t length, std::uint64_t seed) {
  Rng rng(seed ^ fnv1a64(variable));
  const double phase1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double scale = static_cast<double>(length) / 365.0;
  const double center = 200.0 * scale;
  const double rise_width = 32.0 * scale;
  const double fall_width = 22.0 * scale;

  TimeSeries s{"obs", variable, std::vector<double>(length), "daily"};
  for (std::size_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(i);
    const double width = t < center ? rise_width : fall_width;
    const double z = (t - center) / width;
    const double season = std::exp(-z * z);
    // Growing-season wiggles scale with the envelope; dormant-season ripple
    // stays below the segmentation slope threshold.
    const double wiggle = 0.6 * season * std::sin(2.0 * std::numbers::pi * t / (23.0 * scale) + phase1) +
                          0.02 * std::sin(2.0 * std::numbers::pi * t / (41.0 * scale) + phase2);
    const double gpp = 0.4 + 14.0 * season + wiggle;
    if (variable == "CO2") {
      const double zr = (t - center) / (60.0 * scale);
      const double respiration = 1.2 + 3.0 * std::exp(-zr * zr);
      s.values[i] = respiration - 0.8 * gpp;
    } else {
      s.values[i] = gpp;
    }
  }
  return s;
}

const Candidate& Dataset::candidate(const std::string& id) const {
  for (const Candidate& c : candidates) {
    if (c.id == id) return c;
  }
  throw Error(ErrorCode::kUnknownDataset, "no candidate '" + id + "'");
}

std::vector<std::string> Dataset::variables() const {
  std::vector<std::string> out;
  for (const TimeSeries& o : observations) out.push_back(o.variable);
  return out;
}

namespace {

std::size_t variable_index(const std::vector<TimeSeries>& obs, const std::string& variable) {
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (obs[i].variable == variable) return i;
  }
  throw Error(ErrorCode::kUnknownDataset, "dataset has no variable '" + variable + "'");
}

}  // namespace

std::vector<TimeSeries> Dataset::observations_for(const std::vector<std::string>& variables) const {
  std::vector<TimeSeries> out;
  for (const std::string& v : variables) out.push_back(observations[variable_index(observations, v)]);
  return out;
}

std::vector<TimeSeries> Dataset::predictions_for(const std::string& id, const std::vector<std::string>& variables) const {
  const Candidate& c = candidate(id);
  std::vector<TimeSeries> out;
  for (const std::string& v : variables) out.push_back(c.series.at(variable_index(observations, v)));
  return out;
}

std::vector<std::size_t> split_sizes(std::size_t n, const std::vector<double>& ratios) {
  const double total = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  std::vector<std::size_t> sizes(ratios.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double quota = static_cast<double>(n) * ratios[i] / total;
    sizes[i] = static_cast<std::size_t>(std::floor(quota));
    assigned += sizes[i];
    remainders.emplace_back(quota - std::floor(quota), i);
  }
  // Largest remainder first; earlier buckets win ties.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[remainders[k % remainders.size()].second];
  return sizes;
}

DatasetSplit split_ids(std::vector<std::string> ids, std::uint64_t seed, const std::vector<double>& ratios) {
  if (ratios.size() != 3) throw Error(ErrorCode::kInvalidParams, "split needs three ratios");
  std::sort(ids.begin(), ids.end());
  Rng rng(splitmix64(seed ^ 0x73706c6974ULL));
  rng.shuffle(ids.begin(), ids.end());
  const auto sizes = split_sizes(ids.size(), ratios);
  DatasetSplit split;
  auto it = ids.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
  it += static_cast<std::ptrdiff_t>(sizes[0]);
  split.validation.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
  it += static_cast<std::ptrdiff_t>(sizes[1]);
  split.test.assign(it, ids.end());
  for (auto* part : {&split.train, &split.validation, &split.test}) std::sort(part->begin(), part->end());
  return split;
}

Dataset generate_dataset(const std::vector<TimeSeries>& obs_set, std::size_t n, std::uint64_t seed) {
  if (n < 4) throw Error(ErrorCode::kInvalidParams, "generate_dataset needs n >= 4");
  if (obs_set.empty()) throw Error(ErrorCode::kInvalidParams, "generate_dataset needs at least one observation");
  static constexpr AugmentationKind kKinds[] = {AugmentationKind::kNoise, AugmentationKind::kSliceShuffle,
                                                AugmentationKind::kMagnitudeWarp, AugmentationKind::kWindowWarp};
  Dataset data;
  data.observations = obs_set;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) {
    Candidate c;
    char id[32];
    std::snprintf(id, sizeof(id), "m%02zu", i);
    c.id = id;
    const AugmentationKind kind = kKinds[i % 4];
    for (std::size_t v = 0; v < obs_set.size(); ++v) {
      const std::uint64_t series_seed = splitmix64(splitmix64(seed + i) ^ fnv1a64(obs_set[v].variable));
      AugmentationSpec spec = default_spec(kind, obs_set[v], series_seed);
      TimeSeries series = augment(obs_set[v], spec);
      series.instance_id = c.id;
      c.series.push_back(std::move(series));
      c.specs.push_back(spec);
    }
    ids.push_back(c.id);
    data.candidates.push_back(std::move(c));
  }
  data.split = split_ids(ids, seed);
  return data;
}

std::string to_string(TargetSource source) {
  switch (source) {
    case TargetSource::kPresetWeights: return "preset_weights";
    case TargetSource::kExpertMajority: return "expert_majority";
    case TargetSource::kIlamb: return "ilamb";
  }
  return "preset_weights";
}

TargetSource target_source_from_string(const std::string& text) {
  if (text == "preset_weights") return TargetSource::kPresetWeights;
  if (text == "expert_majority") return TargetSource::kExpertMajority;
  if (text == "ilamb") return TargetSource::kIlamb;
  throw Error(ErrorCode::kInvalidParams, "unknown target source '" + text + "'");
}

std::optional<double> TargetRanking::score_of(const std::string& id) const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == id) return scores[i];
  }
  return std::nullopt;
}

TargetRanking TargetRanking::restrict_to(const std::vector<std::string>& subset) const {
  const std::set<std::string> keep(subset.begin(), subset.end());
  TargetRanking out;
  out.source = source;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (keep.count(ids[i])) {
      out.ids.push_back(ids[i]);
      out.scores.push_back(scores[i]);
    }
  }
  return out;
}

TargetRanking rank_by_scores(const std::map<std::string, double>& scores, TargetSource source) {
  std::vector<std::pair<std::string, double>> items(scores.begin(), scores.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  TargetRanking r;
  r.source = source;
  for (auto& [id, s] : items) {
    r.ids.push_back(id);
    r.scores.push_back(s);
  }
  return r;
}

double score_bundle(const std::vector<TimeSeries>& pred, const std::vector<TimeSeries>& obs,
                    const MetricWeights& weights, const MetricOptions& options) {
  if (pred.size() != obs.size()) throw Error(ErrorCode::kInvalidParams, "prediction/observation variable mismatch");
  if (obs.size() == 1) return base_metric(pred[0], obs[0], weights, options).similarity;
  if (obs.size() == 2) return two_variable_score(pred[0], pred[1], obs[0], obs[1], weights, options);
  throw Error(ErrorCode::kInvalidParams, "scoring supports one or two variables");
}

TargetRanking build_target_ranking(const Dataset& data, const std::vector<std::string>& ids,
                                   const std::vector<std::string>& variables, const MetricWeights& preset,
                                   const MetricOptions& options) {
  if (!weights_valid(preset)) throw Error(ErrorCode::kInvalidWeights, "preset weights violate constraints");
  const std::vector<TimeSeries> obs = data.observations_for(variables);
  std::map<std::string, double> scores;
  for (const std::string& id : ids) scores[id] = score_bundle(data.predictions_for(id, variables), obs, preset, options);
  return rank_by_scores(scores, TargetSource::kPresetWeights);
}

TargetRanking build_ilamb_ranking(const Dataset& data, const std::vector<std::string>& ids, const std::string& variable,
                                  const IlambWeights& weights, std::size_t cycle_length) {
  const TimeSeries obs = data.observations_for({variable}).front();
  std::map<std::string, double> scores;
  for (const std::string& id : ids) {
    const TimeSeries pred = data.predictions_for(id, {variable}).front();
    scores[id] = ilamb_scores(pred.view(), obs.view(), weights, cycle_length).final_score;
  }
  return rank_by_scores(scores, TargetSource::kIlamb);
}

std::vector<IdPair> sample_pairs(const std::vector<std::string>& train, std::size_t count, std::uint64_t seed) {
  if (train.size() < 2) throw Error(ErrorCode::kInvalidParams, "sample_pairs needs at least 2 training ids");
  std::vector<std::string> ids = train;
  std::sort(ids.begin(), ids.end());
  Rng rng(splitmix64(seed ^ 0x7061697273ULL));
  std::vector<IdPair> pairs;
  auto ordered = [&](std::size_t i, std::size_t j) {
    // Randomize which side is shown as A.
    return rng.below(2) == 0 ? IdPair{ids[i], ids[j]} : IdPair{ids[j], ids[i]};
  };

  // Random spanning tree first: shuffle, attach each node to an earlier one.
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  for (std::size_t k = 1; k < order.size() && pairs.size() < count; ++k) {
    pairs.push_back(ordered(order[k], order[rng.below(k)]));
  }
  while (pairs.size() < count) {
    const std::size_t i = rng.below(ids.size());
    std::size_t j = rng.below(ids.size() - 1);
    if (j >= i) ++j;
    pairs.push_back(ordered(i, j));
  }
  rng.shuffle(pairs.begin(), pairs.end());

  auto same = [](const IdPair& x, const IdPair& y) {
    return (x.a == y.a && x.b == y.b) || (x.a == y.b && x.b == y.a);
  };
  auto repeats_at = [&](std::size_t k) {
    return (k > 0 && same(pairs[k], pairs[k - 1])) || (k + 1 < pairs.size() && same(pairs[k], pairs[k + 1]));
  };
  // Break immediate repetitions by swapping with any pair that fits.
  for (std::size_t k = 1; k < pairs.size(); ++k) {
    if (!same(pairs[k], pairs[k - 1])) continue;
    for (std::size_t m = 0; m < pairs.size(); ++m) {
      if (m == k) continue;
      std::swap(pairs[k], pairs[m]);
      if (!repeats_at(k) && !repeats_at(m)) break;
      std::swap(pairs[k], pairs[m]);
    }
  }
  return pairs;
}

}  // namespace apef
