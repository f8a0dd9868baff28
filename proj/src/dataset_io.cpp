#include "apef/dataset_io.hpp"

#include <algorithm>

#include "apef/error.hpp"
#include "apef/io.hpp"
#include "apef/metrics.hpp"

namespace apef {

using nlohmann::json;
namespace fs = std::filesystem;

std::string task_name(const std::vector<std::string>& variables) {
  std::string out;
  for (const auto& v : variables) out += (out.empty() ? "" : "+") + v;
  return out;
}

std::vector<std::string> task_variables(const std::string& task) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t plus = task.find('+', start);
    out.push_back(task.substr(start, plus - start));
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  for (const auto& v : out) {
    if (v.empty()) throw Error(ErrorCode::kInvalidParams, "bad task '" + task + "'");
  }
  return out;
}

json spec_to_json(const AugmentationSpec& s) {
  return {{"kind", to_string(s.kind)},       {"sigma", s.sigma},   {"slices", s.slices},
          {"knots", s.knots},                {"envelope_std", s.envelope_std},
          {"window_fraction", s.window_fraction}, {"factor", s.factor}, {"seed", s.seed}};
}

AugmentationSpec spec_from_json(const json& j) {
  AugmentationSpec s;
  s.kind = augmentation_kind_from_string(j.at("kind").get<std::string>());
  s.sigma = j.value("sigma", s.sigma);
  s.slices = j.value("slices", s.slices);
  s.knots = j.value("knots", s.knots);
  s.envelope_std = j.value("envelope_std", s.envelope_std);
  s.window_fraction = j.value("window_fraction", s.window_fraction);
  s.factor = j.value("factor", s.factor);
  s.seed = j.value("seed", s.seed);
  return s;
}

json target_to_json(const TargetRanking& t) {
  return {{"source", to_string(t.source)}, {"ids", t.ids}, {"scores", t.scores}};
}

TargetRanking target_from_json(const json& j) {
  TargetRanking t;
  t.source = target_source_from_string(j.at("source").get<std::string>());
  t.ids = j.at("ids").get<std::vector<std::string>>();
  t.scores = j.at("scores").get<std::vector<double>>();
  if (t.ids.size() != t.scores.size()) throw Error(ErrorCode::kInvalidParams, "target ids and scores differ in length");
  return t;
}

json split_to_json(const DatasetSplit& s) {
  return {{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

DatasetSplit split_from_json(const json& j) {
  return {j.at("train").get<std::vector<std::string>>(), j.at("validation").get<std::vector<std::string>>(),
          j.at("test").get<std::vector<std::string>>()};
}

void save_dataset(const fs::path& dir, const DatasetBundle& b) {
  json cands = json::array();
  for (const Candidate& c : b.data.candidates) {
    json specs = json::array();
    for (const auto& s : c.specs) specs.push_back(spec_to_json(s));
    const std::string file = "candidates/" + c.id + ".csv";
    io::save_series(dir / file, c.series);
    cands.push_back({{"id", c.id}, {"file", file}, {"specs", specs}});
  }
  io::save_series(dir / "obs.csv", b.data.observations);
  json targets = json::object();
  for (const auto& [k, t] : b.targets) targets[k] = target_to_json(t);
  const json manifest = {{"format", 1},
                         {"seed", b.seed},
                         {"scenario", b.scenario},
                         {"obs", "obs.csv"},
                         {"variables", b.data.variables()},
                         {"candidates", cands},
                         {"split", split_to_json(b.data.split)},
                         {"targets", targets}};
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

DatasetBundle load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw Error(ErrorCode::kUnknownDataset, "no manifest.json in " + dir.string());
  json m;
  try {
    m = json::parse(io::read_text(mpath));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kUnknownDataset, "unreadable manifest " + mpath.string() + ": " + e.what());
  }
  DatasetBundle b;
  try {
    b.seed = m.value("seed", std::uint64_t{0});
    b.scenario = m.value("scenario", std::string{});
    b.data.observations = io::load_series(dir / m.at("obs").get<std::string>());
    for (const json& c : m.at("candidates")) {
      Candidate cand;
      cand.id = c.at("id").get<std::string>();
      const auto all = io::load_series(dir / c.at("file").get<std::string>());
      // keep the observation order
      for (const auto& o : b.data.observations) {
        const auto it = std::find_if(all.begin(), all.end(), [&](const TimeSeries& s) { return s.variable == o.variable; });
        if (it == all.end()) {
          throw Error(ErrorCode::kUnknownDataset, "candidate " + cand.id + " lacks variable " + o.variable);
        }
        cand.series.push_back(*it);
      }
      const json specs = c.value("specs", json::array());
      for (const json& s : specs) cand.specs.push_back(spec_from_json(s));
      b.data.candidates.push_back(std::move(cand));
    }
    b.data.split = split_from_json(m.at("split"));
    const json targets = m.value("targets", json::object());
    for (const auto& [k, t] : targets.items()) b.targets[k] = target_from_json(t);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kUnknownDataset, "malformed manifest " + mpath.string() + ": " + e.what());
  }
  return b;
}

DatasetBundle synthetic_bundle(std::size_t n, std::uint64_t seed, const std::string& scenario, std::size_t length) {
  DatasetBundle b;
  b.seed = seed;
  b.scenario = scenario;
  b.data = generate_dataset({synthetic_observation("GPP", length, seed), synthetic_observation("CO2", length, seed)}, n,
                            seed);
  std::vector<std::string> ids;
  for (const auto& c : b.data.candidates) ids.push_back(c.id);
  const std::pair<const char*, MetricWeights> presets[] = {
      {"preset_peak", preset_peak()}, {"preset_deriv", preset_deriv()}, {"preset_amp", preset_amp()}};
  for (const std::vector<std::string>& vars :
       {std::vector<std::string>{"GPP"}, std::vector<std::string>{"CO2"}, std::vector<std::string>{"GPP", "CO2"}}) {
    for (const auto& [name, w] : presets) {
      b.targets[std::string(name) + "/" + task_name(vars)] = build_target_ranking(b.data, ids, vars, w);
    }
    if (vars.size() == 1) {
      b.targets["ilamb/" + vars[0]] = build_ilamb_ranking(b.data, ids, vars[0], {}, length);
    }
  }
  return b;
}

}  // namespace apef
