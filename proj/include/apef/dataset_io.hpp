#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "apef/datagen.hpp"

namespace apef {

// A dataset directory: manifest.json, obs.csv and candidates/<id>.csv.
// Targets are keyed "<scenario>/<task>", e.g. "preset_peak/GPP+CO2".
struct DatasetBundle {
  Dataset data;
  std::map<std::string, TargetRanking> targets;
  std::uint64_t seed = 0;
  std::string scenario;  // default scenario recorded by `apef gen`
};

std::string task_name(const std::vector<std::string>& variables);
std::vector<std::string> task_variables(const std::string& task);

nlohmann::json spec_to_json(const AugmentationSpec& s);
AugmentationSpec spec_from_json(const nlohmann::json& j);
nlohmann::json target_to_json(const TargetRanking& t);
TargetRanking target_from_json(const nlohmann::json& j);
nlohmann::json split_to_json(const DatasetSplit& s);
DatasetSplit split_from_json(const nlohmann::json& j);

void save_dataset(const std::filesystem::path& dir, const DatasetBundle& bundle);
// Throws Error(kUnknownDataset) when dir holds no manifest.
DatasetBundle load_dataset(const std::filesystem::path& dir);

// Synthetic GPP + CO2 scenario: n candidates, the preset and ILAMB targets
// for every task.
DatasetBundle synthetic_bundle(std::size_t n, std::uint64_t seed, const std::string& scenario = "preset_peak",
                               std::size_t length = 365);

}  // namespace apef
