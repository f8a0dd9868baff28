#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "apef/series.hpp"

namespace apef::io {

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// CSV: header `instance_id,variable,t,value`, one row per timestep, t is
// 1-based. Rows of one (instance_id, variable) must be contiguous with
// t = 1..T in order.
std::vector<TimeSeries> read_series_csv(std::istream& in);
void write_series_csv(std::ostream& out, const std::vector<TimeSeries>& series);

// JSON: array of {instance_id, variable, values[]} (timestep optional).
std::vector<TimeSeries> read_series_json(std::istream& in);
void write_series_json(std::ostream& out, const std::vector<TimeSeries>& series);

// Dispatches on the extension (.csv or .json).
std::vector<TimeSeries> load_series(const std::filesystem::path& path);
void save_series(const std::filesystem::path& path, const std::vector<TimeSeries>& series);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace apef::io
