#include "apef/io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "apef/error.hpp"

namespace apef::io {

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_double(const std::string& text, std::size_t line_no) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw Error(ErrorCode::kIoError, "line " + std::to_string(line_no) + ": bad number '" + text + "'");
  }
  return v;
}

}  // namespace

std::vector<TimeSeries> read_series_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIoError, "empty CSV");
  if (trim(line) != "instance_id,variable,t,value") {
    throw Error(ErrorCode::kIoError, "CSV header must be 'instance_id,variable,t,value'");
  }
  std::vector<TimeSeries> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 4) throw Error(ErrorCode::kIoError, "line " + std::to_string(line_no) + ": expected 4 fields");
    const double t = parse_double(fields[2], line_no);
    const double value = parse_double(fields[3], line_no);
    if (out.empty() || out.back().instance_id != fields[0] || out.back().variable != fields[1]) {
      out.push_back(TimeSeries{fields[0], fields[1], {}, "daily"});
    }
    TimeSeries& s = out.back();
    if (t != static_cast<double>(s.values.size() + 1)) {
      throw Error(ErrorCode::kIoError, "line " + std::to_string(line_no) + ": timesteps must run 1..T in order");
    }
    s.values.push_back(value);
  }
  return out;
}

void write_series_csv(std::ostream& out, const std::vector<TimeSeries>& series) {
  out << "instance_id,variable,t,value\n";
  for (const TimeSeries& s : series) {
    for (std::size_t t = 0; t < s.values.size(); ++t) {
      out << s.instance_id << ',' << s.variable << ',' << (t + 1) << ',' << format_double(s.values[t]) << '\n';
    }
  }
}

std::vector<TimeSeries> read_series_json(std::istream& in) {
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, std::string("bad series JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::kIoError, "series JSON must be an array");
  std::vector<TimeSeries> out;
  for (const auto& item : doc) {
    try {
      TimeSeries s;
      s.instance_id = item.at("instance_id").get<std::string>();
      s.variable = item.at("variable").get<std::string>();
      s.values = item.at("values").get<std::vector<double>>();
      s.timestep = item.value("timestep", std::string("daily"));
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kIoError, std::string("bad series entry: ") + e.what());
    }
  }
  return out;
}

void write_series_json(std::ostream& out, const std::vector<TimeSeries>& series) {
  nlohmann::json doc = nlohmann::json::array();
  for (const TimeSeries& s : series) {
    doc.push_back({{"instance_id", s.instance_id}, {"variable", s.variable}, {"timestep", s.timestep}, {"values", s.values}});
  }
  out << doc.dump() << '\n';
}

std::vector<TimeSeries> load_series(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  if (path.extension() == ".json") return read_series_json(in);
  return read_series_csv(in);
}

void save_series(const std::filesystem::path& path, const std::vector<TimeSeries>& series) {
  const std::string ext = path.extension().string();
  if (ext != ".json" && ext != ".csv") throw Error(ErrorCode::kIoError, "unsupported series file " + path.string());
  std::ostringstream out;
  if (ext == ".json") {
    write_series_json(out, series);
  } else {
    write_series_csv(out, series);
  }
  write_text(path, out.str());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
}

}  // namespace apef::io
