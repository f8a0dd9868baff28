#include "apef/llm.hpp"

#include <cmath>
#include <ctime>

#include "apef/error.hpp"
#include "apef/io.hpp"

namespace apef {

using nlohmann::json;

std::string to_string(RequestTag tag) {
  switch (tag) {
    case RequestTag::kWeightUpdate: return "weight_update";
    case RequestTag::kPolicyExtraction: return "policy_extraction";
    case RequestTag::kPolicyEvaluation: return "policy_evaluation";
    case RequestTag::kPrpRank: return "prp_rank";
  }
  return "weight_update";
}

RequestTag request_tag_from_string(const std::string& text) {
  for (auto t : {RequestTag::kWeightUpdate, RequestTag::kPolicyExtraction, RequestTag::kPolicyEvaluation,
                 RequestTag::kPrpRank}) {
    if (to_string(t) == text) return t;
  }
  throw Error(ErrorCode::kParseFailure, "unknown request tag '" + text + "'");
}

double default_temperature(RequestTag tag) { return tag == RequestTag::kPolicyExtraction ? 0.7 : 0.0; }

void check_request(const LlmRequest& request) {
  if (request.user_text.empty()) throw Error(ErrorCode::kInvalidParams, "request user_text is empty");
  if (!(request.temperature >= 0.0 && request.temperature <= 2.0)) {
    throw Error(ErrorCode::kInvalidParams, "temperature must lie in [0, 2]");
  }
}

namespace {

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

TranscriptWriter::TranscriptWriter(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  out_.open(path_, std::ios::app | std::ios::binary);
  if (!out_) throw Error(ErrorCode::kIoError, "cannot open transcript " + path_.string());
}

void TranscriptWriter::append(const LlmRequest& request, const LlmResponse& response) {
  json line = {
      {"tag", to_string(request.tag)},
      {"request",
       {{"system", request.system_text},
        {"user", request.user_text},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens}}},
      {"response", {{"text", response.text}, {"adapter_id", response.adapter_id}, {"latency_ms", response.latency_ms}}},
      {"timestamp", utc_now()},
  };
  const std::string text = line.dump() + "\n";
  std::lock_guard lock(mu_);
  out_ << text;
  out_.flush();
}

ScriptedAdapter::ScriptedAdapter(std::vector<ScriptEntry> entries, std::string id)
    : entries_(std::move(entries)), id_(std::move(id)) {}

ScriptedAdapter ScriptedAdapter::from_transcript(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open transcript " + path.string());
  std::vector<ScriptEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("tag") || !j.contains("response")) {
      throw Error(ErrorCode::kParseFailure, path.string() + ":" + std::to_string(lineno) + ": bad transcript line");
    }
    entries.push_back({request_tag_from_string(j.at("tag").get<std::string>()),
                       j.at("response").at("text").get<std::string>()});
  }
  return ScriptedAdapter(std::move(entries));
}

ScriptedAdapter ScriptedAdapter::from_file(const std::filesystem::path& path) {
  if (path.extension() == ".jsonl") return from_transcript(path);
  const json j = json::parse(io::read_text(path), nullptr, false);
  if (!j.is_array()) throw Error(ErrorCode::kParseFailure, path.string() + ": script must be a JSON array");
  std::vector<ScriptEntry> entries;
  for (const json& e : j) {
    entries.push_back({request_tag_from_string(e.at("tag").get<std::string>()), e.at("text").get<std::string>()});
  }
  return ScriptedAdapter(std::move(entries));
}

LlmResponse ScriptedAdapter::complete(const LlmRequest& request) {
  check_request(request);
  if (cursor_ >= entries_.size()) {
    throw Error(ErrorCode::kScriptExhausted,
                "script exhausted after " + std::to_string(entries_.size()) + " entries");
  }
  const ScriptEntry& e = entries_[cursor_];
  if (e.tag != request.tag) {
    throw Error(ErrorCode::kTagMismatch, "script entry " + std::to_string(cursor_) + " is " + to_string(e.tag) +
                                             ", request is " + to_string(request.tag));
  }
  ++cursor_;
  return {e.text, id_, 0};
}

RecordingAdapter::RecordingAdapter(LlmAdapter& inner, std::shared_ptr<TranscriptWriter> writer)
    : inner_(inner), writer_(std::move(writer)) {}

LlmResponse RecordingAdapter::complete(const LlmRequest& request) {
  LlmResponse r = inner_.complete(request);
  if (writer_) writer_->append(request, r);
  return r;
}

std::vector<json> json_objects_in(const std::string& text) {
  std::vector<json> out;
  std::size_t pos = 0;
  while ((pos = text.find('{', pos)) != std::string::npos) {
    // find the matching close brace, skipping string literals
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t end = std::string::npos;
    for (std::size_t k = pos; k < text.size(); ++k) {
      const char c = text[k];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}' && --depth == 0) {
        end = k;
        break;
      }
    }
    if (end == std::string::npos) {
      ++pos;
      continue;
    }
    json j = json::parse(text.begin() + static_cast<std::ptrdiff_t>(pos),
                         text.begin() + static_cast<std::ptrdiff_t>(end) + 1, nullptr, false);
    if (!j.is_discarded() && j.is_object()) {
      out.push_back(std::move(j));
      pos = end + 1;
    } else {
      ++pos;
    }
  }
  return out;
}

namespace {

bool has_weight_keys(const json& j) {
  for (const char* k : {"w_peak", "w_der", "w_amp", "tolerance"}) {
    if (!j.contains(k) || !j.at(k).is_number()) return false;
  }
  return true;
}

const json* find_weights(const json& j) {
  if (has_weight_keys(j)) return &j;
  for (const auto& [key, value] : j.items()) {
    if (value.is_object()) {
      if (const json* hit = find_weights(value)) return hit;
    }
  }
  return nullptr;
}

}  // namespace

MetricWeights parse_weight_response(const std::string& text) {
  for (const json& j : json_objects_in(text)) {
    if (const json* w = find_weights(j)) {
      return {w->at("w_peak").get<double>(), w->at("w_der").get<double>(), w->at("w_amp").get<double>(),
              w->at("tolerance").get<double>()};
    }
  }
  throw Error(ErrorCode::kParseFailure, "no JSON object with w_peak, w_der, w_amp and tolerance in response");
}

std::string serialize_weights(const MetricWeights& w) {
  return json{{"w_peak", w.w_peak}, {"w_der", w.w_der}, {"w_amp", w.w_amp}, {"tolerance", w.tolerance}}.dump();
}

}  // namespace apef
