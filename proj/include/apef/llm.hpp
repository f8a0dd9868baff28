#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "apef/metrics.hpp"

namespace apef {

enum class RequestTag { kWeightUpdate, kPolicyExtraction, kPolicyEvaluation, kPrpRank };

std::string to_string(RequestTag tag);
RequestTag request_tag_from_string(const std::string& text);

// Temperature defaults per tag: 0 where the answer gets parsed, 0.7 for
// policy synthesis.
double default_temperature(RequestTag tag);

struct LlmRequest {
  std::string system_text;
  std::string user_text;
  double temperature = 0.0;
  int max_tokens = 2048;
  RequestTag tag = RequestTag::kWeightUpdate;
};

struct LlmResponse {
  std::string text;
  std::string adapter_id;
  std::int64_t latency_ms = 0;
};

// Throws Error(kInvalidParams) on an empty user_text or temperature outside [0, 2].
void check_request(const LlmRequest& request);

class LlmAdapter {
 public:
  virtual ~LlmAdapter() = default;
  virtual LlmResponse complete(const LlmRequest& request) = 0;
  virtual std::string id() const = 0;
};

// Appends one JSON line per exchange. Safe to share between threads.
class TranscriptWriter {
 public:
  explicit TranscriptWriter(std::filesystem::path path);
  void append(const LlmRequest& request, const LlmResponse& response);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
  std::ofstream out_;
};

struct ScriptEntry {
  RequestTag tag = RequestTag::kWeightUpdate;
  std::string text;
};

// Replays canned responses in order. Single consumer.
class ScriptedAdapter : public LlmAdapter {
 public:
  explicit ScriptedAdapter(std::vector<ScriptEntry> entries, std::string id = "scripted");
  // Responses of a recorded transcript, in file order.
  static ScriptedAdapter from_transcript(const std::filesystem::path& path);
  // Script file: JSON array of {tag, text}, or a transcript (.jsonl).
  static ScriptedAdapter from_file(const std::filesystem::path& path);

  LlmResponse complete(const LlmRequest& request) override;
  std::string id() const override { return id_; }
  std::size_t consumed() const { return cursor_; }
  std::size_t remaining() const { return entries_.size() - cursor_; }

 private:
  std::vector<ScriptEntry> entries_;
  std::size_t cursor_ = 0;
  std::string id_;
};

// Chat-completion style client. The body template is a JSON document whose
// string values "{{system}}", "{{user}}", "{{model}}", "{{temperature}}" and
// "{{max_tokens}}" are replaced (numbers stay numbers).
struct HttpAdapterConfig {
  std::string base_url = "https://api.openai.com";  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model = "o3-mini";
  std::string body_template = R"({"model":"{{model}}","messages":[{"role":"system","content":"{{system}}"},)"
                              R"({"role":"user","content":"{{user}}"}],"temperature":"{{temperature}}",)"
                              R"("max_tokens":"{{max_tokens}}"})";
  std::string response_pointer = "/choices/0/message/content";
  std::string api_key_env = "APEF_LLM_API_KEY";
  int max_retries = 3;
  int backoff_ms = 500;  // doubled after each failed attempt
  int timeout_s = 120;
};

nlohmann::json render_body(const HttpAdapterConfig& config, const LlmRequest& request);

class HttpAdapter : public LlmAdapter {
 public:
  explicit HttpAdapter(HttpAdapterConfig config);
  LlmResponse complete(const LlmRequest& request) override;
  std::string id() const override;
  int attempts_made() const { return attempts_; }

 private:
  HttpAdapterConfig config_;
  std::string api_key_;
  int attempts_ = 0;
};

// Decorator that writes every exchange of the inner adapter to a transcript.
class RecordingAdapter : public LlmAdapter {
 public:
  RecordingAdapter(LlmAdapter& inner, std::shared_ptr<TranscriptWriter> writer);
  LlmResponse complete(const LlmRequest& request) override;
  std::string id() const override { return inner_.id(); }

 private:
  LlmAdapter& inner_;
  std::shared_ptr<TranscriptWriter> writer_;
};

// Every balanced {...} in text that parses as a JSON object, outermost
// first, in order of appearance.
std::vector<nlohmann::json> json_objects_in(const std::string& text);

// First JSON object carrying w_peak, w_der, w_amp and tolerance as numbers.
// No range checks here. Throws Error(kParseFailure).
MetricWeights parse_weight_response(const std::string& text);
std::string serialize_weights(const MetricWeights& w);

}  // namespace apef
