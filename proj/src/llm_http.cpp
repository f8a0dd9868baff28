#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "apef/error.hpp"
#include "apef/llm.hpp"

namespace apef {

using nlohmann::json;

namespace {

void substitute(json& node, const std::map<std::string, json>& values) {
  if (node.is_string()) {
    std::string s = node.get<std::string>();
    if (auto it = values.find(s); it != values.end()) {
      node = it->second;
      return;
    }
    for (const auto& [key, value] : values) {
      const std::string text = value.is_string() ? value.get<std::string>() : value.dump();
      for (std::size_t at = s.find(key); at != std::string::npos; at = s.find(key, at + text.size())) {
        s.replace(at, key.size(), text);
      }
    }
    node = s;
  } else if (node.is_structured()) {
    for (auto& child : node) substitute(child, values);
  }
}

}  // namespace

json render_body(const HttpAdapterConfig& config, const LlmRequest& request) {
  json body = json::parse(config.body_template, nullptr, false);
  if (body.is_discarded()) throw Error(ErrorCode::kInvalidParams, "body template is not valid JSON");
  const std::map<std::string, json> values{
      {"{{system}}", request.system_text},    {"{{user}}", request.user_text},
      {"{{model}}", config.model},            {"{{temperature}}", request.temperature},
      {"{{max_tokens}}", request.max_tokens},
  };
  substitute(body, values);
  return body;
}

HttpAdapter::HttpAdapter(HttpAdapterConfig config) : config_(std::move(config)) {
  if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
}

std::string HttpAdapter::id() const { return "http:" + config_.model; }

LlmResponse HttpAdapter::complete(const LlmRequest& request) {
  check_request(request);
  const std::string body = render_body(config_, request).dump();
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  std::string last_error;
  int backoff = config_.backoff_ms;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    ++attempts_;
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_s, 0);
    client.set_read_timeout(config_.timeout_s, 0);
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(config_.path, headers, body, "application/json");
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::kTransportError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    const json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::kTransportError, "response body is not JSON");
    const json::json_pointer ptr(config_.response_pointer);
    if (!j.contains(ptr) || !j.at(ptr).is_string()) {
      throw Error(ErrorCode::kTransportError, "response has no string at " + config_.response_pointer);
    }
    std::string text = j.at(ptr).get<std::string>();
    if (text.empty()) throw Error(ErrorCode::kTransportError, "empty completion");
    return {std::move(text), id(), static_cast<std::int64_t>(elapsed)};
  }
  throw Error(ErrorCode::kTransportError,
              "giving up after " + std::to_string(config_.max_retries + 1) + " attempts (" + last_error + ")");
}

}  // namespace apef
