#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "apef/error.hpp"
#include "apef/io.hpp"
#include "apef/llm.hpp"
#include "apef/rng.hpp"

using namespace apef;

namespace {

LlmRequest weight_request(std::string user = "hello") {
  LlmRequest r;
  r.user_text = std::move(user);
  r.tag = RequestTag::kWeightUpdate;
  return r;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected apef::Error");
  return ErrorCode::kIoError;
}

// Local server on an ephemeral port, stopped on scope exit.
struct StubServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;

  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

TEST_CASE("scripted adapter replays, then runs dry") {
  ScriptedAdapter a({{RequestTag::kWeightUpdate, "{\"w_peak\":0.8}"}});
  CHECK(a.complete(weight_request()).text == "{\"w_peak\":0.8}");
  CHECK(code_of([&] { a.complete(weight_request()); }) == ErrorCode::kScriptExhausted);
}

TEST_CASE("scripted adapter checks the request tag") {
  ScriptedAdapter a({{RequestTag::kPolicyExtraction, "x"}});
  CHECK(code_of([&] { a.complete(weight_request()); }) == ErrorCode::kTagMismatch);
  // cursor did not move
  LlmRequest r = weight_request();
  r.tag = RequestTag::kPolicyExtraction;
  CHECK(a.complete(r).text == "x");
}

TEST_CASE("request validation") {
  ScriptedAdapter a({{RequestTag::kWeightUpdate, "x"}});
  CHECK(code_of([&] { a.complete(weight_request("")); }) == ErrorCode::kInvalidParams);
  LlmRequest hot = weight_request();
  hot.temperature = 2.5;
  CHECK(code_of([&] { a.complete(hot); }) == ErrorCode::kInvalidParams);
  CHECK(default_temperature(RequestTag::kWeightUpdate) == 0.0);
  CHECK(default_temperature(RequestTag::kPolicyExtraction) == 0.7);
}

TEST_CASE("transcript record and replay") {
  const auto path = std::filesystem::temp_directory_path() / "apef_transcript_test.jsonl";
  std::filesystem::remove(path);
  {
    ScriptedAdapter inner({{RequestTag::kWeightUpdate, "one"}, {RequestTag::kPrpRank, "two \"quoted\"\nline"}});
    RecordingAdapter rec(inner, std::make_shared<TranscriptWriter>(path));
    rec.complete(weight_request());
    LlmRequest r = weight_request();
    r.tag = RequestTag::kPrpRank;
    rec.complete(r);
  }
  ScriptedAdapter replay = ScriptedAdapter::from_transcript(path);
  CHECK(replay.remaining() == 2);
  CHECK(replay.complete(weight_request()).text == "one");
  LlmRequest r = weight_request();
  r.tag = RequestTag::kPrpRank;
  CHECK(replay.complete(r).text == "two \"quoted\"\nline");
  std::filesystem::remove(path);
}

TEST_CASE("transcript writer serializes concurrent appends") {
  const auto path = std::filesystem::temp_directory_path() / "apef_transcript_mt.jsonl";
  std::filesystem::remove(path);
  {
    auto writer = std::make_shared<TranscriptWriter>(path);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&, t] {
        for (int k = 0; k < 50; ++k) writer->append(weight_request("t" + std::to_string(t)), {std::string(500, 'x'), "s", 0});
      });
    }
    for (auto& th : threads) th.join();
  }
  CHECK(ScriptedAdapter::from_transcript(path).remaining() == 200);
  std::filesystem::remove(path);
}

TEST_CASE("parse_weight_response") {
  const MetricWeights w = parse_weight_response(R"({"w_peak":0.8,"w_der":0.1,"w_amp":0.1,"tolerance":5})");
  CHECK(w == MetricWeights{0.8, 0.1, 0.1, 5});
  const std::string chatty =
      "Peaks matter more here {not json}.\n```json\n{\"w_peak\": 0.8, \"w_der\": 0.1, \"w_amp\": 0.1, "
      "\"tolerance\": 5}\n```\nThat should help.";
  CHECK(parse_weight_response(chatty) == w);
  // nested inside a wrapper object
  CHECK(parse_weight_response(R"({"weights":{"w_peak":0.8,"w_der":0.1,"w_amp":0.1,"tolerance":5},"why":"}"})") == w);
  // first complete object wins
  CHECK(parse_weight_response(R"({"w_peak":0.5,"w_der":0.2,"w_amp":0.3,"tolerance":2} {"w_peak":0.8,"w_der":0.1,"w_amp":0.1,"tolerance":5})")
            .w_peak == 0.5);
  CHECK(code_of([] { parse_weight_response("no json at all"); }) == ErrorCode::kParseFailure);
  CHECK(code_of([] { parse_weight_response(R"({"w_peak":0.8,"w_der":0.1})"); }) == ErrorCode::kParseFailure);
  CHECK(code_of([] { parse_weight_response(R"({"w_peak":"high","w_der":0.1,"w_amp":0.1,"tolerance":5})"); }) ==
        ErrorCode::kParseFailure);
}

TEST_CASE("parse_weight_response inverts serialize_weights") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const MetricWeights w{rng.uniform(), rng.uniform(), rng.uniform(), 1 + 9 * rng.uniform()};
    CHECK(parse_weight_response(serialize_weights(w)) == w);
    CHECK(parse_weight_response("prose " + serialize_weights(w) + " more prose") == w);
  }
}

TEST_CASE("body template substitution keeps types and escapes text") {
  HttpAdapterConfig c;
  c.model = "m";
  LlmRequest r = weight_request("say \"hi\"\n");
  r.system_text = "sys";
  r.temperature = 0.7;
  r.max_tokens = 99;
  const auto body = render_body(c, r);
  CHECK(body["model"] == "m");
  CHECK(body["messages"][0]["content"] == "sys");
  CHECK(body["messages"][1]["content"] == "say \"hi\"\n");
  CHECK(body["temperature"] == 0.7);
  CHECK(body["max_tokens"] == 99);
  c.body_template = R"({"prompt":"[{{system}}] {{user}}"})";
  CHECK(render_body(c, r)["prompt"] == "[sys] say \"hi\"\n");
}

TEST_CASE("http adapter against a local stub") {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    const auto body = nlohmann::json::parse(req.body);
    const std::string reply = "echo: " + body["messages"][1]["content"].get<std::string>();
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", reply}}}}}}}.dump(), "application/json");
  });
  stub.start();
  HttpAdapterConfig c;
  c.base_url = stub.url();
  c.backoff_ms = 1;
  HttpAdapter a(c);
  const LlmResponse r = a.complete(weight_request("ping"));
  CHECK(r.text == "echo: ping");
  CHECK(r.latency_ms >= 0);
  CHECK(r.adapter_id == "http:o3-mini");
  CHECK(calls == 1);
}

TEST_CASE("http adapter retries transient failures then gives up") {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server.Post("/flaky", [&](const httplib::Request&, httplib::Response& res) {
    if (++calls < 3) {
      res.status = 503;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"ok"}}]})", "application/json");
  });
  stub.server.Post("/down", [&](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  stub.server.Post("/bad", [&](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  stub.start();
  HttpAdapterConfig c;
  c.base_url = stub.url();
  c.backoff_ms = 1;
  c.path = "/flaky";
  CHECK(HttpAdapter(c).complete(weight_request()).text == "ok");
  CHECK(calls == 3);

  c.path = "/down";
  HttpAdapter down(c);
  CHECK(code_of([&] { down.complete(weight_request()); }) == ErrorCode::kTransportError);
  CHECK(down.attempts_made() == 4);

  c.path = "/bad";
  HttpAdapter bad(c);
  CHECK(code_of([&] { bad.complete(weight_request()); }) == ErrorCode::kTransportError);
  CHECK(bad.attempts_made() == 1);
}

TEST_CASE("http adapter reports an unreachable host") {
  HttpAdapterConfig c;
  c.base_url = "http://127.0.0.1:1";
  c.backoff_ms = 1;
  c.timeout_s = 1;
  HttpAdapter a(c);
  CHECK(code_of([&] { a.complete(weight_request()); }) == ErrorCode::kTransportError);
  CHECK(a.attempts_made() == 4);
}
