#include <doctest.h>

#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "apef/annotation.hpp"
#include "apef/dataset_io.hpp"
#include "apef/error.hpp"
#include "apef/io.hpp"
#include "oracles.hpp"

using namespace apef;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected apef::Error");
  return ErrorCode::kIoError;
}

const Dataset& data() {
  static const Dataset d = synthetic_bundle(20, 11, "preset_peak", 120).data;
  return d;
}

std::map<std::string, Dataset> datasets() { return {{"synthetic", data()}}; }

struct TempJournal {
  fs::path dir;
  fs::path path;
  explicit TempJournal(const std::string& name) {
    dir = fs::temp_directory_path() / ("apef_ann_" + name);
    fs::remove_all(dir);
    path = dir / "journal.jsonl";
  }
  ~TempJournal() { fs::remove_all(dir); }
  std::vector<json> records() const {
    std::vector<json> out;
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
    return out;
  }
  std::size_t votes() const {
    std::size_t n = 0;
    for (const auto& r : records()) n += r.at("type") == "vote";
    return n;
  }
};

}  // namespace

TEST_CASE("sessions queue every training pair") {
  TempJournal j("sessions");
  AnnotationStore store(datasets(), j.path);
  const AnnotationSession s = store.create_session("GPP", "alice");
  CHECK(s.queue.size() == 45);
  CHECK(std::set<std::string>(s.queue.begin(), s.queue.end()).size() == 45);
  CHECK(store.create_session("GPP", "alice").session_id == s.session_id);

  const AnnotationSession t = store.create_session("GPP", "bob");
  CHECK(t.session_id != s.session_id);
  CHECK(std::set<std::string>(t.queue.begin(), t.queue.end()) == std::set<std::string>(s.queue.begin(), s.queue.end()));
  CHECK(t.queue != s.queue);
  CHECK(store.create_session("GPP+CO2", "alice").session_id != s.session_id);

  CHECK(code_of([&] { store.create_session("GPP", "alice", "nope"); }) == ErrorCode::kUnknownDataset);
  CHECK(code_of([&] { store.create_session("LAI", "alice"); }) == ErrorCode::kInvalidParams);
  CHECK(code_of([&] { store.session("s0"); }) == ErrorCode::kUnknownSession);
}

TEST_CASE("next pair, votes and resume") {
  TempJournal j("votes");
  std::string sid;
  std::vector<std::string> remaining;
  {
    AnnotationStore store(datasets(), j.path);
    const AnnotationSession s = store.create_session("GPP+CO2", "alice");
    sid = s.session_id;
    json p = store.next_pair(sid);
    CHECK(p.at("pair_id") == s.queue.front());
    CHECK(p.at("progress").at("total") == 45);
    for (const char* v : {"GPP", "CO2"}) {
      const std::size_t n = p.at("obs").at(v).size();
      CHECK(p.at("a").at(v).size() == n);
      CHECK(p.at("b").at(v).size() == n);
      CHECK(p.at("t").size() == n);
    }
    CHECK(store.record_vote(sid, s.queue[0], Preference::kA).stored);
    CHECK_FALSE(store.record_vote(sid, s.queue[0], Preference::kA).stored);
    CHECK(code_of([&] { store.record_vote(sid, s.queue[0], Preference::kB); }) == ErrorCode::kAlreadyVoted);
    CHECK(code_of([&] { store.record_vote(sid, "m98~m99", Preference::kB); }) == ErrorCode::kUnknownPair);
    CHECK(code_of([&] { store.record_vote("s123", s.queue[1], Preference::kB); }) == ErrorCode::kUnknownSession);
    // votes need not follow the queue
    CHECK(store.record_vote(sid, s.queue[5], Preference::kB).done == 2);
    CHECK(store.next_pair(sid).at("pair_id") == s.queue[1]);
    for (std::size_t k = 1; k < s.queue.size(); ++k) {
      if (k != 5) remaining.push_back(s.queue[k]);
    }
  }
  CHECK(j.votes() == 2);
  AnnotationStore reopened(datasets(), j.path);
  const AnnotationSession s = reopened.session(sid);
  std::vector<std::string> left;
  for (const auto& pid : s.queue) {
    if (!s.votes.count(pid)) left.push_back(pid);
  }
  CHECK(left == remaining);
  for (const auto& pid : left) reopened.record_vote(sid, pid, Preference::kB);
  const json done = reopened.next_pair(sid);
  CHECK(done.at("done") == true);
  CHECK(done.at("progress").at("done") == 45);
  CHECK(j.votes() == 45);
}

TEST_CASE("crash after the journal write loses and duplicates nothing") {
  TempJournal j("crash");
  std::string sid;
  std::vector<std::string> queue;
  {
    AnnotationStore store(datasets(), j.path);
    const auto s = store.create_session("GPP", "carol");
    sid = s.session_id;
    queue = s.queue;
  }
  std::map<std::string, Preference> submitted;
  int crashes = 0;
  std::size_t k = 0;
  while (k < queue.size()) {
    AnnotationStore store(datasets(), j.path);
    // every other vote crashes, until 20 crashes have happened
    bool crash_next = crashes < 20;
    store.after_journal_write = [&] {
      if (crash_next) {
        crash_next = false;
        ++crashes;
        throw std::runtime_error("injected crash");
      }
    };
    const Preference c = k % 3 ? Preference::kA : Preference::kB;
    try {
      store.record_vote(sid, queue[k], c);
      submitted[queue[k]] = c;
      ++k;
    } catch (const std::runtime_error&) {
      submitted[queue[k]] = c;
      // the dead store refuses further writes
      CHECK(code_of([&] { store.record_vote(sid, queue[k], c); }) == ErrorCode::kIoError);
      // client retries against a restarted store
      AnnotationStore restarted(datasets(), j.path);
      CHECK_FALSE(restarted.record_vote(sid, queue[k], c).stored);
      ++k;
    }
  }
  CHECK(crashes == 20);
  AnnotationStore final_store(datasets(), j.path);
  const auto s = final_store.session(sid);
  CHECK(s.votes == submitted);
  CHECK(j.votes() == queue.size());
  std::set<std::string> seen;
  for (const auto& r : j.records()) {
    if (r.at("type") == "vote") CHECK(seen.insert(r.at("pair_id").get<std::string>()).second);
  }
}

TEST_CASE("a torn final record is dropped on restart") {
  TempJournal j("torn");
  std::string sid, first;
  {
    AnnotationStore store(datasets(), j.path);
    const auto s = store.create_session("CO2", "dave");
    sid = s.session_id;
    first = s.queue[0];
    store.record_vote(sid, first, Preference::kA);
  }
  {
    std::ofstream out(j.path, std::ios::app);
    out << R"({"type":"vote","session_id":")" << sid << R"(","pair_id":"m0)";
  }
  AnnotationStore store(datasets(), j.path);
  CHECK(store.vote_count() == 1);
  store.record_vote(sid, store.session(sid).queue[1], Preference::kB);
  CHECK(j.votes() == 2);
}

namespace {

void vote_all(AnnotationStore& store, const std::string& task, const std::string& rater,
              const std::function<Preference(const std::string&)>& choose) {
  const auto s = store.create_session(task, rater);
  for (const auto& pid : s.queue) store.record_vote(s.session_id, pid, choose(pid));
}

}  // namespace

TEST_CASE("export feeds majority voting") {
  TempJournal j("export");
  AnnotationStore store(datasets(), j.path);
  // unanimous: prefer the smaller id except on pairs with m1x ids
  auto rule = [](const std::string& pid) { return pid.find("m1") != std::string::npos ? Preference::kB : Preference::kA; };
  for (const char* r : {"r1", "r2", "r3"}) vote_all(store, "GPP", r, rule);
  const json ex = store.export_annotations("GPP");
  CHECK(ex.at("report").at("kappa") == 1.0);
  CHECK(ex.at("report").at("pairs") == 45);
  CHECK(ex.at("report").at("votes") == 135);

  std::vector<Annotation> imported;
  const json reparsed = json::parse(ex.dump());
  for (const json& a : reparsed.at("annotations")) imported.push_back(annotation_from_json(a));
  const MajorityResult via_export = majority_vote(imported);

  std::vector<Annotation> direct;
  for (const auto& p : training_pairs(data())) {
    for (const char* r : {"r1", "r2", "r3"}) direct.push_back({p.pair_id, p.id_a, p.id_b, r, "GPP", rule(p.pair_id)});
  }
  const MajorityResult in_process = majority_vote(direct);
  CHECK(via_export.ranking == in_process.ranking);
  CHECK(via_export.labels == in_process.labels);
  CHECK(via_export.kappa == in_process.kappa);

  const json empty = store.export_annotations("CO2");
  CHECK(empty.at("annotations").empty());
  CHECK(empty.at("report").at("pairs") == 0);
  CHECK(empty.at("report").at("kappa").is_null());

  AnnotationStore again(datasets(), j.path);
  CHECK(again.export_annotations("GPP").dump() == ex.dump());
}

TEST_CASE("split raters give the oracle kappa") {
  TempJournal j("kappa");
  AnnotationStore store(datasets(), j.path);
  vote_all(store, "GPP", "r1", [](const std::string& p) { return p.back() < '5' ? Preference::kA : Preference::kB; });
  vote_all(store, "GPP", "r2", [](const std::string& p) { return p.back() < '3' ? Preference::kA : Preference::kB; });
  vote_all(store, "GPP", "r3", [](const std::string& p) { return p[2] < '1' ? Preference::kA : Preference::kB; });
  const json ex = store.export_annotations("GPP");
  std::map<std::string, std::vector<int>> counts;
  for (const auto& a : ex.at("annotations")) {
    auto& c = counts.try_emplace(a.at("pair_id").get<std::string>(), std::vector<int>{0, 0}).first->second;
    ++c[a.at("choice") == "A" ? 0 : 1];
  }
  std::vector<std::vector<int>> m;
  for (const auto& [k, v] : counts) m.push_back(v);
  CHECK(std::fabs(ex.at("report").at("kappa").get<double>() - oracle::fleiss_kappa(m)) <= 1e-12);
}

namespace {

struct LiveServer {
  AnnotationStore& store;
  AnnotationServer server;
  int port = -1;
  std::thread thread;
  LiveServer(AnnotationStore& s, std::string token = "", const fs::path& static_dir = {})
      : store(s), server(s, std::move(token)) {
    if (!static_dir.empty()) REQUIRE(server.mount_static(static_dir));
    port = server.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    thread = std::thread([this] { server.listen_after_bind(); });
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_connection_timeout(5);
    return c;
  }
};

// Keys that would reveal where a series came from or how it scores.
void check_blind(const json& j, const std::string& where) {
  static const std::set<std::string> kForbidden{"specs",  "spec",   "kind",   "sigma",      "seed",
                                                "score",  "scores", "target", "provenance", "source",
                                                "augmentation"};
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      CHECK_MESSAGE(!kForbidden.count(k), where << " exposes '" << k << "'");
      check_blind(v, where);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) check_blind(v, where);
  }
}

}  // namespace

TEST_CASE("http api round trip") {
  TempJournal j("http");
  AnnotationStore store(datasets(), j.path);
  LiveServer live(store);
  auto c = live.client();

  auto health = c.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  check_blind(json::parse(health->body), "healthz");

  auto created = c.Post("/sessions", R"({"task": "GPP", "rater_id": "erin"})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const json s = json::parse(created->body);
  check_blind(s, "POST /sessions");
  CHECK(s.at("total") == 45);
  const std::string sid = s.at("session_id");

  for (int k = 0; k < 5; ++k) {
    auto next = c.Get("/sessions/" + sid + "/next");
    REQUIRE(next);
    CHECK(next->status == 200);
    const json p = json::parse(next->body);
    check_blind(p, "GET next");
    const std::string vote = json{{"pair_id", p.at("pair_id")}, {"choice", k % 2 ? "B" : "A"}}.dump();
    auto v = c.Post("/sessions/" + sid + "/votes", vote, "application/json");
    REQUIRE(v);
    CHECK(v->status == 200);
    check_blind(json::parse(v->body), "POST votes");
    auto dup = c.Post("/sessions/" + sid + "/votes", vote, "application/json");
    CHECK(json::parse(dup->body).at("stored") == false);
  }
  const json first = json::parse(c.Get("/sessions/" + sid + "/next")->body);
  auto flip = c.Post("/sessions/" + sid + "/votes",
                     json{{"pair_id", store.session(sid).queue[0]}, {"choice", "B"}}.dump(), "application/json");
  CHECK(flip->status == 409);
  CHECK(json::parse(flip->body).at("error") == "AlreadyVoted");
  CHECK(c.Get("/sessions/nope/next")->status == 404);
  CHECK(c.Post("/sessions/" + sid + "/votes", R"({"pair_id": "x~y", "choice": "A"})", "application/json")->status ==
        404);
  CHECK(c.Post("/sessions/" + sid + "/votes", R"({"pair_id": "x~y", "choice": "C"})", "application/json")->status ==
        400);
  CHECK(c.Post("/sessions", "not json", "application/json")->status == 400);
  CHECK(c.Get("/export")->status == 400);

  auto ex = c.Get("/export?task=GPP");
  REQUIRE(ex);
  const json e = json::parse(ex->body);
  check_blind(e, "export");
  CHECK(e.at("annotations").size() == 5);
  CHECK(e.at("report").at("kappa").is_null());  // one rater
  CHECK(first.at("progress").at("done") == 5);
}

TEST_CASE("token header guards the API routes") {
  TempJournal j("token");
  io::write_text(j.dir / "static" / "index.html", "<p>client</p>");
  AnnotationStore store(datasets(), j.path);
  LiveServer live(store, "sesame", j.dir / "static");
  auto c = live.client();
  CHECK(c.Get("/healthz")->status == 200);
  CHECK(c.Get("/index.html")->body == "<p>client</p>");
  CHECK(c.Get("/export?task=GPP")->status == 401);
  CHECK(c.Get("/sessions/s0/next")->status == 401);
  CHECK(c.Post("/sessions", R"({"task": "GPP", "rater_id": "x"})", "application/json")->status == 401);
  c.set_default_headers({{"X-APEF-Token", "sesame"}});
  CHECK(c.Post("/sessions", R"({"task": "GPP", "rater_id": "x"})", "application/json")->status == 201);
}

TEST_CASE("concurrent raters keep one record per vote") {
  TempJournal j("concurrent");
  AnnotationStore store(datasets(), j.path);
  LiveServer live(store);
  std::vector<std::thread> raters;
  for (int r = 0; r < 4; ++r) {
    raters.emplace_back([&, r] {
      auto c = live.client();
      const json s = json::parse(
          c.Post("/sessions", json{{"task", "GPP"}, {"rater_id", "rater" + std::to_string(r)}}.dump(), "application/json")
              ->body);
      const std::string sid = s.at("session_id");
      while (true) {
        const json p = json::parse(c.Get("/sessions/" + sid + "/next")->body);
        if (p.at("done") == true) break;
        const std::string body = json{{"pair_id", p.at("pair_id")}, {"choice", r % 2 ? "A" : "B"}}.dump();
        // double submit, as an impatient client would
        c.Post("/sessions/" + sid + "/votes", body, "application/json");
        c.Post("/sessions/" + sid + "/votes", body, "application/json");
      }
    });
  }
  for (auto& t : raters) t.join();
  std::set<std::tuple<std::string, std::string, std::string>> keys;
  std::size_t votes = 0;
  for (const auto& r : j.records()) {
    if (r.at("type") != "vote") continue;
    ++votes;
    keys.insert({r.at("rater_id").get<std::string>(), r.at("task").get<std::string>(), r.at("pair_id").get<std::string>()});
  }
  CHECK(votes == 180);
  CHECK(keys.size() == 180);
  CHECK(store.export_annotations("GPP").at("report").at("votes") == 180);
}
