#include "apef/annotation.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <set>

#include "apef/dataset_io.hpp"
#include "apef/error.hpp"
#include "apef/io.hpp"
#include "apef/rng.hpp"
#include "apef/stats.hpp"

namespace apef {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<PairRef> training_pairs(const Dataset& data) {
  std::vector<std::string> ids = data.split.train;
  std::sort(ids.begin(), ids.end());
  std::vector<PairRef> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) out.push_back({make_pair_id(ids[i], ids[j]), ids[i], ids[j]});
  }
  return out;
}

std::string session_id_for(const std::string& dataset, const std::string& rater_id, const std::string& task) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "s%016llx",
                static_cast<unsigned long long>(fnv1a64(dataset + '\x1f' + rater_id + '\x1f' + task)));
  return buf;
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

AnnotationStore::AnnotationStore(std::map<std::string, Dataset> datasets, fs::path journal)
    : datasets_(std::move(datasets)), journal_path_(std::move(journal)) {
  if (datasets_.empty()) throw Error(ErrorCode::kUnknownDataset, "annotation store needs a dataset");
  for (const auto& [name, d] : datasets_) {
    Entry e;
    e.data = &d;
    e.pairs = training_pairs(d);
    for (std::size_t k = 0; k < e.pairs.size(); ++k) e.by_id[e.pairs[k].pair_id] = k;
    entries_[name] = std::move(e);
  }
  if (journal_path_.has_parent_path()) fs::create_directories(journal_path_.parent_path());
  replay();
  journal_.open(journal_path_, std::ios::app | std::ios::binary);
  if (!journal_) throw Error(ErrorCode::kIoError, "cannot open journal " + journal_path_.string());
}

void AnnotationStore::replay() {
  if (!fs::exists(journal_path_)) return;
  const std::string text = io::read_text(journal_path_);
  std::size_t pos = 0, good = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // unterminated tail: torn write
    const std::string line = text.substr(pos, nl - pos);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception&) {
      if (nl + 1 == text.size()) break;  // garbled final record
      throw Error(ErrorCode::kIoError, "corrupt journal record at byte " + std::to_string(pos));
    }
    const std::string type = rec.value("type", std::string{});
    if (type == "session") {
      const std::string ds = rec.at("dataset").get<std::string>();
      if (entries_.count(ds)) {
        AnnotationSession s = build_session(ds, rec.at("task").get<std::string>(), rec.at("rater_id").get<std::string>());
        sessions_.emplace(s.session_id, std::move(s));
      }
    } else if (type == "vote") {
      apply_vote(rec);
    }
    pos = nl + 1;
    good = pos;
  }
  if (good < text.size()) fs::resize_file(journal_path_, good);
}

const AnnotationStore::Entry& AnnotationStore::entry(const std::string& dataset) const {
  const auto it = entries_.find(dataset);
  if (it == entries_.end()) throw Error(ErrorCode::kUnknownDataset, "unknown dataset '" + dataset + "'");
  return it->second;
}

std::string AnnotationStore::resolve_dataset(const std::string& name) const {
  if (!name.empty()) {
    entry(name);
    return name;
  }
  if (entries_.size() != 1) throw Error(ErrorCode::kUnknownDataset, "several datasets are loaded; name one");
  return entries_.begin()->first;
}

AnnotationSession AnnotationStore::build_session(const std::string& dataset, const std::string& task,
                                                 const std::string& rater) const {
  const Entry& e = entry(dataset);
  const auto vars = task_variables(task);
  const auto have = e.data->variables();
  for (const auto& v : vars) {
    if (std::find(have.begin(), have.end(), v) == have.end()) {
      throw Error(ErrorCode::kInvalidParams, "dataset " + dataset + " has no variable " + v);
    }
  }
  if (rater.empty()) throw Error(ErrorCode::kInvalidParams, "rater_id is empty");
  AnnotationSession s;
  s.session_id = session_id_for(dataset, rater, task);
  s.dataset = dataset;
  s.task = task;
  s.rater_id = rater;
  for (const auto& p : e.pairs) s.queue.push_back(p.pair_id);
  Rng rng(fnv1a64(rater + '\x1f' + task));
  rng.shuffle(s.queue.begin(), s.queue.end());
  return s;
}

void AnnotationStore::append(const json& record) {
  if (failed_) throw Error(ErrorCode::kIoError, "store must be reopened after an interrupted write");
  journal_ << record.dump() << '\n';
  journal_.flush();
  if (!journal_) throw Error(ErrorCode::kIoError, "journal write failed");
}

void AnnotationStore::apply_vote(const json& rec) {
  const std::string sid = rec.at("session_id").get<std::string>();
  auto it = sessions_.find(sid);
  if (it == sessions_.end()) {
    const std::string ds = rec.at("dataset").get<std::string>();
    if (!entries_.count(ds)) return;
    AnnotationSession s = build_session(ds, rec.at("task").get<std::string>(), rec.at("rater_id").get<std::string>());
    it = sessions_.emplace(sid, std::move(s)).first;
  }
  const std::string pid = rec.at("pair_id").get<std::string>();
  if (it->second.votes.count(pid)) return;
  const Preference c = preference_from_string(rec.at("choice").get<std::string>());
  it->second.votes[pid] = c;
  annotations_.push_back({pid, rec.at("id_a").get<std::string>(), rec.at("id_b").get<std::string>(),
                          it->second.rater_id, it->second.task, c});
}

AnnotationSession AnnotationStore::create_session(const std::string& task, const std::string& rater_id,
                                                  const std::string& dataset) {
  std::unique_lock lock(mutex_);
  const std::string ds = resolve_dataset(dataset);
  AnnotationSession s = build_session(ds, task, rater_id);
  const auto it = sessions_.find(s.session_id);
  if (it != sessions_.end()) return it->second;
  append({{"type", "session"}, {"session_id", s.session_id}, {"dataset", ds}, {"task", task},
          {"rater_id", rater_id}, {"timestamp", utc_now()}});
  sessions_.emplace(s.session_id, s);
  return s;
}

AnnotationSession AnnotationStore::session(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::kUnknownSession, "unknown session '" + session_id + "'");
  return it->second;
}

json AnnotationStore::next_pair(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::kUnknownSession, "unknown session '" + session_id + "'");
  const AnnotationSession& s = it->second;
  const json progress = {{"done", s.votes.size()}, {"total", s.queue.size()}};
  for (const std::string& pid : s.queue) {
    if (s.votes.count(pid)) continue;
    const Entry& e = entry(s.dataset);
    const PairRef& p = e.pairs[e.by_id.at(pid)];
    const auto vars = task_variables(s.task);
    json obs = json::object(), a = json::object(), b = json::object();
    const auto o = e.data->observations_for(vars);
    const auto pa = e.data->predictions_for(p.id_a, vars);
    const auto pb = e.data->predictions_for(p.id_b, vars);
    for (std::size_t v = 0; v < vars.size(); ++v) {
      obs[vars[v]] = o[v].values;
      a[vars[v]] = pa[v].values;
      b[vars[v]] = pb[v].values;
    }
    std::vector<std::size_t> t(o.front().size());
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = k + 1;
    return {{"done", false}, {"session_id", s.session_id}, {"pair_id", pid}, {"task", s.task},
            {"variables", vars}, {"t", t}, {"obs", obs}, {"a", a}, {"b", b}, {"progress", progress}};
  }
  return {{"done", true}, {"session_id", s.session_id}, {"progress", progress}};
}

VoteAck AnnotationStore::record_vote(const std::string& session_id, const std::string& pair_id, Preference choice) {
  std::unique_lock lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(ErrorCode::kUnknownSession, "unknown session '" + session_id + "'");
  AnnotationSession& s = it->second;
  const Entry& e = entry(s.dataset);
  const auto pit = e.by_id.find(pair_id);
  if (pit == e.by_id.end()) throw Error(ErrorCode::kUnknownPair, "pair '" + pair_id + "' is not in this session");
  VoteAck ack;
  ack.total = s.queue.size();
  if (const auto v = s.votes.find(pair_id); v != s.votes.end()) {
    if (v->second != choice) {
      throw Error(ErrorCode::kAlreadyVoted, "pair '" + pair_id + "' already has choice " + to_string(v->second));
    }
    ack.done = s.votes.size();
    return ack;
  }
  const PairRef& p = e.pairs[pit->second];
  const json rec = {{"type", "vote"},     {"session_id", s.session_id}, {"dataset", s.dataset},
                    {"task", s.task},     {"rater_id", s.rater_id},     {"pair_id", pair_id},
                    {"id_a", p.id_a},     {"id_b", p.id_b},             {"choice", to_string(choice)},
                    {"timestamp", utc_now()}};
  append(rec);
  if (after_journal_write) {
    try {
      after_journal_write();
    } catch (...) {
      // The index no longer matches the journal; only a reopen may continue.
      failed_ = true;
      throw;
    }
  }
  apply_vote(rec);
  ack.stored = true;
  ack.done = s.votes.size();
  return ack;
}

json AnnotationStore::export_annotations(const std::string& task) const {
  std::shared_lock lock(mutex_);
  std::vector<Annotation> rows;
  for (const Annotation& a : annotations_) {
    if (a.task == task) rows.push_back(a);
  }
  std::sort(rows.begin(), rows.end(), [](const Annotation& x, const Annotation& y) {
    return std::tie(x.pair_id, x.rater_id) < std::tie(y.pair_id, y.rater_id);
  });
  json list = json::array();
  std::set<std::string> raters;
  std::map<std::string, std::vector<int>> counts;
  for (const Annotation& a : rows) {
    list.push_back(annotation_to_json(a));
    raters.insert(a.rater_id);
    auto& c = counts.try_emplace(a.pair_id, std::vector<int>{0, 0}).first->second;
    ++c[a.choice == Preference::kA ? 0 : 1];
  }
  json kappa = nullptr;
  std::vector<std::vector<int>> matrix;
  for (const auto& [pid, c] : counts) matrix.push_back(c);
  try {
    if (!matrix.empty()) kappa = fleiss_kappa(matrix);
  } catch (const Error&) {
    // undefined for a single rater, uneven coverage or one category
  }
  return {{"annotations", list},
          {"report",
           {{"task", task},
            {"pairs", counts.size()},
            {"votes", rows.size()},
            {"raters", std::vector<std::string>(raters.begin(), raters.end())},
            {"kappa", kappa}}}};
}

std::size_t AnnotationStore::vote_count() const {
  std::shared_lock lock(mutex_);
  return annotations_.size();
}

std::vector<std::string> AnnotationStore::dataset_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

}  // namespace apef
