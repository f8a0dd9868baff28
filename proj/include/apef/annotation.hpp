#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "apef/datagen.hpp"
#include "apef/trainer.hpp"

namespace apef {

struct AnnotationSession {
  std::string session_id;
  std::string dataset;
  std::string task;  // GPP, CO2 or GPP+CO2
  std::string rater_id;
  std::vector<std::string> queue;               // pair ids, fixed at creation
  std::map<std::string, Preference> votes;      // pair id -> choice
};

struct PairRef {
  std::string pair_id;
  std::string id_a;
  std::string id_b;
};

struct VoteAck {
  bool stored = false;  // false for an idempotent repeat
  std::size_t done = 0;
  std::size_t total = 0;
};

// Pair ids and their candidates for a dataset: all pairs of training ids.
std::vector<PairRef> training_pairs(const Dataset& data);

// Session id and queue seed for a rater and task.
std::string session_id_for(const std::string& dataset, const std::string& rater_id, const std::string& task);

// Votes go to an append-only JSONL journal before the in-memory index is
// touched; the index is rebuilt from the journal on construction. A torn
// final line (crash mid-write) is dropped.
class AnnotationStore {
 public:
  AnnotationStore(std::map<std::string, Dataset> datasets, std::filesystem::path journal);

  // Test hook, run after a vote reaches the journal and before the index
  // sees it. Throwing from it simulates a crash.
  std::function<void()> after_journal_write;

  // Idempotent: the same rater and task give the same session.
  // Throws Error(kUnknownDataset) or Error(kInvalidParams) for a bad task.
  AnnotationSession create_session(const std::string& task, const std::string& rater_id,
                                    const std::string& dataset = "");
  AnnotationSession session(const std::string& session_id) const;

  // First unvoted pair, or null when the queue is done. The payload holds
  // raw series only. Throws Error(kUnknownSession).
  nlohmann::json next_pair(const std::string& session_id) const;

  // Throws Error(kUnknownSession), Error(kUnknownPair) or
  // Error(kAlreadyVoted) for a different choice on a voted pair.
  VoteAck record_vote(const std::string& session_id, const std::string& pair_id, Preference choice);

  // {annotations: [...], report: {task, pairs, votes, raters, kappa}}. Sorted,
  // so the same journal always gives the same bytes.
  nlohmann::json export_annotations(const std::string& task) const;

  std::size_t vote_count() const;
  std::vector<std::string> dataset_names() const;

 private:
  struct Entry {
    const Dataset* data = nullptr;
    std::vector<PairRef> pairs;
    std::map<std::string, std::size_t> by_id;
  };
  const Entry& entry(const std::string& dataset) const;
  std::string resolve_dataset(const std::string& name) const;
  AnnotationSession build_session(const std::string& dataset, const std::string& task, const std::string& rater) const;
  void replay();
  void append(const nlohmann::json& record);
  void apply_vote(const nlohmann::json& record);

  std::map<std::string, Dataset> datasets_;
  std::map<std::string, Entry> entries_;
  std::filesystem::path journal_path_;
  std::ofstream journal_;
  mutable std::shared_mutex mutex_;
  bool failed_ = false;
  std::map<std::string, AnnotationSession> sessions_;
  std::vector<Annotation> annotations_;  // journal order
};

// JSON HTTP front end:
//   POST /sessions            {task, rater_id[, dataset]}
//   GET  /sessions/{id}/next
//   POST /sessions/{id}/votes {pair_id, choice}
//   GET  /export?task=...
//   GET  /healthz
// When token is set every route but /healthz needs header X-APEF-Token.
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, std::string token = "");
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Serves files under dir at / (the browser client).
  bool mount_static(const std::filesystem::path& dir);
  // Binds; port 0 picks a free one. Returns the port, or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen_after_bind();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace apef
