#include <httplib.h>

#include "apef/annotation.hpp"
#include "apef/error.hpp"

namespace apef {

using nlohmann::json;

struct AnnotationServer::Impl {
  AnnotationStore& store;
  std::string token;
  httplib::Server server;
  Impl(AnnotationStore& s, std::string t) : store(s), token(std::move(t)) {}
};

namespace {

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::kUnknownSession:
    case ErrorCode::kUnknownPair:
    case ErrorCode::kUnknownDataset: return 404;
    case ErrorCode::kAlreadyVoted: return 409;
    case ErrorCode::kInvalidParams: return 400;
    default: return 500;
  }
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send(res, status_for(e.code()), {{"error", std::string(error_code_name(e.code()))}, {"message", e.what()}});
  } catch (const json::exception& e) {
    send(res, 400, {{"error", "BadRequest"}, {"message", e.what()}});
  }
}

json body_of(const httplib::Request& req) {
  const json j = json::parse(req.body);
  if (!j.is_object()) throw Error(ErrorCode::kInvalidParams, "body must be a JSON object");
  return j;
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store, std::string token)
    : impl_(std::make_unique<Impl>(store, std::move(token))) {
  Impl& m = *impl_;
  m.server.set_pre_routing_handler([&m](const httplib::Request& req, httplib::Response& res) {
    // static client files carry no data
    const bool api = req.path.starts_with("/sessions") || req.path.starts_with("/export");
    if (m.token.empty() || !api) return httplib::Server::HandlerResponse::Unhandled;
    if (req.get_header_value("X-APEF-Token") == m.token) return httplib::Server::HandlerResponse::Unhandled;
    send(res, 401, {{"error", "Unauthorized"}, {"message", "missing or wrong X-APEF-Token"}});
    return httplib::Server::HandlerResponse::Handled;
  });

  m.server.Post("/sessions", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json b = body_of(req);
      const AnnotationSession s = m.store.create_session(b.at("task").get<std::string>(),
                                                         b.at("rater_id").get<std::string>(),
                                                         b.value("dataset", std::string{}));
      send(res, 201, {{"session_id", s.session_id}, {"task", s.task}, {"rater_id", s.rater_id},
                      {"total", s.queue.size()}, {"done", s.votes.size()}});
    });
  });

  m.server.Get(R"(/sessions/([^/]+)/next)", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send(res, 200, m.store.next_pair(req.matches[1])); });
  });

  m.server.Post(R"(/sessions/([^/]+)/votes)", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json b = body_of(req);
      const std::string choice = b.at("choice").get<std::string>();
      if (choice != "A" && choice != "B") throw Error(ErrorCode::kInvalidParams, "choice must be \"A\" or \"B\"");
      const VoteAck ack = m.store.record_vote(req.matches[1], b.at("pair_id").get<std::string>(),
                                              preference_from_string(choice));
      send(res, 200, {{"stored", ack.stored}, {"done", ack.done}, {"total", ack.total}});
    });
  });

  m.server.Get("/export", [&m](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.has_param("task")) throw Error(ErrorCode::kInvalidParams, "export needs ?task=");
      send(res, 200, m.store.export_annotations(req.get_param_value("task")));
    });
  });

  m.server.Get("/healthz", [&m](const httplib::Request&, httplib::Response& res) {
    send(res, 200, {{"status", "ok"}, {"votes", m.store.vote_count()}});
  });
}

AnnotationServer::~AnnotationServer() { stop(); }

bool AnnotationServer::mount_static(const std::filesystem::path& dir) {
  return impl_->server.set_mount_point("/", dir.string());
}

int AnnotationServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool AnnotationServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace apef
