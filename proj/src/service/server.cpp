#include "refinery/service/server.hpp"

#include <chrono>
#include <fstream>
#include <random>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <httplib.h>

#include "refinery/error.hpp"
#include "refinery/llm/cassette.hpp"

namespace refinery::service {

namespace {

using nlohmann::json;
using Reply = std::pair<int, json>;

std::string now_iso() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

json error_body(const std::string& msg) { return {{"error", msg}}; }

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Strings only; absent or null gives an empty list.
std::optional<std::vector<std::string>> string_list(const json& body, const char* key) {
  std::vector<std::string> out;
  if (!body.contains(key) || body[key].is_null()) return out;
  if (!body[key].is_array()) return std::nullopt;
  for (const auto& v : body[key]) {
    if (!v.is_string()) return std::nullopt;
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Session

Session::Session(std::string id, std::string strategy_name, pipeline::StrategyConfig strategy,
                 Conversation conversation, std::string created_at)
    : id_(std::move(id)),
      strategy_name_(std::move(strategy_name)),
      strategy_(std::move(strategy)),
      created_at_(std::move(created_at)),
      conversation_(std::move(conversation)) {}

void Session::emit(std::string type, json data) {
  {
    std::lock_guard lock(mu_);
    events_.push_back({events_.size(), std::move(type), std::move(data)});
  }
  cv_.notify_all();
}

std::pair<std::string, RefinementTrace> Session::post(const std::string& text, const pipeline::Pipeline& pipeline) {
  std::lock_guard turn_lock(turn_mu_);
  Conversation open;
  {
    std::lock_guard lock(mu_);
    open = append_turn(conversation_, text);
  }
  const auto turn = open.turns().size();
  emit("turn-started", {{"turn", turn}, {"query", text}});

  auto observer = [this, turn](const pipeline::StageEvent& ev) {
    json d{{"turn", turn}, {"stage", ev.stage}};
    if (ev.agent) {
      d["agent"] = std::string(slug(*ev.agent));
      d["agent_name"] = std::string(display_name(*ev.agent));
    }
    if (ev.status == "finished") d["text"] = ev.text;
    emit("stage-" + ev.status, std::move(d));
  };
  try {
    auto res = pipeline.run_turn(open, strategy_, observer);
    {
      std::lock_guard lock(mu_);
      conversation_ = open.with_last_response(res.final_response);
      traces_.push_back(res.trace);
    }
    emit("final", {{"turn", turn}, {"response", res.final_response}, {"agent_calls", res.trace.agent_calls}});
    return {res.final_response, res.trace};
  } catch (const pipeline::TurnError& e) {
    emit("error", {{"turn", turn}, {"kind", std::string(to_string(e.kind()))}, {"message", e.what()}});
    throw;
  }
}

void Session::restore_turn(const std::string& query, const std::string& response, RefinementTrace trace) {
  std::lock_guard lock(mu_);
  conversation_ = append_turn(conversation_, query).with_last_response(response);
  traces_.push_back(std::move(trace));
}

json Session::to_json() const {
  std::lock_guard lock(mu_);
  json turns = json::array();
  for (const auto& t : conversation_.turns())
    turns.push_back({{"index", t.index}, {"query", t.query}, {"response", t.response.value_or("")}});
  return {{"session_id", id_},
          {"strategy", strategy_name_},
          {"created_at", created_at_},
          {"persona", conversation_.persona()},
          {"fact", conversation_.fact() ? json(*conversation_.fact()) : json(nullptr)},
          {"keywords", conversation_.keywords()},
          {"turns", std::move(turns)},
          {"trace_count", traces_.size()}};
}

std::optional<RefinementTrace> Session::trace(std::size_t k) const {
  std::lock_guard lock(mu_);
  if (k < 1 || k > traces_.size()) return std::nullopt;
  return traces_[k - 1];
}

std::size_t Session::completed_turns() const {
  std::lock_guard lock(mu_);
  return traces_.size();
}

std::vector<SessionEvent> Session::events_since(std::uint64_t from, std::chrono::milliseconds wait) const {
  std::unique_lock lock(mu_);
  if (events_.size() <= from && wait.count() > 0) cv_.wait_for(lock, wait, [&] { return events_.size() > from; });
  if (events_.size() <= from) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
}

void Session::wake_all() { cv_.notify_all(); }

// ---------------------------------------------------------------------------
// Server

struct Server::Idempotent {
  std::mutex mu;
  std::condition_variable cv;
  bool done = false;
  std::string fingerprint;
  Reply reply;
};

Server::Server(ServiceConfig config, Engine engine, ServerOptions options)
    : config_(std::move(config)),
      engine_(std::move(engine)),
      options_(std::move(options)),
      http_(std::make_unique<httplib::Server>()),
      id_state_(std::random_device{}() ^ (static_cast<std::uint64_t>(std::random_device{}()) << 32)) {
  if (options_.console_dir) {
    if (!std::filesystem::is_directory(*options_.console_dir))
      throw Error(ErrorKind::Config, "console assets not found at " + options_.console_dir->string() +
                                         " (build the console first)");
    http_->set_mount_point("/", options_.console_dir->string());
  }
  load_persisted();
  routes();
}

Server::~Server() { stop(); }

std::string Server::new_id() {
  std::lock_guard lock(sessions_mu_);
  for (;;) {
    // splitmix64 step
    std::uint64_t z = (id_state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    auto id = fmt::format("s-{:016x}", z ^ (z >> 31));
    if (!sessions_.count(id)) return id;
  }
}

std::shared_ptr<Session> Server::find(const std::string& id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::size_t Server::session_count() const {
  std::lock_guard lock(sessions_mu_);
  return sessions_.size();
}

void Server::persist(const std::string& id, const json& line) const {
  if (!config_.sessions_dir) return;
  std::filesystem::create_directories(*config_.sessions_dir);
  std::ofstream out(*config_.sessions_dir / (id + ".jsonl"), std::ios::app | std::ios::binary);
  out << line.dump() << '\n';
}

void Server::load_persisted() {
  if (!config_.sessions_dir || !std::filesystem::is_directory(*config_.sessions_dir)) return;
  for (const auto& e : std::filesystem::directory_iterator(*config_.sessions_dir)) {
    if (e.path().extension() != ".jsonl") continue;
    std::ifstream in(e.path());
    std::string text;
    std::shared_ptr<Session> s;
    std::size_t line = 0;
    try {
      while (std::getline(in, text)) {
        ++line;
        if (text.empty()) continue;
        const auto j = json::parse(text);
        const auto type = j.at("type").get<std::string>();
        if (type == "created") {
          Conversation base(j.at("session_id").get<std::string>(), j.value("persona", std::vector<std::string>{}),
                            j.contains("fact") && j["fact"].is_string() ? std::optional(j["fact"].get<std::string>())
                                                                         : std::nullopt,
                            j.value("keywords", std::vector<std::string>{}), {});
          const auto strategy = j.at("strategy").get<std::string>();
          s = std::make_shared<Session>(base.id(), strategy, make_strategy(strategy, config_, engine_.judge), base,
                                        j.value("created_at", ""));
        } else if (type == "turn" && s) {
          s->restore_turn(j.at("query").get<std::string>(), j.at("response").get<std::string>(),
                          pipeline::trace_from_json(j.at("trace")));
        }
      }
    } catch (const std::exception& ex) {
      throw Error(ErrorKind::Config, fmt::format("{} line {}: {}", e.path().string(), line, ex.what()));
    }
    if (s) sessions_[s->id()] = s;
  }
}

void Server::routes() {
  auto& svr = *http_;
  svr.set_default_headers({{"Access-Control-Allow-Origin", config_.cors_origin},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type, Idempotency-Key, Last-Event-ID"},
                           {"Access-Control-Expose-Headers", "Idempotent-Replayed"}});
  svr.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  // Runs `handler` at most once per (scope, Idempotency-Key); repeats wait
  // for and replay the first reply.
  auto idempotent = [this](const httplib::Request& req, httplib::Response& res, const std::string& scope,
                           const std::function<Reply()>& handler) {
    const auto key = req.get_header_value("Idempotency-Key");
    if (key.empty()) {
      auto [status, body] = handler();
      send(res, status, body);
      return;
    }
    const auto fingerprint = llm::sha256_hex(req.body);
    std::shared_ptr<Idempotent> entry;
    bool owner = false;
    {
      std::lock_guard lock(idem_mu_);
      auto& slot = idem_[scope + "\n" + key];
      if (!slot) {
        slot = std::make_shared<Idempotent>();
        slot->fingerprint = fingerprint;
        owner = true;
      }
      entry = slot;
    }
    if (!owner) {
      if (entry->fingerprint != fingerprint) {
        send(res, 422, error_body("Idempotency-Key reused with a different body"));
        return;
      }
      std::unique_lock lock(entry->mu);
      entry->cv.wait(lock, [&] { return entry->done; });
      res.set_header("Idempotent-Replayed", "true");
      send(res, entry->reply.first, entry->reply.second);
      return;
    }
    Reply reply;
    try {
      reply = handler();
    } catch (...) {
      reply = {500, error_body("internal error")};
    }
    {
      std::lock_guard lock(entry->mu);
      entry->reply = reply;
      entry->done = true;
    }
    entry->cv.notify_all();
    send(res, reply.first, reply.second);
  };

  svr.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) { send(res, 200, {{"status", "ok"}}); });

  svr.Get("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
    json ids = json::array();
    std::lock_guard lock(sessions_mu_);
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    send(res, 200, {{"sessions", ids}});
  });

  svr.Post("/v1/sessions", [this, idempotent](const httplib::Request& req, httplib::Response& res) {
    idempotent(req, res, "create", [&]() -> Reply {
      json body;
      try {
        body = req.body.empty() ? json::object() : json::parse(req.body);
      } catch (const json::parse_error&) {
        return {400, error_body("body is not valid JSON")};
      }
      if (!body.is_object()) return {400, error_body("body must be a JSON object")};
      const auto persona = string_list(body, "persona");
      const auto keywords = string_list(body, "keywords");
      if (!persona) return {400, error_body("'persona' must be an array of strings")};
      if (!keywords) return {400, error_body("'keywords' must be an array of strings")};
      std::optional<std::string> fact;
      if (body.contains("fact") && !body["fact"].is_null()) {
        if (!body["fact"].is_string()) return {400, error_body("'fact' must be a string")};
        fact = body["fact"].get<std::string>();
      }
      std::string strategy_name = "dynamic";
      if (body.contains("strategy")) {
        if (!body["strategy"].is_string()) return {400, error_body("'strategy' must be a string")};
        strategy_name = body["strategy"].get<std::string>();
      }
      if (strategy_name == "ideal") return {400, error_body("strategy 'ideal' needs gold responses; not available live")};
      pipeline::StrategyConfig strategy;
      try {
        strategy = make_strategy(strategy_name, config_, engine_.judge);
      } catch (const Error& e) {
        return {400, error_body(e.what())};
      }
      const auto id = new_id();
      Conversation base(id, *persona, fact, *keywords, {});
      auto session = std::make_shared<Session>(id, strategy_name, strategy, base, now_iso());
      {
        std::lock_guard lock(sessions_mu_);
        sessions_[id] = session;
      }
      persist(id, {{"type", "created"},
                   {"session_id", id},
                   {"strategy", strategy_name},
                   {"persona", *persona},
                   {"fact", fact ? json(*fact) : json(nullptr)},
                   {"keywords", *keywords},
                   {"created_at", session->created_at()}});
      return {201, {{"session_id", id}, {"strategy", strategy_name}}};
    });
  });

  svr.Get(R"(/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    if (!s) return send(res, 404, error_body("unknown session"));
    send(res, 200, s->to_json());
  });

  svr.Post(R"(/v1/sessions/([^/]+)/messages)", [this, idempotent](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    idempotent(req, res, "message\n" + id, [&]() -> Reply {
      auto s = find(id);
      if (!s) return {404, error_body("unknown session")};
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error&) {
        return {400, error_body("body is not valid JSON")};
      }
      if (!body.is_object() || !body.contains("text") || !body["text"].is_string() ||
          body["text"].get<std::string>().find_first_not_of(" \t\r\n") == std::string::npos)
        return {400, error_body("'text' must be a non-empty string")};
      const auto text = body["text"].get<std::string>();
      try {
        ++turns_executed_;
        auto [response, trace] = s->post(text, *engine_.pipeline);
        const auto turn = s->completed_turns();
        auto tj = pipeline::trace_to_json(trace);
        persist(id, {{"type", "turn"}, {"query", text}, {"response", response}, {"trace", tj}});
        return {200, {{"turn", turn}, {"response", response}, {"trace", std::move(tj)}}};
      } catch (const pipeline::TurnError& e) {
        return {502, {{"error", e.what()},
                      {"kind", std::string(to_string(e.kind()))},
                      {"trace", pipeline::trace_to_json(e.partial_trace())}}};
      } catch (const Error& e) {
        return {400, error_body(e.what())};
      }
    });
  });

  svr.Get(R"(/v1/sessions/([^/]+)/turns/(\d+)/trace)", [this](const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    if (!s) return send(res, 404, error_body("unknown session"));
    const auto k = std::stoul(req.matches[2]);
    auto t = s->trace(k);
    if (!t) return send(res, 404, error_body(fmt::format("turn {} has no trace", k)));
    send(res, 200, pipeline::trace_to_json(*t));
  });

  svr.Get(R"(/v1/sessions/([^/]+)/stream)", [this](const httplib::Request& req, httplib::Response& res) {
    auto s = find(req.matches[1]);
    if (!s) return send(res, 404, error_body("unknown session"));
    std::uint64_t from = 0;
    try {
      if (req.has_param("from")) from = std::stoull(req.get_param_value("from"));
      if (req.has_header("Last-Event-ID")) from = std::stoull(req.get_header_value("Last-Event-ID")) + 1;
    } catch (const std::exception&) {
      return send(res, 400, error_body("bad event cursor"));
    }
    const bool follow = req.get_param_value("follow") != "0" && req.get_param_value("follow") != "false";
    struct Cursor {
      std::uint64_t next;
      std::chrono::steady_clock::time_point last_write;
    };
    auto cursor = std::make_shared<Cursor>(Cursor{from, std::chrono::steady_clock::now()});
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream", [this, s, cursor, follow](std::size_t, httplib::DataSink& sink) {
          const auto events =
              s->events_since(cursor->next, follow ? std::chrono::milliseconds(200) : std::chrono::milliseconds(0));
          for (const auto& e : events) {
            const auto chunk = fmt::format("id: {}\nevent: {}\ndata: {}\n\n", e.seq, e.type, e.data.dump());
            if (!sink.write(chunk.data(), chunk.size())) return false;
            cursor->next = e.seq + 1;
            cursor->last_write = std::chrono::steady_clock::now();
          }
          if ((!follow && events.empty()) || stopping_) {
            sink.done();
            return true;
          }
          if (std::chrono::steady_clock::now() - cursor->last_write > options_.heartbeat) {
            static constexpr std::string_view kBeat = ": keepalive\n\n";
            if (!sink.write(kBeat.data(), kBeat.size())) return false;
            cursor->last_write = std::chrono::steady_clock::now();
          }
          return true;
        });
  });
}

int Server::bind(const std::string& host, int port) {
  if (port == 0) return http_->bind_to_any_port(host);
  if (!http_->bind_to_port(host, port)) throw Error(ErrorKind::Config, fmt::format("cannot bind {}:{}", host, port));
  return port;
}

void Server::listen() { http_->listen_after_bind(); }

int Server::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  if (bound < 0) throw Error(ErrorKind::Config, "cannot bind " + host);
  thread_ = std::thread([this] { listen(); });
  http_->wait_until_ready();
  return bound;
}

void Server::stop() {
  if (stopping_.exchange(true)) return;
  {
    std::lock_guard lock(sessions_mu_);
    for (auto& [id, s] : sessions_) s->wake_all();
  }
  http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace refinery::service
