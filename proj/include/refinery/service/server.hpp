#pragma once

// HTTP session service under /v1: sessions, messages, stored traces and a
// server-sent event stream of pipeline stages.

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/core/model.hpp"
#include "refinery/pipeline/pipeline.hpp"
#include "refinery/service/config.hpp"

namespace httplib {
class Server;
}

namespace refinery::service {

struct SessionEvent {
  std::uint64_t seq = 0;
  // "turn-started", "stage-started", "stage-finished", "final", "error"
  std::string type;
  nlohmann::json data;
};

class Session {
 public:
  Session(std::string id, std::string strategy_name, pipeline::StrategyConfig strategy, Conversation conversation,
          std::string created_at);

  const std::string& id() const noexcept { return id_; }

  /// Runs one turn; turns of one session never overlap. Returns the final
  /// response and trace, or throws pipeline::TurnError.
  std::pair<std::string, RefinementTrace> post(const std::string& text, const pipeline::Pipeline& pipeline);

  nlohmann::json to_json() const;
  /// Stored trace of completed turn k (1-based).
  std::optional<RefinementTrace> trace(std::size_t k) const;
  std::size_t completed_turns() const;

  /// Events with seq >= from; blocks up to `wait` for new ones when none.
  std::vector<SessionEvent> events_since(std::uint64_t from, std::chrono::milliseconds wait) const;
  void wake_all();

  /// Rebuilds a completed turn from persisted state.
  void restore_turn(const std::string& query, const std::string& response, RefinementTrace trace);
  const std::string& strategy_name() const noexcept { return strategy_name_; }
  const Conversation& conversation_unlocked() const noexcept { return conversation_; }
  const std::string& created_at() const noexcept { return created_at_; }

 private:
  void emit(std::string type, nlohmann::json data);

  std::string id_;
  std::string strategy_name_;
  pipeline::StrategyConfig strategy_;
  std::string created_at_;

  std::mutex turn_mu_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  Conversation conversation_;
  std::vector<RefinementTrace> traces_;
  std::vector<SessionEvent> events_;
};

struct ServerOptions {
  // Static console assets served at "/" when set.
  std::optional<std::filesystem::path> console_dir;
  // Heartbeat interval of idle event streams.
  std::chrono::milliseconds heartbeat{15000};
};

class Server {
 public:
  /// Throws Error(Config) when console_dir is set but missing.
  Server(ServiceConfig config, Engine engine, ServerOptions options = {});
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds; port 0 picks a free one. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires bind().
  void listen();
  /// bind + listen on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  void stop();

  std::size_t session_count() const;
  /// Pipeline executions so far (idempotent replays excluded).
  std::size_t turns_executed() const noexcept { return turns_executed_.load(); }

 private:
  struct Idempotent;

  void routes();
  void persist(const std::string& id, const nlohmann::json& line) const;
  void load_persisted();
  std::shared_ptr<Session> find(const std::string& id) const;
  std::string new_id();

  ServiceConfig config_;
  Engine engine_;
  ServerOptions options_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> turns_executed_{0};

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t id_state_;

  std::mutex idem_mu_;
  std::map<std::string, std::shared_ptr<Idempotent>> idem_;
};

}  // namespace refinery::service
