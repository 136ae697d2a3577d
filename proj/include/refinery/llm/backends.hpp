#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/llm/cassette.hpp"
#include "refinery/llm/gateway.hpp"

namespace refinery::llm {

// ---------------------------------------------------------------------------
// Scripted: deterministic fake driven by an ordered rule table.

using ScriptedHandler = std::function<std::string(const ChatRequest&)>;

struct ScriptedRule {
  std::string pattern;
  // Substring match by default; ECMAScript regex when set. Regex templates
  // may splice groups with $1, $2, $&.
  bool regex = false;
  // Cycled across successive hits (one hit per returned sample).
  std::vector<std::string> templates;
  // Overrides templates when present.
  ScriptedHandler handler;
};

class ScriptedBackend : public Backend {
 public:
  /// Throws Error(Config) when there are neither rules nor a default.
  ScriptedBackend(std::vector<ScriptedRule> rules, std::optional<std::string> default_template = {});

  /// {"rules": [{"match": "...", "regex": false, "respond": "..." | ["..", ".."]}],
  ///  "default": "..."}
  static std::shared_ptr<ScriptedBackend> from_json(const nlohmann::json& j);

  std::vector<Completion> complete(const ChatRequest& request) override;
  std::string_view name() const override { return "scripted"; }

  /// Hits per rule index (default template hits under key -1).
  std::map<int, int> hit_counts() const;

 private:
  struct CompiledRule {
    ScriptedRule rule;
    std::optional<std::regex> re;
  };

  std::vector<CompiledRule> rules_;
  std::optional<std::string> default_;
  mutable std::mutex mu_;
  std::map<int, int> hits_;
};

// ---------------------------------------------------------------------------
// Replay: cassette-backed, optionally recording misses from a fallback.

class ReplayBackend : public Backend {
 public:
  /// With a null fallback, misses raise Error(CacheMiss) and no network
  /// operation is ever attempted.
  ReplayBackend(CassetteStore store, std::shared_ptr<Backend> record_from = nullptr);

  std::vector<Completion> complete(const ChatRequest& request) override;
  std::string_view name() const override { return "replay"; }

  int hits() const noexcept { return hits_.load(); }
  int recorded() const noexcept { return recorded_.load(); }

 private:
  CassetteStore store_;
  std::shared_ptr<Backend> record_from_;
  std::atomic<int> hits_{0};
  std::atomic<int> recorded_{0};
  std::mutex record_mu_;
};

// ---------------------------------------------------------------------------
// Live: plain HTTP JSON chat-completion endpoints.

enum class WireFormat { OpenAIChat, AnthropicMessages };

struct LiveConfig {
  WireFormat wire = WireFormat::OpenAIChat;
  // Full URL, e.g. https://api.openai.com/v1/chat/completions
  std::string endpoint;
  // Name of the environment variable holding the key; empty for no auth.
  std::string api_key_env;
  int timeout_seconds = 120;
};

class LiveBackend : public Backend {
 public:
  explicit LiveBackend(LiveConfig config);

  std::vector<Completion> complete(const ChatRequest& request) override;
  std::string_view name() const override { return "live"; }

  /// Wire body for one sample; exposed for tests.
  nlohmann::json build_body(const ChatRequest& request) const;
  /// Throws Error(EmptyCompletion) / TransportError on malformed payloads.
  Completion parse_body(const nlohmann::json& body, const std::string& fallback_model) const;

 private:
  Completion complete_once(const ChatRequest& request);

  LiveConfig config_;
  std::string origin_;
  std::string path_;
};

/// HTTP status → transient? (408, 425, 429 and 5xx are transient).
bool is_transient_status(int status);

}  // namespace refinery::llm
