#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refinery/core/model.hpp"

namespace refinery::llm {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role);
std::optional<Role> role_from_string(std::string_view s);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 1024;
  // Number of independent completions wanted (judge averaging).
  int sample_count = 1;

  /// Throws Error(Validation) when the request is malformed.
  void validate() const;
  /// All message contents joined by blank lines; what scripted rules match.
  std::string concatenated_prompt() const;
};

struct Completion {
  std::string text;
  std::string model_id;
  std::chrono::milliseconds latency{0};
  std::optional<TokenCounts> token_usage;

  bool operator==(const Completion&) const = default;
};

/// A completion source. Implementations return exactly
/// `request.sample_count` completions or throw.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::vector<Completion> complete(const ChatRequest& request) = 0;
  virtual std::string_view name() const = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Token bucket admitting `per_minute` requests per minute with a burst of
/// the same size. A rate of 0 disables limiting.
class RateLimiter {
 public:
  explicit RateLimiter(double per_minute = 0.0);
  void acquire();
  double per_minute() const noexcept { return per_minute_; }

 private:
  double per_minute_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mu_;
};

struct LedgerEntry {
  std::string cassette_key;
  std::string model_id;
};

/// Thread-safe front door to a backend: validation, admission control,
/// retries on transient transport errors, and a ledger of every request.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry = {},
                   double requests_per_minute = 0.0, Sleeper sleeper = {});

  /// Single completion (sample_count is forced to 1 semantics: first sample).
  Completion complete(const ChatRequest& request);
  /// All `request.sample_count` completions.
  std::vector<Completion> sample(const ChatRequest& request);

  std::size_t invocation_count() const;
  std::vector<LedgerEntry> ledger() const;
  void reset_ledger();

  Backend& backend() noexcept { return *backend_; }

 private:
  std::vector<Completion> call_with_retry(const ChatRequest& request);

  std::shared_ptr<Backend> backend_;
  RetryPolicy retry_;
  RateLimiter limiter_;
  Sleeper sleeper_;
  mutable std::mutex ledger_mu_;
  std::vector<LedgerEntry> ledger_;
};

}  // namespace refinery::llm
