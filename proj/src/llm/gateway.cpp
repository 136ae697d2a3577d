#include "refinery/llm/gateway.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "refinery/error.hpp"
#include "refinery/llm/cassette.hpp"

namespace refinery::llm {

std::string_view to_string(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

std::optional<Role> role_from_string(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  return std::nullopt;
}

void ChatRequest::validate() const {
  if (messages.empty()) throw Error(ErrorKind::Validation, "chat request has no messages");
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const auto& m = messages[i];
    if (m.role != Role::Assistant && m.content.empty()) {
      throw Error(ErrorKind::Validation,
                  "message " + std::to_string(i) + " (" + std::string(to_string(m.role)) +
                      ") has empty content");
    }
    if (m.role == Role::System && i != 0) {
      throw Error(ErrorKind::Validation, "system message must come first");
    }
  }
  if (!(temperature >= 0.0)) throw Error(ErrorKind::Validation, "temperature must be >= 0");
  if (max_tokens <= 0) throw Error(ErrorKind::Validation, "max_tokens must be positive");
  if (sample_count <= 0) throw Error(ErrorKind::Validation, "sample_count must be positive");
}

std::string ChatRequest::concatenated_prompt() const {
  std::string out;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    if (i) out += "\n\n";
    out += messages[i].content;
  }
  return out;
}

// ---------------------------------------------------------------------------

RateLimiter::RateLimiter(double per_minute)
    : per_minute_(per_minute), tokens_(per_minute), last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (per_minute_ <= 0.0) return;
  const double per_second = per_minute_ / 60.0;
  for (;;) {
    std::chrono::duration<double> wait{0};
    {
      std::lock_guard lock(mu_);
      auto now = std::chrono::steady_clock::now();
      std::chrono::duration<double> elapsed = now - last_;
      last_ = now;
      tokens_ = std::min(per_minute_, tokens_ + elapsed.count() * per_second);
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = std::chrono::duration<double>((1.0 - tokens_) / per_second);
    }
    std::this_thread::sleep_for(wait);
  }
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<Backend> backend, RetryPolicy retry, double requests_per_minute,
                 Sleeper sleeper)
    : backend_(std::move(backend)),
      retry_(retry),
      limiter_(requests_per_minute),
      sleeper_(sleeper ? std::move(sleeper)
                       : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })) {
  if (!backend_) throw Error(ErrorKind::Config, "gateway needs a backend");
  if (retry_.max_attempts < 1) retry_.max_attempts = 1;
}

std::vector<Completion> Gateway::call_with_retry(const ChatRequest& request) {
  request.validate();
  {
    std::lock_guard lock(ledger_mu_);
    ledger_.push_back({cassette_key(request), request.model_id});
  }
  for (int attempt = 1;; ++attempt) {
    limiter_.acquire();
    try {
      auto out = backend_->complete(request);
      if (static_cast<int>(out.size()) != request.sample_count) {
        throw Error(ErrorKind::Transport, "backend returned " + std::to_string(out.size()) +
                                              " samples, wanted " +
                                              std::to_string(request.sample_count));
      }
      for (const auto& c : out) {
        if (c.text.empty()) {
          throw Error(ErrorKind::EmptyCompletion,
                      "provider returned an empty completion for model " + request.model_id);
        }
      }
      return out;
    } catch (const TransportError& e) {
      if (!e.transient() || attempt >= retry_.max_attempts) throw;
      auto delay = std::chrono::milliseconds(static_cast<long long>(
          retry_.base_delay.count() * std::pow(retry_.multiplier, attempt - 1)));
      sleeper_(delay);
    }
  }
}

Completion Gateway::complete(const ChatRequest& request) {
  ChatRequest single = request;
  single.sample_count = 1;
  return call_with_retry(single).front();
}

std::vector<Completion> Gateway::sample(const ChatRequest& request) {
  return call_with_retry(request);
}

std::size_t Gateway::invocation_count() const {
  std::lock_guard lock(ledger_mu_);
  return ledger_.size();
}

std::vector<LedgerEntry> Gateway::ledger() const {
  std::lock_guard lock(ledger_mu_);
  return ledger_;
}

void Gateway::reset_ledger() {
  std::lock_guard lock(ledger_mu_);
  ledger_.clear();
}

}  // namespace refinery::llm
