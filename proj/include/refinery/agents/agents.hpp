#pragma once

// One wrapper per agent role: build the render context, render the role's
// template, call the gateway and parse the tagged output.

#include <array>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "refinery/core/model.hpp"
#include "refinery/llm/gateway.hpp"
#include "refinery/prompting/prompts.hpp"
#include "refinery/tagparse/tagparse.hpp"

namespace refinery::agents {

struct AgentConfig {
  std::string model_id = "scripted";
  double temperature = 0.0;
  int max_tokens = 1024;
  // Extra calls allowed when the output misses its required tag.
  int retry_on_parse_failure = 1;
};

/// Per-role model settings with a shared default.
struct AgentRoster {
  AgentConfig fallback;
  std::map<AgentKind, AgentConfig> per_kind;

  const AgentConfig& get(AgentKind kind) const;
};

struct AgentOptions {
  // "responding" or "responding_grounded".
  std::string responding_template = "responding";
  // Put the conversation fact next to the keywords for the fact refiner.
  bool fact_in_refiner_context = true;
  // Replay prior turns as chat messages for refiners and the finalizer.
  bool history_for_refiners = true;
  // Most recent completed turns replayed; unset for all.
  std::optional<std::size_t> history_max_turns;
  tagparse::ExtractionMode mode = tagparse::ExtractionMode::Lenient;
};

/// Bookkeeping every call returns alongside its value.
struct CallStats {
  int gateway_calls = 0;
  double ms = 0.0;
  TokenCounts tokens;
  std::vector<std::string> cassette_keys;
  std::vector<std::string> warnings;

  void absorb(const CallStats& other);
};

template <typename T>
struct AgentResult {
  T value;
  CallStats stats;
};

class Agents {
 public:
  Agents(std::shared_ptr<llm::Gateway> gateway, std::shared_ptr<const prompting::PromptLibrary> prompts,
         AgentRoster roster = {}, AgentOptions options = {});

  /// Initial response to the conversation's final (unanswered) turn.
  /// Falls back to the raw completion, with a warning, when <response> is
  /// never produced.
  AgentResult<std::string> respond(const Conversation& conversation) const;

  /// Planner decision, or nullopt when the output stayed unparseable after
  /// the configured retries (the caller applies its fallback).
  AgentResult<std::optional<tagparse::PlannerDecision>> plan(const Conversation& conversation,
                                                             const std::string& initial_response) const;

  /// One verify-then-refine step. Never returns an empty refined response:
  /// a missing <refined_response> yields (Unparsed, previous_response).
  AgentResult<RefinementStep> refine(AgentKind kind, const Conversation& conversation,
                                     const std::string& initial_response,
                                     const std::string& previous_response,
                                     std::optional<AgentKind> previous_agent,
                                     const RefinementPlan& plan) const;

  /// Merges the fact, persona and coherence refinements (in that order).
  AgentResult<std::string> finalize(const std::array<std::string, 3>& refined,
                                    const Conversation& conversation) const;

  const AgentOptions& options() const noexcept { return options_; }
  llm::Gateway& gateway() const noexcept { return *gateway_; }

 private:
  struct Exchange {
    std::string text;
    bool parsed = false;
  };

  // Runs the request, re-asking with a corrective message while `accept`
  // rejects the output and retries remain.
  template <typename Accept>
  Exchange converse(AgentKind kind, std::vector<llm::ChatMessage> messages, const std::string& tag,
                    CallStats& stats, Accept&& accept) const;

  std::vector<llm::ChatMessage> history_messages(const Conversation& conversation) const;

  std::shared_ptr<llm::Gateway> gateway_;
  std::shared_ptr<const prompting::PromptLibrary> prompts_;
  AgentRoster roster_;
  AgentOptions options_;
};

/// Persona sentences joined by spaces.
std::string persona_text(const Conversation& conversation);
/// Keywords joined by ", ".
std::string keyword_text(const Conversation& conversation);

}  // namespace refinery::agents
