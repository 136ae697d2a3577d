#pragma once

// Domain values shared by every module: conversations, agent identities and
// the artifacts a refinement run leaves behind. All types are immutable
// values; "mutation" builds a new value.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace refinery {

enum class AgentKind {
  Responding,
  Planner,
  FactRefine,
  PersonaRefine,
  CoherenceRefine,
  Finalizer,
  Judge,
  // Single agent covering all three aspects (ablation strategies only).
  CombinedRefine,
};

/// "Fact Refining Agent", "Persona Refining Agent", ... for every kind.
std::string_view display_name(AgentKind kind);
/// Stable lowercase identifier used in JSON and CLI flags.
std::string_view slug(AgentKind kind);
std::optional<AgentKind> agent_from_slug(std::string_view s);

/// True for the three aspect refiners a planner may select.
bool is_aspect_refiner(AgentKind kind);
/// Aspect refiners plus the combined single refiner.
bool is_refiner(AgentKind kind);

/// The three aspect refiners in canonical F, P, C order.
const std::vector<AgentKind>& aspect_refiners();

struct Turn {
  int index = 1;
  std::string query;
  std::optional<std::string> response;
  std::optional<std::string> gold_response;

  bool operator==(const Turn&) const = default;
};

class Conversation {
 public:
  Conversation() = default;

  /// Validating constructor. Throws Error(Validation) on a broken invariant.
  Conversation(std::string id, std::vector<std::string> persona,
               std::optional<std::string> fact, std::vector<std::string> keywords,
               std::vector<Turn> turns);

  const std::string& id() const noexcept { return id_; }
  const std::vector<std::string>& persona() const noexcept { return persona_; }
  const std::optional<std::string>& fact() const noexcept { return fact_; }
  const std::vector<std::string>& keywords() const noexcept { return keywords_; }
  const std::vector<Turn>& turns() const noexcept { return turns_; }

  bool empty() const noexcept { return turns_.empty(); }
  const Turn& last_turn() const;
  /// True when the final turn has a query and no response yet.
  bool awaiting_response() const;

  /// Copy with the final turn's response set.
  Conversation with_last_response(std::string response) const;
  /// Copy keeping only the first `count` turns.
  Conversation prefix(std::size_t count) const;

  bool operator==(const Conversation&) const = default;

 private:
  std::string id_;
  std::vector<std::string> persona_;
  std::optional<std::string> fact_;
  std::vector<std::string> keywords_;
  std::vector<Turn> turns_;
};

/// Appends a new unanswered turn. Throws Error(Validation) on an empty query.
Conversation append_turn(const Conversation& conversation, std::string query);

using HistoryPair = std::pair<std::string, std::string>;

/// Completed (query, response) pairs oldest-first; with `max_turns`, only the
/// most recent ones. Unanswered turns are skipped.
std::vector<HistoryPair> history_view(const Conversation& conversation,
                                      std::optional<std::size_t> max_turns = std::nullopt);

class RefinementPlan {
 public:
  RefinementPlan() = default;

  /// Deduplicates keeping the first occurrence. Throws Error(Domain) if a
  /// non-aspect kind is present.
  explicit RefinementPlan(std::vector<AgentKind> sequence, std::string set_justification = {},
                          std::string order_justification = {});

  const std::vector<AgentKind>& sequence() const noexcept { return sequence_; }
  const std::string& set_justification() const noexcept { return set_justification_; }
  const std::string& order_justification() const noexcept { return order_justification_; }
  bool empty() const noexcept { return sequence_.empty(); }

  /// "Fact Refining Agent, Coherence Refining Agent" (or "None").
  std::string order_text() const;

  bool operator==(const RefinementPlan&) const = default;

 private:
  std::vector<AgentKind> sequence_;
  std::string set_justification_;
  std::string order_justification_;
};

enum class Verdict { Verified, NotVerified, Unparsed };

std::string_view to_string(Verdict v);
std::optional<Verdict> verdict_from_string(std::string_view s);

struct RefinementStep {
  AgentKind agent = AgentKind::FactRefine;
  Verdict verification_verdict = Verdict::Unparsed;
  std::string verification_justification;
  std::string refined_response;
  std::string refinement_justification;
  std::string raw_output;

  bool operator==(const RefinementStep&) const = default;
};

struct TokenCounts {
  std::int64_t prompt = 0;
  std::int64_t completion = 0;

  TokenCounts& operator+=(const TokenCounts& o) {
    prompt += o.prompt;
    completion += o.completion;
    return *this;
  }
  bool operator==(const TokenCounts&) const = default;
};

struct StageTiming {
  std::string stage;
  double ms = 0.0;

  bool operator==(const StageTiming&) const = default;
};

struct RefinementTrace {
  std::string strategy;
  std::string initial_response;
  // Absent for strategies that never consult a planner.
  std::optional<RefinementPlan> plan;
  std::vector<RefinementStep> steps;
  std::string final_response;

  // Logical agent invocations: 1 + planner + refiners + finalizer.
  int agent_calls = 0;
  // Raw gateway requests including parse retries.
  int gateway_calls = 0;
  // Refiner calls spent exploring candidates (ideal planner only).
  int search_calls = 0;
  bool planner_invoked = false;
  bool planner_fallback_used = false;
  bool finalizer_invoked = false;

  std::vector<StageTiming> timings;
  TokenCounts tokens;
  std::vector<std::string> cassette_keys;
  std::vector<std::string> warnings;

  /// final_response matches the last step (or the initial response when
  /// there are no steps). The simultaneous strategy's merged output is
  /// exempt because it comes from the finalizer, not a step.
  bool final_matches_steps() const;

  bool operator==(const RefinementTrace&) const = default;
};

}  // namespace refinery
