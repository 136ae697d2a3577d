#include "refinery/core/model.hpp"

#include <algorithm>

#include "refinery/error.hpp"

namespace refinery {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::CacheMiss: return "cache-miss";
    case ErrorKind::EmptyCompletion: return "empty-completion";
    case ErrorKind::ScriptedMiss: return "scripted-miss";
    case ErrorKind::Render: return "render";
    case ErrorKind::TagNotFound: return "tag-not-found";
    case ErrorKind::PlannerParse: return "planner-parse";
    case ErrorKind::MissingRefinement: return "missing-refinement";
    case ErrorKind::JudgeParse: return "judge-parse";
    case ErrorKind::Bounds: return "bounds";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Stat: return "stat";
    case ErrorKind::Ingest: return "ingest";
    case ErrorKind::Aggregation: return "aggregation";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

std::string_view display_name(AgentKind kind) {
  switch (kind) {
    case AgentKind::Responding: return "Responding Agent";
    case AgentKind::Planner: return "Planner Agent";
    case AgentKind::FactRefine: return "Fact Refining Agent";
    case AgentKind::PersonaRefine: return "Persona Refining Agent";
    case AgentKind::CoherenceRefine: return "Coherence Refining Agent";
    case AgentKind::Finalizer: return "Finalizer Agent";
    case AgentKind::Judge: return "Judge";
    case AgentKind::CombinedRefine: return "Refining Agent";
  }
  return "?";
}

std::string_view slug(AgentKind kind) {
  switch (kind) {
    case AgentKind::Responding: return "responding";
    case AgentKind::Planner: return "planner";
    case AgentKind::FactRefine: return "fact";
    case AgentKind::PersonaRefine: return "persona";
    case AgentKind::CoherenceRefine: return "coherence";
    case AgentKind::Finalizer: return "finalizer";
    case AgentKind::Judge: return "judge";
    case AgentKind::CombinedRefine: return "combined";
  }
  return "?";
}

std::optional<AgentKind> agent_from_slug(std::string_view s) {
  for (auto k : {AgentKind::Responding, AgentKind::Planner, AgentKind::FactRefine,
                 AgentKind::PersonaRefine, AgentKind::CoherenceRefine, AgentKind::Finalizer,
                 AgentKind::Judge, AgentKind::CombinedRefine}) {
    if (slug(k) == s) return k;
  }
  return std::nullopt;
}

bool is_aspect_refiner(AgentKind kind) {
  return kind == AgentKind::FactRefine || kind == AgentKind::PersonaRefine ||
         kind == AgentKind::CoherenceRefine;
}

bool is_refiner(AgentKind kind) {
  return is_aspect_refiner(kind) || kind == AgentKind::CombinedRefine;
}

const std::vector<AgentKind>& aspect_refiners() {
  static const std::vector<AgentKind> kinds{AgentKind::FactRefine, AgentKind::PersonaRefine,
                                            AgentKind::CoherenceRefine};
  return kinds;
}

// ---------------------------------------------------------------------------

Conversation::Conversation(std::string id, std::vector<std::string> persona,
                           std::optional<std::string> fact, std::vector<std::string> keywords,
                           std::vector<Turn> turns)
    : id_(std::move(id)),
      persona_(std::move(persona)),
      fact_(std::move(fact)),
      keywords_(std::move(keywords)),
      turns_(std::move(turns)) {
  if (id_.empty()) throw Error(ErrorKind::Validation, "conversation id must be non-empty");
  for (std::size_t i = 0; i < turns_.size(); ++i) {
    const Turn& t = turns_[i];
    if (t.index != static_cast<int>(i) + 1) {
      throw Error(ErrorKind::Validation, "conversation " + id_ + ": turn " + std::to_string(i + 1) +
                                             " has index " + std::to_string(t.index));
    }
    if (t.query.empty()) {
      throw Error(ErrorKind::Validation,
                  "conversation " + id_ + ": turn " + std::to_string(t.index) + " has empty query");
    }
    if (!t.response && i + 1 != turns_.size()) {
      throw Error(ErrorKind::Validation, "conversation " + id_ + ": turn " +
                                             std::to_string(t.index) +
                                             " lacks a response but is not the final turn");
    }
  }
}

const Turn& Conversation::last_turn() const {
  if (turns_.empty()) throw Error(ErrorKind::Validation, "conversation has no turns");
  return turns_.back();
}

bool Conversation::awaiting_response() const {
  return !turns_.empty() && !turns_.back().response.has_value();
}

Conversation Conversation::with_last_response(std::string response) const {
  Conversation copy = *this;
  if (copy.turns_.empty()) throw Error(ErrorKind::Validation, "conversation has no turns");
  copy.turns_.back().response = std::move(response);
  return copy;
}

Conversation Conversation::prefix(std::size_t count) const {
  Conversation copy = *this;
  if (count < copy.turns_.size()) copy.turns_.resize(count);
  return copy;
}

Conversation append_turn(const Conversation& conversation, std::string query) {
  if (query.empty()) throw Error(ErrorKind::Validation, "query must be non-empty");
  if (conversation.awaiting_response()) {
    throw Error(ErrorKind::Validation, "previous turn has not been answered");
  }
  std::vector<Turn> turns = conversation.turns();
  Turn t;
  t.index = static_cast<int>(turns.size()) + 1;
  t.query = std::move(query);
  turns.push_back(std::move(t));
  return Conversation(conversation.id(), conversation.persona(), conversation.fact(),
                      conversation.keywords(), std::move(turns));
}

std::vector<HistoryPair> history_view(const Conversation& conversation,
                                      std::optional<std::size_t> max_turns) {
  std::vector<HistoryPair> out;
  for (const Turn& t : conversation.turns()) {
    if (t.response) out.emplace_back(t.query, *t.response);
  }
  if (max_turns && out.size() > *max_turns) {
    out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(*max_turns));
  }
  return out;
}

// ---------------------------------------------------------------------------

RefinementPlan::RefinementPlan(std::vector<AgentKind> sequence, std::string set_justification,
                               std::string order_justification)
    : set_justification_(std::move(set_justification)),
      order_justification_(std::move(order_justification)) {
  for (AgentKind k : sequence) {
    if (!is_aspect_refiner(k)) {
      throw Error(ErrorKind::Domain,
                  "plan may only contain aspect refiners, got " + std::string(display_name(k)));
    }
    if (std::find(sequence_.begin(), sequence_.end(), k) == sequence_.end()) {
      sequence_.push_back(k);
    }
  }
}

std::string RefinementPlan::order_text() const {
  if (sequence_.empty()) return "None";
  std::string out;
  for (std::size_t i = 0; i < sequence_.size(); ++i) {
    if (i) out += ", ";
    out += display_name(sequence_[i]);
  }
  return out;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Verified: return "verified";
    case Verdict::NotVerified: return "not_verified";
    case Verdict::Unparsed: return "unparsed";
  }
  return "unparsed";
}

std::optional<Verdict> verdict_from_string(std::string_view s) {
  if (s == "verified") return Verdict::Verified;
  if (s == "not_verified") return Verdict::NotVerified;
  if (s == "unparsed") return Verdict::Unparsed;
  return std::nullopt;
}

bool RefinementTrace::final_matches_steps() const {
  if (finalizer_invoked) return true;
  if (steps.empty()) return final_response == initial_response;
  return final_response == steps.back().refined_response;
}

}  // namespace refinery
