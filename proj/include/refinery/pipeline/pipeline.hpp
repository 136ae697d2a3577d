#pragma once

// Communication strategies: how refiners are arranged around the responding
// agent for one turn, and the per-conversation driver on top of that.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/agents/agents.hpp"
#include "refinery/core/model.hpp"
#include "refinery/error.hpp"

namespace refinery::pipeline {

using Sequence = std::vector<AgentKind>;

struct NoRefine {};
struct Simultaneous {};
struct FixedSequential {
  Sequence order;
};
struct Dynamic {};
struct SingleCombined {};
struct SingleCombinedIterative {
  int rounds = 2;
};
struct RandomPlanner {
  std::uint64_t seed = 0;
  // Plan length → relative weight. Lengths must be within 1..3.
  std::map<int, double> length_weights{{1, 1.0}, {2, 1.0}, {3, 1.0}};
};
/// Higher is better. Receives the conversation (open final turn), the
/// candidate sequence and the response it produced.
using Scorer = std::function<double(const Conversation&, const Sequence&, const std::string&)>;
struct IdealPlanner {
  Scorer scorer;
};

using Strategy = std::variant<NoRefine, Simultaneous, FixedSequential, Dynamic, SingleCombined,
                              SingleCombinedIterative, RandomPlanner, IdealPlanner>;

/// What Dynamic does when the planner output stays unparseable.
struct PlannerFallback {
  // Empty means no refinement.
  Sequence order{AgentKind::FactRefine, AgentKind::CoherenceRefine, AgentKind::PersonaRefine};
};

struct StrategyConfig {
  Strategy strategy = Dynamic{};
  PlannerFallback fallback;

  /// Throws Error(Validation) on an empty or repeating fixed order, rounds
  /// < 1, bad random weights or a missing ideal scorer.
  void validate() const;
};

/// "no-refine", "simultaneous", "sequential:F>C>P", "dynamic", "single",
/// "single-iterative:3", "random", "random:<seed>", "ideal".
std::string strategy_name(const Strategy& strategy);
/// Inverse of strategy_name. "ideal" yields an IdealPlanner without a
/// scorer; the caller must attach one. Throws Error(Config).
Strategy parse_strategy(const std::string& name);

struct StageEvent {
  // "responding", "planner", "refiner", "finalizer", "search", "complete"
  std::string stage;
  // "started" or "finished"
  std::string status;
  std::optional<AgentKind> agent;
  // Output text on "finished".
  std::string text;
};

using StageObserver = std::function<void(const StageEvent&)>;

struct CandidateScore {
  Sequence sequence;
  std::string response;
  double score = 0.0;
};

struct PipelineResult {
  std::string final_response;
  RefinementTrace trace;
  // IdealPlanner only: every enumerated candidate.
  std::vector<CandidateScore> candidates;
};

/// A turn failed; carries whatever the trace held at that point.
class TurnError : public Error {
 public:
  TurnError(ErrorKind kind, const std::string& message, RefinementTrace partial)
      : Error(kind, message), partial_(std::move(partial)) {}
  const RefinementTrace& partial_trace() const noexcept { return partial_; }

 private:
  RefinementTrace partial_;
};

enum class TurnPolicy { UseGoldHistory, UseGeneratedHistory };

struct TurnOutcome {
  int turn = 0;
  std::optional<PipelineResult> result;
  // Set when the turn failed.
  std::optional<std::string> error;
  std::optional<ErrorKind> error_kind;
  std::optional<RefinementTrace> partial_trace;
};

struct PipelineOptions {
  // Run the three simultaneous refiners on separate threads.
  bool parallel_simultaneous = true;
};

class Pipeline {
 public:
  explicit Pipeline(std::shared_ptr<const agents::Agents> agents, PipelineOptions options = {});

  /// Throws TurnError when an agent call fails hard.
  PipelineResult run_turn(const Conversation& conversation, const StrategyConfig& config,
                          const StageObserver& observer = {}) const;

  /// Every turn in order. Gold policy feeds dataset responses as history
  /// and keeps going past failures; generated policy feeds the pipeline's
  /// own outputs and stops at the first failure.
  std::vector<TurnOutcome> run_conversation(const Conversation& conversation,
                                            const StrategyConfig& config, TurnPolicy policy,
                                            const StageObserver& observer = {}) const;

  const agents::Agents& agents() const noexcept { return *agents_; }

 private:
  struct Chain {
    std::vector<RefinementStep> steps;
    std::string final_response;
  };

  PipelineResult run_turn_inner(const Conversation& conversation, const StrategyConfig& config,
                                const StageObserver& observer, RefinementTrace& trace) const;
  Chain run_chain(const Conversation& conversation, const std::string& initial,
                  const Sequence& order, const RefinementPlan& plan, RefinementTrace& trace,
                  const StageObserver& observer) const;

  std::shared_ptr<const agents::Agents> agents_;
  PipelineOptions options_;
};

/// All duplicate-free ordered sequences of the three aspect refiners,
/// lengths 0..3, shortest first (16 in total).
std::vector<Sequence> enumerate_sequences();

/// 1 (responding) + planner if invoked + refiner steps + finalizer if
/// invoked. Ideal-planner search calls are excluded.
double count_agent_calls(const RefinementTrace& trace, const StrategyConfig& config);

/// The sequence a RandomPlanner draws for a given conversation and turn.
Sequence random_sequence(const RandomPlanner& cfg, const std::string& conversation_id, int turn);

nlohmann::json trace_to_json(const RefinementTrace& trace);
RefinementTrace trace_from_json(const nlohmann::json& j);

/// Writes `<root>/runs/<run_id>/<conversation_id>/<turn>.json`.
std::filesystem::path write_trace(const std::filesystem::path& root, const std::string& run_id,
                                  const std::string& conversation_id, int turn,
                                  const RefinementTrace& trace);

}  // namespace refinery::pipeline
