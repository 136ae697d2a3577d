#pragma once

// Per-run, per-turn scores reduced to strategy-level means ± run std.

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "refinery/core/metric.hpp"
#include "refinery/evalkit/metrics.hpp"

namespace refinery::evalkit {

struct TurnKey {
  std::string conversation_id;
  int turn = 0;

  auto operator<=>(const TurnKey&) const = default;
};

struct TurnScore {
  TurnKey key;
  TurnMetrics metrics;
  // Absent when the turn failed before producing a trace.
  std::optional<double> agent_calls;
};

using RunScores = std::vector<TurnScore>;

struct MetricAggregate {
  // Mean over runs of per-run turn means; nullopt when no run scored a turn.
  std::optional<double> mean;
  // Sample std over run means (n − 1); 0 with a single contributing run.
  double std = 0.0;
  std::vector<std::optional<double>> run_means;
  // Missing (turn, run) cells across all runs.
  int missing = 0;
  int scored = 0;
};

struct RunAggregate {
  std::string label;
  int run_count = 0;
  int turn_count = 0;
  std::map<MetricKind, MetricAggregate> metrics;
  // From the cross-run metric means; nullopt if any of them is missing.
  std::optional<double> overall;
  // Sample std of per-run Overall values.
  double overall_std = 0.0;
  std::vector<std::optional<double>> run_overall;
  std::optional<double> agent_calls;
  std::vector<std::optional<double>> run_agent_calls;
};

/// Throws Error(Aggregation) on zero runs, duplicate turns within a run or
/// runs covering different turn sets.
RunAggregate aggregate(const std::string& label, const std::vector<RunScores>& runs);

/// Sample standard deviation (n − 1); 0 for fewer than two values.
double sample_std(const std::vector<double>& xs);

}  // namespace refinery::evalkit
