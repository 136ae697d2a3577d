#pragma once

// Evaluation driver: strategies × runs × conversations through the
// pipeline, every produced turn judged, results aggregated and reported.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/evalkit/aggregate.hpp"
#include "refinery/evalkit/dataset.hpp"
#include "refinery/evalkit/judge.hpp"
#include "refinery/evalkit/report.hpp"
#include "refinery/pipeline/pipeline.hpp"

namespace refinery::evalkit {

struct EvalStrategy {
  std::string label;
  pipeline::StrategyConfig config;
};

struct EvalOptions {
  std::vector<EvalStrategy> strategies;
  int runs = 1;
  pipeline::TurnPolicy policy = pipeline::TurnPolicy::UseGoldHistory;
  // Conversations processed concurrently.
  std::size_t parallelism = 4;
  // Traces and report go under `<output_root>/runs/...` when set.
  std::optional<std::filesystem::path> output_root;
  std::string run_id = "run";
  // Overall column in the markdown table.
  bool report_overall = true;
  // Copied into the report's "config" section.
  nlohmann::json metadata = nlohmann::json::object();
};

struct TurnFailure {
  std::string label;
  int run = 0;
  TurnKey key;
  ErrorKind kind = ErrorKind::Validation;
  std::string message;
};

struct EvalResult {
  std::vector<RunAggregate> aggregates;
  ReportStats stats;
  nlohmann::json report;
  std::string markdown;
  std::vector<TurnFailure> failures;
  // Set when output_root was given.
  std::optional<ReportPaths> paths;

  bool has_transport_failure() const;
};

/// Directory name used for one (strategy, run) pair's traces: the run id
/// itself for a single strategy and run, else "<run_id>.<label>.r<k>".
std::string trace_run_id(const EvalOptions& options, const std::string& label, int run);

/// Throws Error(Config) with no strategies or runs < 1.
EvalResult run_eval(const std::vector<DatasetRecord>& records, const pipeline::Pipeline& pipeline,
                    const Judge& judge, const EvalOptions& options);

}  // namespace refinery::evalkit
