#pragma once

// CLI command bodies, callable in-process so tests can drive them.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "refinery/error.hpp"
#include "refinery/evalkit/dataset.hpp"
#include "refinery/evalkit/runner.hpp"
#include "refinery/service/config.hpp"

namespace refinery::service {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  // Bad config, flags or dataset.
  kExitConfig = 2,
  // A model call failed at runtime.
  kExitGateway = 3,
};

/// Gateway-side kinds (transport, cache miss, empty completion, scripted
/// miss) map to 3, input problems to 2, anything else to 1.
int exit_code_for(ErrorKind kind);

struct DatasetSpec {
  std::filesystem::path path;
  std::string source = "custom";
  std::string format = "jsonl";
  // Conversations sampled (id sort then seeded shuffle); all when unset.
  std::optional<std::size_t> sample;
};

/// Ingests and samples with the config seed. Warnings go to `log`.
std::vector<evalkit::DatasetRecord> load_dataset(const DatasetSpec& spec, std::uint64_t seed, std::ostream& log);

struct EvalRequest {
  DatasetSpec dataset;
  std::vector<std::string> strategies;
  int runs = 1;
  std::string run_id = "eval";
};

struct EvalOutcome {
  int exit_code = kExitOk;
  std::optional<evalkit::EvalResult> result;
  std::string message;
};

/// Runs the evaluation and writes traces plus the report under
/// `config.output_dir`. Gateway failures still write what was produced.
EvalOutcome cli_eval(const ServiceConfig& config, const Engine& engine, const EvalRequest& request,
                     std::ostream& log);

struct PlanDistribution {
  int turns = 0;
  // Turns whose planner output never parsed (excluded from frequencies).
  int unparsed = 0;
  std::map<AgentKind, int> counts;
  // Share of parsed turns whose plan includes the agent.
  std::map<AgentKind, double> frequency;
  std::map<std::size_t, int> length_histogram;
  double mean_length = 0.0;
};

/// Responds and plans every turn of the first `conversations` records
/// (gold history), without running refiners.
PlanDistribution plan_distribution(const std::vector<evalkit::DatasetRecord>& records, const agents::Agents& agents,
                                   std::size_t conversations);
std::string render_distribution(const PlanDistribution& d);

/// Interactive loop: each line is a user turn; "/trace" prints the last
/// trace, "/quit" (or end of input) exits with 0. Failures are printed
/// and the loop continues.
int run_chat(std::istream& in, std::ostream& out, const pipeline::Pipeline& pipeline,
             const pipeline::StrategyConfig& strategy, const Conversation& seed_conversation);

/// Plan sequence, verdicts and final response in a few lines.
std::string describe_trace(const RefinementTrace& trace);

struct CassetteCheck {
  std::size_t cassettes = 0;
  std::vector<std::string> problems;
};

/// Every `<dir>/*.json` must parse, carry the key its request hashes to,
/// be named after that key and hold at least one completion.
CassetteCheck verify_cassettes(const std::filesystem::path& dir);

}  // namespace refinery::service
