#pragma once

// Run configuration (one JSON document) and the object graph built from it.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "refinery/agents/agents.hpp"
#include "refinery/evalkit/judge.hpp"
#include "refinery/llm/backends.hpp"
#include "refinery/llm/gateway.hpp"
#include "refinery/pipeline/pipeline.hpp"
#include "refinery/prompting/prompts.hpp"

namespace refinery::service {

struct ServiceConfig {
  // "scripted", "replay", "record" or "live".
  std::string backend = "scripted";
  // Source of misses in record mode: "live" or "scripted".
  std::string record_from = "live";
  // Scripted rule table; the built-in demo table when absent.
  std::optional<nlohmann::json> scripted;
  std::filesystem::path cassette_dir = "cassettes";
  llm::LiveConfig live;
  llm::RetryPolicy retry;
  double requests_per_minute = 0.0;

  agents::AgentRoster roster;
  agents::AgentOptions agent_options;
  std::optional<std::filesystem::path> prompt_dir;

  std::string judge_preset = "default";
  evalkit::JudgeConfig judge;

  pipeline::PlannerFallback fallback;
  std::map<int, double> random_weights{{1, 1.0}, {2, 1.0}, {3, 1.0}};
  pipeline::TurnPolicy policy = pipeline::TurnPolicy::UseGoldHistory;

  std::size_t parallelism = 4;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  bool report_overall = true;

  std::string cors_origin = "*";
  std::optional<std::filesystem::path> sessions_dir;
};

/// Unknown keys and ill-typed values throw Error(Config) naming the key.
ServiceConfig parse_config(const nlohmann::json& j);
ServiceConfig load_config(const std::filesystem::path& path);

/// Everything a command needs, wired from one config.
struct Engine {
  std::shared_ptr<llm::Backend> backend;
  std::shared_ptr<llm::Gateway> gateway;
  std::shared_ptr<const prompting::PromptLibrary> prompts;
  std::shared_ptr<agents::Agents> agents;
  std::shared_ptr<pipeline::Pipeline> pipeline;
  std::shared_ptr<evalkit::Judge> judge;
};

Engine build_engine(const ServiceConfig& config);
/// Same graph on top of a caller-supplied backend.
Engine build_engine(const ServiceConfig& config, std::shared_ptr<llm::Backend> backend);

std::shared_ptr<llm::Backend> make_backend(const ServiceConfig& config);

/// Offline stand-in for a model: answers "ok", plans no refinement, every
/// refiner returns the response it was given, judges give 2 (1 for
/// groundedness).
std::shared_ptr<llm::ScriptedBackend> demo_backend();

/// Strategy by name with config-driven fallback, seed and weights. "ideal"
/// scores candidates with `judge` (Overall over the four metrics).
pipeline::StrategyConfig make_strategy(const std::string& name, const ServiceConfig& config,
                                       std::shared_ptr<const evalkit::Judge> judge = nullptr);

}  // namespace refinery::service
