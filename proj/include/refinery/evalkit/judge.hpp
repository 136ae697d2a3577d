#pragma once

// Model-as-judge scoring of one candidate response on one metric.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "refinery/core/metric.hpp"
#include "refinery/core/model.hpp"
#include "refinery/evalkit/metrics.hpp"
#include "refinery/llm/gateway.hpp"
#include "refinery/prompting/prompts.hpp"

namespace refinery::evalkit {

struct JudgeConfig {
  std::string model_id = "scripted";
  double temperature = 0.0;
  // Completions averaged per score. Many samples at temperature 1 stand in
  // for probability-weighted scoring when token probabilities are hidden.
  int sample_count = 1;
  int max_tokens = 16;
  // Extra requests when no sample parses.
  int retry_on_parse_failure = 1;
};

/// "default" (1 sample, temperature 0) or "geval-classic" (20 samples,
/// temperature 1). Throws Error(Config) for anything else.
JudgeConfig judge_preset(const std::string& name);

struct JudgeOutcome {
  MetricKind metric = MetricKind::Coherence;
  // Mean of the parsed samples; nullopt when none parsed (metric missing).
  std::optional<double> value;
  std::vector<double> samples;
  // Samples discarded as unparseable or off-scale.
  int rejected = 0;
  int gateway_calls = 0;
  std::string error;
};

class Judge {
 public:
  Judge(std::shared_ptr<llm::Gateway> gateway, std::shared_ptr<const prompting::PromptLibrary> prompts,
        JudgeConfig config = {});

  /// Scores `candidate` as the response to turn `turn_index` (1-based) of a
  /// dataset conversation. Throws Error(Validation) on an empty candidate or
  /// a turn without a gold response. Transport failures propagate.
  JudgeOutcome judge(const Conversation& conversation, int turn_index, const std::string& candidate,
                     MetricKind metric) const;

  /// All four metrics.
  std::vector<JudgeOutcome> judge_all(const Conversation& conversation, int turn_index,
                                      const std::string& candidate) const;

  const JudgeConfig& config() const noexcept { return config_; }

 private:
  std::shared_ptr<llm::Gateway> gateway_;
  std::shared_ptr<const prompting::PromptLibrary> prompts_;
  JudgeConfig config_;
};

/// "User: ...\nSystem: ...\n...User: <query k>" for turns 1..k, using gold
/// responses for the earlier turns.
std::string judge_document(const Conversation& conversation, int turn_index);

}  // namespace refinery::evalkit
