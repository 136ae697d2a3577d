#include "refinery/evalkit/judge.hpp"

#include <numeric>

#include <fmt/format.h>

#include "refinery/error.hpp"
#include "refinery/tagparse/tagparse.hpp"

namespace refinery::evalkit {

namespace {

const Turn& turn_at(const Conversation& c, int turn_index) {
  if (turn_index < 1 || static_cast<std::size_t>(turn_index) > c.turns().size())
    throw Error(ErrorKind::Validation, fmt::format("{} has no turn {}", c.id(), turn_index));
  return c.turns()[turn_index - 1];
}

std::string join(const std::vector<std::string>& xs, std::string_view sep) {
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += sep;
    out += x;
  }
  return out;
}

}  // namespace

JudgeConfig judge_preset(const std::string& name) {
  JudgeConfig c;
  if (name == "default") return c;
  if (name == "geval-classic") {
    c.sample_count = 20;
    c.temperature = 1.0;
    return c;
  }
  throw Error(ErrorKind::Config, fmt::format("unknown judge preset '{}' (valid: default, geval-classic)", name));
}

std::string judge_document(const Conversation& conversation, int turn_index) {
  turn_at(conversation, turn_index);
  std::string doc;
  for (int i = 0; i < turn_index; ++i) {
    const auto& t = conversation.turns()[i];
    doc += "User: " + t.query + "\n";
    if (i + 1 < turn_index) doc += "System: " + t.gold_response.value_or(t.response.value_or("")) + "\n";
  }
  if (!doc.empty()) doc.pop_back();
  return doc;
}

Judge::Judge(std::shared_ptr<llm::Gateway> gateway, std::shared_ptr<const prompting::PromptLibrary> prompts,
             JudgeConfig config)
    : gateway_(std::move(gateway)), prompts_(std::move(prompts)), config_(std::move(config)) {
  if (!gateway_ || !prompts_) throw Error(ErrorKind::Config, "judge needs a gateway and prompts");
  if (config_.sample_count < 1) throw Error(ErrorKind::Config, "judge sample_count must be >= 1");
}

JudgeOutcome Judge::judge(const Conversation& conversation, int turn_index, const std::string& candidate,
                          MetricKind metric) const {
  const auto& turn = turn_at(conversation, turn_index);
  if (candidate.find_first_not_of(" \t\r\n") == std::string::npos)
    throw Error(ErrorKind::Validation, "judge needs a non-empty candidate response");
  if (!turn.gold_response)
    throw Error(ErrorKind::Validation, fmt::format("{} turn {} has no gold response", conversation.id(), turn_index));

  prompting::RenderContext ctx{
      {"document", judge_document(conversation, turn_index)},
      {"fact", conversation.fact().value_or("")},
      {"persona", join(conversation.persona(), " ")},
      {"gold_response", *turn.gold_response},
      {"response", candidate},
  };
  const auto rendered = prompting::render(prompts_->judge(metric), ctx);

  llm::ChatRequest req;
  req.model_id = config_.model_id;
  req.temperature = config_.temperature;
  req.max_tokens = config_.max_tokens;
  req.sample_count = config_.sample_count;
  if (!rendered.system.empty()) req.messages.push_back({llm::Role::System, rendered.system});
  req.messages.push_back({llm::Role::User, rendered.user});

  JudgeOutcome out;
  out.metric = metric;
  for (int attempt = 0; attempt <= config_.retry_on_parse_failure && out.samples.empty(); ++attempt) {
    const auto completions = gateway_->sample(req);
    ++out.gateway_calls;
    for (const auto& c : completions) {
      try {
        out.samples.push_back(tagparse::parse_judge_score(c.text, metric).value);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::JudgeParse && e.kind() != ErrorKind::Bounds) throw;
        ++out.rejected;
        out.error = e.what();
      }
    }
  }
  if (!out.samples.empty()) {
    out.value = std::accumulate(out.samples.begin(), out.samples.end(), 0.0) /
                static_cast<double>(out.samples.size());
    out.error.clear();
  }
  return out;
}

std::vector<JudgeOutcome> Judge::judge_all(const Conversation& conversation, int turn_index,
                                           const std::string& candidate) const {
  std::vector<JudgeOutcome> out;
  for (auto m : kAllMetrics) out.push_back(judge(conversation, turn_index, candidate, m));
  return out;
}

}  // namespace refinery::evalkit
