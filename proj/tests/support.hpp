#pragma once

#include <memory>
#include <string>
#include <vector>

#include "refinery/agents/agents.hpp"
#include "refinery/core/model.hpp"
#include "refinery/llm/backends.hpp"
#include "refinery/llm/gateway.hpp"
#include "refinery/pipeline/pipeline.hpp"

namespace testing {

using namespace refinery;

inline Conversation one_turn(std::string query = "Wow, what is this?",
                             std::optional<std::string> fact = std::nullopt,
                             std::vector<std::string> persona = {"I like hiking."},
                             std::vector<std::string> keywords = {"Chaos Crags"}) {
  return Conversation("c1", std::move(persona), std::move(fact), std::move(keywords),
                      {Turn{1, std::move(query), std::nullopt, std::nullopt}});
}

inline std::string refiner_reply(std::string_view aspect, const std::string& refined,
                                 bool verified = false) {
  return "<response><verification>" + std::string(aspect) + (verified ? " is verified." : " is not verified.") +
         "</verification><verification_justification>j</verification_justification>"
         "<refined_response>" + refined + "</refined_response>"
         "<refinement_justification>r</refinement_justification></response>";
}

// Which agent a request is addressed to, read from its system prompt.
inline AgentKind addressed_to(const llm::ChatRequest& req) {
  const std::string& s = req.messages.front().content;
  if (s.find("<role>Planner Agent</role>") != std::string::npos) return AgentKind::Planner;
  if (s.find("<role>Fact Refining Agent</role>") != std::string::npos) return AgentKind::FactRefine;
  if (s.find("<role>Persona Refining Agent</role>") != std::string::npos) return AgentKind::PersonaRefine;
  if (s.find("<role>Coherence Refining Agent</role>") != std::string::npos) return AgentKind::CoherenceRefine;
  if (s.find("<role>Refining Agent</role>") != std::string::npos) return AgentKind::CombinedRefine;
  if (s.find("<role>Finalizer Agent</role>") != std::string::npos) return AgentKind::Finalizer;
  if (s.find("<role>Responding Agent</role>") != std::string::npos) return AgentKind::Responding;
  return AgentKind::Judge;
}

// Scripted backend routing each request through one handler.
inline std::shared_ptr<llm::ScriptedBackend> handler_backend(llm::ScriptedHandler h) {
  llm::ScriptedRule rule;
  rule.pattern = "";
  rule.handler = std::move(h);
  return std::make_shared<llm::ScriptedBackend>(std::vector<llm::ScriptedRule>{rule});
}

// Backend where every refiner appends its letter to the response it was
// handed, the planner answers `plan_text` and the responding agent "R0".
inline std::string marker_echo(const llm::ChatRequest& req, const std::string& plan_text) {
  auto kind = addressed_to(req);
  const std::string& user = req.messages.back().content;
  auto between = [&](const std::string& open, const std::string& close) {
    auto b = user.find(open);
    if (b == std::string::npos) return std::string();
    b += open.size();
    return user.substr(b, user.find(close, b) - b);
  };
  switch (kind) {
    case AgentKind::Responding: return "<response>R0</response>";
    case AgentKind::Planner: return plan_text;
    case AgentKind::FactRefine: return refiner_reply("Fact", between("<factChecking>", "</factChecking>") + "+F");
    case AgentKind::PersonaRefine: return refiner_reply("Persona", between("<persona>", "</persona>") + "+P");
    case AgentKind::CoherenceRefine: return refiner_reply("Coherence", between("<coherence>", "</coherence>") + "+C");
    case AgentKind::CombinedRefine:
      return refiner_reply("Response", between("<previousResponse>", "</previousResponse>") + "+S");
    case AgentKind::Finalizer:
      return "<response>" + between("<factRefined>", "</factRefined>") + "|" +
             between("<personaRefined>", "</personaRefined>") + "|" +
             between("<coherenceRefined>", "</coherenceRefined>") + "</response>";
    default: return "2";
  }
}

struct Rig {
  std::shared_ptr<llm::Backend> backend;
  std::shared_ptr<llm::Gateway> gateway;
  std::shared_ptr<agents::Agents> agents;
  std::shared_ptr<pipeline::Pipeline> pipeline;
};

inline Rig make_rig(std::shared_ptr<llm::Backend> backend, agents::AgentOptions options = {},
                    pipeline::PipelineOptions popts = {}) {
  Rig r;
  r.backend = backend;
  r.gateway = std::make_shared<llm::Gateway>(backend, llm::RetryPolicy{1, std::chrono::milliseconds{0}, 1.0});
  r.agents = std::make_shared<agents::Agents>(r.gateway, prompting::PromptLibrary::builtin(),
                                              agents::AgentRoster{}, options);
  r.pipeline = std::make_shared<pipeline::Pipeline>(r.agents, popts);
  return r;
}

inline Rig echo_rig(std::string plan_text = "<agents_set>None</agents_set>") {
  return make_rig(handler_backend([plan_text](const llm::ChatRequest& req) {
    return marker_echo(req, plan_text);
  }));
}

}  // namespace testing
