#include <fstream>

#include "refinery/pipeline/pipeline.hpp"

namespace refinery::pipeline {

namespace {

AgentKind kind_from(const nlohmann::json& j) {
  auto k = agent_from_slug(j.get<std::string>());
  if (!k) throw Error(ErrorKind::Validation, "unknown agent '" + j.get<std::string>() + "' in trace");
  return *k;
}

std::string safe_component(const std::string& s) {
  std::string out;
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

}  // namespace

nlohmann::json trace_to_json(const RefinementTrace& t) {
  nlohmann::json j;
  j["strategy"] = t.strategy;
  j["initial_response"] = t.initial_response;
  if (t.plan) {
    nlohmann::json seq = nlohmann::json::array();
    for (auto k : t.plan->sequence()) seq.push_back(slug(k));
    j["plan"] = {{"sequence", seq},
                 {"set_justification", t.plan->set_justification()},
                 {"order_justification", t.plan->order_justification()}};
  } else {
    j["plan"] = nullptr;
  }
  j["steps"] = nlohmann::json::array();
  for (const auto& s : t.steps) {
    j["steps"].push_back({{"agent", slug(s.agent)},
                          {"verdict", to_string(s.verification_verdict)},
                          {"verification_justification", s.verification_justification},
                          {"refined_response", s.refined_response},
                          {"refinement_justification", s.refinement_justification},
                          {"raw_output", s.raw_output}});
  }
  j["final_response"] = t.final_response;
  j["agent_calls"] = t.agent_calls;
  j["gateway_calls"] = t.gateway_calls;
  j["search_calls"] = t.search_calls;
  j["planner_invoked"] = t.planner_invoked;
  j["planner_fallback_used"] = t.planner_fallback_used;
  j["finalizer_invoked"] = t.finalizer_invoked;
  j["timings"] = nlohmann::json::array();
  for (const auto& tm : t.timings) j["timings"].push_back({{"stage", tm.stage}, {"ms", tm.ms}});
  j["tokens"] = {{"prompt", t.tokens.prompt}, {"completion", t.tokens.completion}};
  j["cassette_keys"] = t.cassette_keys;
  j["warnings"] = t.warnings;
  return j;
}

RefinementTrace trace_from_json(const nlohmann::json& j) {
  RefinementTrace t;
  try {
    t.strategy = j.at("strategy").get<std::string>();
    t.initial_response = j.at("initial_response").get<std::string>();
    if (!j.at("plan").is_null()) {
      const auto& p = j["plan"];
      std::vector<AgentKind> seq;
      for (const auto& k : p.at("sequence")) seq.push_back(kind_from(k));
      t.plan = RefinementPlan(std::move(seq), p.value("set_justification", ""),
                              p.value("order_justification", ""));
    }
    for (const auto& s : j.at("steps")) {
      RefinementStep step;
      step.agent = kind_from(s.at("agent"));
      auto v = verdict_from_string(s.at("verdict").get<std::string>());
      step.verification_verdict = v.value_or(Verdict::Unparsed);
      step.verification_justification = s.value("verification_justification", "");
      step.refined_response = s.at("refined_response").get<std::string>();
      step.refinement_justification = s.value("refinement_justification", "");
      step.raw_output = s.value("raw_output", "");
      t.steps.push_back(std::move(step));
    }
    t.final_response = j.at("final_response").get<std::string>();
    t.agent_calls = j.at("agent_calls").get<int>();
    t.gateway_calls = j.value("gateway_calls", 0);
    t.search_calls = j.value("search_calls", 0);
    t.planner_invoked = j.value("planner_invoked", false);
    t.planner_fallback_used = j.value("planner_fallback_used", false);
    t.finalizer_invoked = j.value("finalizer_invoked", false);
    for (const auto& tm : j.value("timings", nlohmann::json::array())) {
      t.timings.push_back({tm.at("stage").get<std::string>(), tm.at("ms").get<double>()});
    }
    if (j.contains("tokens")) {
      t.tokens = {j["tokens"].value("prompt", std::int64_t{0}),
                  j["tokens"].value("completion", std::int64_t{0})};
    }
    t.cassette_keys = j.value("cassette_keys", std::vector<std::string>{});
    t.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("malformed trace JSON: ") + e.what());
  }
  return t;
}

std::filesystem::path write_trace(const std::filesystem::path& root, const std::string& run_id,
                                  const std::string& conversation_id, int turn,
                                  const RefinementTrace& trace) {
  auto dir = root / "runs" / safe_component(run_id) / safe_component(conversation_id);
  std::filesystem::create_directories(dir);
  auto path = dir / (std::to_string(turn) + ".json");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Config, "cannot write trace " + path.string());
  out << trace_to_json(trace).dump(2) << '\n';
  return path;
}

}  // namespace refinery::pipeline
