#include "refinery/service/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "refinery/error.hpp"
#include "refinery/evalkit/metrics.hpp"

namespace refinery::service {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw Error(ErrorKind::Config, fmt::format("config '{}': {}", key, why));
}

void allow_only(const json& obj, const std::string& where, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) bad(where.empty() ? "<root>" : where, "expected an object");
  std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items()) {
    if (!ok.count(k)) {
      std::string names;
      for (const auto& n : ok) names += (names.empty() ? "" : ", ") + n;
      bad(where.empty() ? k : where + "." + k, "unknown key (valid: " + names + ")");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, const std::string& where, T& out) {
  if (!obj.contains(key) || obj[key].is_null()) return;
  try {
    out = obj[key].get<T>();
  } catch (const json::exception&) {
    bad(where.empty() ? key : where + "." + key, "wrong type");
  }
}

void read_agent_config(const json& j, const std::string& where, agents::AgentConfig& c) {
  allow_only(j, where, {"model_id", "temperature", "max_tokens", "retry_on_parse_failure", "per_agent"});
  read(j, "model_id", where, c.model_id);
  read(j, "temperature", where, c.temperature);
  read(j, "max_tokens", where, c.max_tokens);
  read(j, "retry_on_parse_failure", where, c.retry_on_parse_failure);
}

AgentKind refiner_letter(const std::string& s, const std::string& where) {
  if (s == "F" || s == "fact") return AgentKind::FactRefine;
  if (s == "P" || s == "persona") return AgentKind::PersonaRefine;
  if (s == "C" || s == "coherence") return AgentKind::CoherenceRefine;
  bad(where, fmt::format("'{}' is not a refiner (fact, persona, coherence)", s));
}

// Text between the last `open` tag and the following `close` tag.
std::string last_tagged(const std::string& text, const std::string& open, const std::string& close) {
  auto b = text.rfind(open);
  if (b == std::string::npos) return {};
  b += open.size();
  auto e = text.find(close, b);
  return text.substr(b, e == std::string::npos ? std::string::npos : e - b);
}

std::string echo_refinement(const std::string& aspect, const std::string& text) {
  return fmt::format(
      "<response><verification>{0} is verified.</verification>"
      "<verification_justification>Nothing to change.</verification_justification>"
      "<refined_response>{1}</refined_response>"
      "<refinement_justification>Kept as is.</refinement_justification></response>",
      aspect, text);
}

}  // namespace

ServiceConfig parse_config(const json& j) {
  ServiceConfig c;
  allow_only(j, "",
             {"backend", "record_from", "scripted", "cassette_dir", "live", "retry", "requests_per_minute", "agents",
              "agent_options", "prompt_dir", "judge", "planner_fallback", "random_weights", "policy", "parallelism",
              "seed", "output_dir", "report", "cors_origin", "sessions_dir"});

  read(j, "backend", "", c.backend);
  static const std::set<std::string> backends{"scripted", "replay", "record", "live"};
  if (!backends.count(c.backend)) bad("backend", "must be one of live, record, replay, scripted");
  read(j, "record_from", "", c.record_from);
  if (c.record_from != "live" && c.record_from != "scripted") bad("record_from", "must be live or scripted");
  if (j.contains("scripted") && !j["scripted"].is_null()) {
    if (!j["scripted"].is_object()) bad("scripted", "expected a rule table object");
    c.scripted = j["scripted"];
  }
  std::string s;
  read(j, "cassette_dir", "", s);
  if (!s.empty()) c.cassette_dir = s;

  if (j.contains("live")) {
    const auto& l = j["live"];
    allow_only(l, "live", {"wire", "endpoint", "api_key_env", "timeout_seconds"});
    std::string wire = "openai";
    read(l, "wire", "live", wire);
    if (wire == "openai") c.live.wire = llm::WireFormat::OpenAIChat;
    else if (wire == "anthropic") c.live.wire = llm::WireFormat::AnthropicMessages;
    else bad("live.wire", "must be openai or anthropic");
    read(l, "endpoint", "live", c.live.endpoint);
    read(l, "api_key_env", "live", c.live.api_key_env);
    read(l, "timeout_seconds", "live", c.live.timeout_seconds);
  }
  if (j.contains("retry")) {
    const auto& r = j["retry"];
    allow_only(r, "retry", {"max_attempts", "base_delay_ms", "multiplier"});
    read(r, "max_attempts", "retry", c.retry.max_attempts);
    long ms = c.retry.base_delay.count();
    read(r, "base_delay_ms", "retry", ms);
    c.retry.base_delay = std::chrono::milliseconds(ms);
    read(r, "multiplier", "retry", c.retry.multiplier);
    if (c.retry.max_attempts < 1) bad("retry.max_attempts", "must be >= 1");
  }
  read(j, "requests_per_minute", "", c.requests_per_minute);

  if (j.contains("agents")) {
    const auto& a = j["agents"];
    read_agent_config(a, "agents", c.roster.fallback);
    if (a.contains("per_agent")) {
      const auto& per = a["per_agent"];
      if (!per.is_object()) bad("agents.per_agent", "expected an object keyed by agent");
      for (const auto& [name, cfg] : per.items()) {
        const auto kind = agent_from_slug(name);
        if (!kind) bad("agents.per_agent." + name, "unknown agent");
        agents::AgentConfig ac = c.roster.fallback;
        read_agent_config(cfg, "agents.per_agent." + name, ac);
        c.roster.per_kind[*kind] = ac;
      }
    }
  }
  if (j.contains("agent_options")) {
    const auto& o = j["agent_options"];
    allow_only(o, "agent_options",
               {"responding_template", "fact_in_refiner_context", "history_for_refiners", "history_max_turns",
                "strict_tags"});
    read(o, "responding_template", "agent_options", c.agent_options.responding_template);
    read(o, "fact_in_refiner_context", "agent_options", c.agent_options.fact_in_refiner_context);
    read(o, "history_for_refiners", "agent_options", c.agent_options.history_for_refiners);
    std::size_t n = 0;
    if (o.contains("history_max_turns") && !o["history_max_turns"].is_null()) {
      read(o, "history_max_turns", "agent_options", n);
      c.agent_options.history_max_turns = n;
    }
    bool strict = false;
    read(o, "strict_tags", "agent_options", strict);
    c.agent_options.mode = strict ? tagparse::ExtractionMode::Strict : tagparse::ExtractionMode::Lenient;
  }
  std::string pd;
  read(j, "prompt_dir", "", pd);
  if (!pd.empty()) c.prompt_dir = pd;

  if (j.contains("judge")) {
    const auto& jj = j["judge"];
    allow_only(jj, "judge", {"preset", "model_id", "temperature", "sample_count", "max_tokens", "retry_on_parse_failure"});
    read(jj, "preset", "judge", c.judge_preset);
    c.judge = evalkit::judge_preset(c.judge_preset);
    read(jj, "model_id", "judge", c.judge.model_id);
    read(jj, "temperature", "judge", c.judge.temperature);
    read(jj, "sample_count", "judge", c.judge.sample_count);
    read(jj, "max_tokens", "judge", c.judge.max_tokens);
    read(jj, "retry_on_parse_failure", "judge", c.judge.retry_on_parse_failure);
    if (c.judge.sample_count < 1) bad("judge.sample_count", "must be >= 1");
  }

  if (j.contains("planner_fallback")) {
    if (!j["planner_fallback"].is_array()) bad("planner_fallback", "expected an array of refiners");
    c.fallback.order.clear();
    for (const auto& v : j["planner_fallback"]) {
      if (!v.is_string()) bad("planner_fallback", "expected refiner names");
      c.fallback.order.push_back(refiner_letter(v.get<std::string>(), "planner_fallback"));
    }
  }
  if (j.contains("random_weights")) {
    const auto& w = j["random_weights"];
    if (!w.is_object()) bad("random_weights", "expected {\"1\": w, \"2\": w, \"3\": w}");
    c.random_weights.clear();
    for (const auto& [k, v] : w.items()) {
      if (k != "1" && k != "2" && k != "3") bad("random_weights." + k, "plan length must be 1, 2 or 3");
      if (!v.is_number() || v.get<double>() < 0) bad("random_weights." + k, "weight must be a non-negative number");
      c.random_weights[std::stoi(k)] = v.get<double>();
    }
  }
  std::string policy = "gold";
  read(j, "policy", "", policy);
  if (policy == "gold") c.policy = pipeline::TurnPolicy::UseGoldHistory;
  else if (policy == "generated") c.policy = pipeline::TurnPolicy::UseGeneratedHistory;
  else bad("policy", "must be gold or generated");

  read(j, "parallelism", "", c.parallelism);
  if (c.parallelism < 1) bad("parallelism", "must be >= 1");
  read(j, "seed", "", c.seed);
  std::string out;
  read(j, "output_dir", "", out);
  if (!out.empty()) c.output_dir = out;
  if (j.contains("report")) {
    allow_only(j["report"], "report", {"overall"});
    read(j["report"], "overall", "report", c.report_overall);
  }
  read(j, "cors_origin", "", c.cors_origin);
  std::string sd;
  read(j, "sessions_dir", "", sd);
  if (!sd.empty()) c.sessions_dir = sd;
  return c;
}

ServiceConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Config, "cannot open config " + path.string());
  try {
    return parse_config(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, fmt::format("config {} is not valid JSON: {}", path.string(), e.what()));
  }
}

std::shared_ptr<llm::ScriptedBackend> demo_backend() {
  llm::ScriptedRule rule;
  rule.handler = [](const llm::ChatRequest& req) -> std::string {
    const std::string& first = req.messages.front().content;
    const std::string& last = req.messages.back().content;
    auto has = [&](const char* needle) { return first.find(needle) != std::string::npos; };
    if (last.find("Evaluation Criteria") != std::string::npos)
      return last.find("Groundedness (0-1)") != std::string::npos ? "1" : "2";
    if (has("<role>Planner Agent</role>"))
      return "<agents_set>None</agents_set>"
             "<agents_set_justification>The initial response already answers the query.</agents_set_justification>"
             "<agents_order>None</agents_order>"
             "<agents_order_justification>No refinement needed.</agents_order_justification>";
    if (has("<role>Fact Refining Agent</role>"))
      return echo_refinement("Fact", last_tagged(last, "<factChecking>", "</factChecking>"));
    if (has("<role>Persona Refining Agent</role>"))
      return echo_refinement("Persona", last_tagged(last, "<persona>", "</persona>"));
    if (has("<role>Coherence Refining Agent</role>"))
      return echo_refinement("Coherence", last_tagged(last, "<coherence>", "</coherence>"));
    if (has("<role>Refining Agent</role>"))
      return echo_refinement("Response", last_tagged(last, "<previousResponse>", "</previousResponse>"));
    if (has("<role>Finalizer Agent</role>"))
      return "<response>" + last_tagged(last, "<coherenceRefined>", "</coherenceRefined>") + "</response>";
    return "<response>ok</response>";
  };
  return std::make_shared<llm::ScriptedBackend>(std::vector<llm::ScriptedRule>{rule});
}

std::shared_ptr<llm::Backend> make_backend(const ServiceConfig& config) {
  auto scripted = [&]() -> std::shared_ptr<llm::Backend> {
    if (config.scripted) return llm::ScriptedBackend::from_json(*config.scripted);
    return demo_backend();
  };
  auto live = [&]() -> std::shared_ptr<llm::Backend> {
    if (config.live.endpoint.empty()) bad("live.endpoint", "required for the live backend");
    return std::make_shared<llm::LiveBackend>(config.live);
  };
  if (config.backend == "scripted") return scripted();
  if (config.backend == "live") return live();
  llm::CassetteStore store(config.cassette_dir);
  if (config.backend == "replay") return std::make_shared<llm::ReplayBackend>(store);
  return std::make_shared<llm::ReplayBackend>(store, config.record_from == "scripted" ? scripted() : live());
}

Engine build_engine(const ServiceConfig& config) { return build_engine(config, make_backend(config)); }

Engine build_engine(const ServiceConfig& config, std::shared_ptr<llm::Backend> backend) {
  Engine e;
  e.backend = std::move(backend);
  e.gateway = std::make_shared<llm::Gateway>(e.backend, config.retry, config.requests_per_minute);
  e.prompts = config.prompt_dir ? prompting::PromptLibrary::with_override_dir(*config.prompt_dir)
                                : prompting::PromptLibrary::builtin();
  e.agents = std::make_shared<agents::Agents>(e.gateway, e.prompts, config.roster, config.agent_options);
  e.pipeline = std::make_shared<pipeline::Pipeline>(e.agents);
  e.judge = std::make_shared<evalkit::Judge>(e.gateway, e.prompts, config.judge);
  return e;
}

pipeline::StrategyConfig make_strategy(const std::string& name, const ServiceConfig& config,
                                       std::shared_ptr<const evalkit::Judge> judge) {
  pipeline::StrategyConfig sc;
  sc.strategy = pipeline::parse_strategy(name);
  sc.fallback = config.fallback;
  if (auto* r = std::get_if<pipeline::RandomPlanner>(&sc.strategy)) {
    // An explicit "random:<seed>" wins over the global seed.
    if (name == "random") r->seed = config.seed;
    r->length_weights = config.random_weights;
  }
  if (auto* ideal = std::get_if<pipeline::IdealPlanner>(&sc.strategy)) {
    if (!judge) throw Error(ErrorKind::Config, "strategy 'ideal' needs a judge to score candidates");
    ideal->scorer = [judge](const Conversation& conv, const pipeline::Sequence&, const std::string& response) {
      const int turn = static_cast<int>(conv.turns().size());
      evalkit::MetricScores s;
      for (auto m : kAllMetrics) {
        const auto out = judge->judge(conv, turn, response, m);
        s.set(m, out.value.value_or(bounds(m).lo));
      }
      return s.overall();
    };
  }
  sc.validate();
  return sc;
}

}  // namespace refinery::service
