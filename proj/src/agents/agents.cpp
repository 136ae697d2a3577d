#include "refinery/agents/agents.hpp"

#include <chrono>

#include "refinery/error.hpp"
#include "refinery/llm/cassette.hpp"

namespace refinery::agents {

namespace {

using llm::ChatMessage;
using llm::Role;
using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<ChatMessage> frame(const prompting::RenderedPrompt& p, std::vector<ChatMessage> history) {
  std::vector<ChatMessage> out;
  if (!p.system.empty()) out.push_back({Role::System, p.system});
  for (auto& m : history) out.push_back(std::move(m));
  out.push_back({Role::User, p.user});
  return out;
}

}  // namespace

void CallStats::absorb(const CallStats& other) {
  gateway_calls += other.gateway_calls;
  ms += other.ms;
  tokens += other.tokens;
  cassette_keys.insert(cassette_keys.end(), other.cassette_keys.begin(), other.cassette_keys.end());
  warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
}

const AgentConfig& AgentRoster::get(AgentKind kind) const {
  auto it = per_kind.find(kind);
  return it == per_kind.end() ? fallback : it->second;
}

std::string persona_text(const Conversation& conversation) {
  std::string out;
  for (const auto& s : conversation.persona()) {
    if (!out.empty()) out += ' ';
    out += s;
  }
  return out;
}

std::string keyword_text(const Conversation& conversation) {
  std::string out;
  for (const auto& k : conversation.keywords()) {
    if (!out.empty()) out += ", ";
    out += k;
  }
  return out;
}

Agents::Agents(std::shared_ptr<llm::Gateway> gateway,
               std::shared_ptr<const prompting::PromptLibrary> prompts, AgentRoster roster,
               AgentOptions options)
    : gateway_(std::move(gateway)),
      prompts_(std::move(prompts)),
      roster_(std::move(roster)),
      options_(std::move(options)) {
  if (!gateway_) throw Error(ErrorKind::Config, "agents need a gateway");
  if (!prompts_) prompts_ = prompting::PromptLibrary::builtin();
}

template <typename Accept>
Agents::Exchange Agents::converse(AgentKind kind, std::vector<ChatMessage> messages,
                                  const std::string& tag, CallStats& stats, Accept&& accept) const {
  const AgentConfig& cfg = roster_.get(kind);
  const auto started = Clock::now();
  Exchange ex;
  for (int attempt = 0;; ++attempt) {
    llm::ChatRequest req;
    req.model_id = cfg.model_id;
    req.temperature = cfg.temperature;
    req.max_tokens = cfg.max_tokens;
    req.messages = messages;
    stats.cassette_keys.push_back(llm::cassette_key(req));
    ++stats.gateway_calls;
    auto completion = gateway_->complete(req);
    if (completion.token_usage) stats.tokens += *completion.token_usage;
    ex.text = std::move(completion.text);
    if (accept(ex.text)) {
      ex.parsed = true;
      break;
    }
    if (attempt >= cfg.retry_on_parse_failure) break;
    messages.push_back({Role::Assistant, ex.text});
    messages.push_back({Role::User, "Your previous output was missing <" + tag +
                                        ">; re-emit using the required tags."});
  }
  stats.ms += elapsed_ms(started);
  return ex;
}

std::vector<ChatMessage> Agents::history_messages(const Conversation& conversation) const {
  std::vector<ChatMessage> out;
  for (const auto& [q, r] : history_view(conversation, options_.history_max_turns)) {
    out.push_back({Role::User, "<question_text>" + q + "</question_text>"});
    out.push_back({Role::Assistant, r});
  }
  return out;
}

AgentResult<std::string> Agents::respond(const Conversation& conversation) const {
  if (!conversation.awaiting_response()) {
    throw Error(ErrorKind::Validation, "conversation " + conversation.id() + " has no open query");
  }
  prompting::RenderContext ctx{{"user_query", conversation.last_turn().query},
                               {"keyword", keyword_text(conversation)},
                               {"persona", persona_text(conversation)},
                               {"fact", conversation.fact().value_or("")}};
  auto rendered = prompting::render(prompts_->get(options_.responding_template), ctx);

  AgentResult<std::string> out;
  auto ex = converse(AgentKind::Responding, frame(rendered, history_messages(conversation)), "response",
                     out.stats, [&](const std::string& t) {
                       auto r = tagparse::find_tag(t, "response", options_.mode);
                       return r && !trim(*r).empty();
                     });
  if (ex.parsed) {
    out.value = trim(*tagparse::find_tag(ex.text, "response", options_.mode));
  } else {
    out.value = trim(ex.text);
    out.stats.warnings.push_back("responding agent omitted <response>; using raw output");
  }
  return out;
}

AgentResult<std::optional<tagparse::PlannerDecision>> Agents::plan(
    const Conversation& conversation, const std::string& initial_response) const {
  if (initial_response.empty()) throw Error(ErrorKind::Validation, "planner needs an initial response");
  prompting::RenderContext ctx{{"user_query", conversation.last_turn().query},
                               {"initial_response", initial_response},
                               {"keyword", keyword_text(conversation)},
                               {"persona", persona_text(conversation)}};
  auto rendered = prompting::render(prompts_->planner(), ctx);

  AgentResult<std::optional<tagparse::PlannerDecision>> out;
  std::string last_error;
  auto ex = converse(AgentKind::Planner, frame(rendered, {}), "agents_set", out.stats,
                     [&](const std::string& t) {
                       try {
                         out.value = tagparse::parse_planner(t, options_.mode);
                         return true;
                       } catch (const Error& e) {
                         last_error = e.what();
                         return false;
                       }
                     });
  if (!ex.parsed) {
    out.value.reset();
    out.stats.warnings.push_back("planner output unparseable: " + last_error);
  } else {
    for (const auto& w : out.value->warnings) out.stats.warnings.push_back(w);
  }
  return out;
}

AgentResult<RefinementStep> Agents::refine(AgentKind kind, const Conversation& conversation,
                                           const std::string& initial_response,
                                           const std::string& previous_response,
                                           std::optional<AgentKind> previous_agent,
                                           const RefinementPlan& plan) const {
  const auto& tmpl = prompts_->refiner(kind);
  std::string keyword = keyword_text(conversation);
  if (kind == AgentKind::FactRefine && options_.fact_in_refiner_context && conversation.fact()) {
    keyword = keyword.empty() ? "Fact: " + *conversation.fact()
                              : keyword + "\nFact: " + *conversation.fact();
  }
  prompting::RenderContext ctx{
      {"user_query", conversation.last_turn().query},
      {"initial_response", initial_response},
      {"generated_response", previous_response},
      {"keyword", keyword},
      {"persona", persona_text(conversation)},
      {"planned_agent_order", plan.order_text()},
      {"planned_agents_set_justification", plan.set_justification()},
      {"planned_agent_order_justification", plan.order_justification()},
  };
  if (previous_agent) ctx["previous_agent_name"] = std::string(display_name(*previous_agent));
  auto rendered = prompting::render(tmpl, ctx);

  AgentResult<RefinementStep> out;
  out.value.agent = kind;
  tagparse::RefinerOutput parsed;
  auto history = options_.history_for_refiners ? history_messages(conversation)
                                               : std::vector<ChatMessage>{};
  auto ex = converse(kind, frame(rendered, std::move(history)), "refined_response", out.stats,
                     [&](const std::string& t) {
                       try {
                         parsed = tagparse::parse_refiner(t, kind, options_.mode);
                         return true;
                       } catch (const Error&) {
                         return false;
                       }
                     });
  out.value.raw_output = ex.text;
  if (ex.parsed) {
    out.value.verification_verdict = parsed.verdict;
    out.value.verification_justification = parsed.verification_justification;
    out.value.refined_response = parsed.refined_response;
    out.value.refinement_justification = parsed.refinement_justification;
    if (parsed.verdict == Verdict::Unparsed) {
      out.stats.warnings.push_back(std::string(display_name(kind)) + " gave no recognizable verdict");
    }
  } else {
    out.value.verification_verdict = Verdict::Unparsed;
    out.value.refined_response = previous_response;
    out.stats.warnings.push_back(std::string(display_name(kind)) +
                                 " omitted <refined_response>; keeping the previous response");
  }
  return out;
}

AgentResult<std::string> Agents::finalize(const std::array<std::string, 3>& refined,
                                          const Conversation& conversation) const {
  prompting::RenderContext ctx{{"user_query", conversation.last_turn().query},
                               {"fact_refined_response", refined[0]},
                               {"persona_refined_response", refined[1]},
                               {"coherence_refined_response", refined[2]},
                               {"keyword", keyword_text(conversation)},
                               {"persona", persona_text(conversation)}};
  auto rendered = prompting::render(prompts_->finalizer(), ctx);
  AgentResult<std::string> out;
  auto history = options_.history_for_refiners ? history_messages(conversation)
                                               : std::vector<ChatMessage>{};
  auto ex = converse(AgentKind::Finalizer, frame(rendered, std::move(history)), "response", out.stats,
                     [&](const std::string& t) {
                       auto r = tagparse::find_tag(t, "response", options_.mode);
                       return r && !trim(*r).empty();
                     });
  if (ex.parsed) {
    out.value = trim(*tagparse::find_tag(ex.text, "response", options_.mode));
  } else {
    out.value = trim(ex.text);
    out.stats.warnings.push_back("finalizer omitted <response>; using raw output");
  }
  return out;
}

}  // namespace refinery::agents
