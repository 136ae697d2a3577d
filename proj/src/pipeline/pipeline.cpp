#include "refinery/pipeline/pipeline.hpp"

#include <algorithm>
#include <future>
#include <mutex>
#include <random>

namespace refinery::pipeline {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void absorb(RefinementTrace& trace, const agents::CallStats& stats, const std::string& stage) {
  trace.gateway_calls += stats.gateway_calls;
  trace.tokens += stats.tokens;
  trace.cassette_keys.insert(trace.cassette_keys.end(), stats.cassette_keys.begin(),
                             stats.cassette_keys.end());
  trace.warnings.insert(trace.warnings.end(), stats.warnings.begin(), stats.warnings.end());
  trace.timings.push_back({stage, stats.ms});
}

std::string refine_stage(AgentKind kind) { return "refine:" + std::string(slug(kind)); }

void emit(const StageObserver& obs, std::string stage, std::string status,
          std::optional<AgentKind> agent = std::nullopt, std::string text = {}) {
  if (obs) obs({std::move(stage), std::move(status), agent, std::move(text)});
}

char letter(AgentKind kind) {
  switch (kind) {
    case AgentKind::FactRefine: return 'F';
    case AgentKind::PersonaRefine: return 'P';
    case AgentKind::CoherenceRefine: return 'C';
    default: throw Error(ErrorKind::Domain, "not an aspect refiner");
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// True when a should win over b under equal scores.
bool tie_break_less(const Sequence& a, const Sequence& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return std::lexicographical_compare(
      a.begin(), a.end(), b.begin(), b.end(),
      [](AgentKind x, AgentKind y) { return display_name(x) < display_name(y); });
}

}  // namespace

// ---------------------------------------------------------------------------

void StrategyConfig::validate() const {
  std::visit(overloaded{
                 [](const FixedSequential& s) {
                   if (s.order.empty()) throw Error(ErrorKind::Validation, "fixed order is empty");
                   RefinementPlan check(s.order);
                   if (check.sequence().size() != s.order.size()) {
                     throw Error(ErrorKind::Validation, "fixed order repeats an agent");
                   }
                 },
                 [](const SingleCombinedIterative& s) {
                   if (s.rounds < 1) throw Error(ErrorKind::Validation, "rounds must be >= 1");
                 },
                 [](const RandomPlanner& s) {
                   double total = 0;
                   for (const auto& [len, w] : s.length_weights) {
                     if (len < 1 || len > 3 || w < 0) {
                       throw Error(ErrorKind::Validation, "random planner weights need lengths 1..3");
                     }
                     total += w;
                   }
                   if (total <= 0) throw Error(ErrorKind::Validation, "random planner weights sum to 0");
                 },
                 [](const IdealPlanner& s) {
                   if (!s.scorer) throw Error(ErrorKind::Validation, "ideal planner needs a scorer");
                 },
                 [](const auto&) {},
             },
             strategy);
  RefinementPlan check(fallback.order);
  if (check.sequence().size() != fallback.order.size()) {
    throw Error(ErrorKind::Validation, "fallback order repeats an agent");
  }
}

std::string strategy_name(const Strategy& strategy) {
  return std::visit(overloaded{
                        [](const NoRefine&) -> std::string { return "no-refine"; },
                        [](const Simultaneous&) -> std::string { return "simultaneous"; },
                        [](const FixedSequential& s) {
                          std::string out = "sequential:";
                          for (std::size_t i = 0; i < s.order.size(); ++i) {
                            if (i) out += '>';
                            out += letter(s.order[i]);
                          }
                          return out;
                        },
                        [](const Dynamic&) -> std::string { return "dynamic"; },
                        [](const SingleCombined&) -> std::string { return "single"; },
                        [](const SingleCombinedIterative& s) {
                          return "single-iterative:" + std::to_string(s.rounds);
                        },
                        [](const RandomPlanner& s) {
                          return s.seed ? "random:" + std::to_string(s.seed) : std::string("random");
                        },
                        [](const IdealPlanner&) -> std::string { return "ideal"; },
                    },
                    strategy);
}

Strategy parse_strategy(const std::string& name) {
  auto colon = name.find(':');
  const std::string head = name.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : name.substr(colon + 1);
  auto number = [&](const std::string& what) {
    try {
      std::size_t used = 0;
      auto v = std::stoull(arg, &used);
      if (used != arg.size()) throw std::invalid_argument(arg);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorKind::Config, "strategy '" + name + "' needs a numeric " + what);
    }
  };
  if (name == "no-refine") return NoRefine{};
  if (name == "simultaneous") return Simultaneous{};
  if (name == "dynamic") return Dynamic{};
  if (name == "single") return SingleCombined{};
  if (name == "ideal") return IdealPlanner{};
  if (name == "random") return RandomPlanner{};
  if (head == "random" && !arg.empty()) return RandomPlanner{number("seed"), RandomPlanner{}.length_weights};
  if (head == "single-iterative" && !arg.empty()) {
    return SingleCombinedIterative{static_cast<int>(number("round count"))};
  }
  if (head == "sequential" && !arg.empty()) {
    FixedSequential s;
    for (std::size_t i = 0; i < arg.size(); ++i) {
      if (i % 2 == 1) {
        if (arg[i] != '>') throw Error(ErrorKind::Config, "bad sequential order '" + arg + "'");
        continue;
      }
      switch (arg[i]) {
        case 'F': s.order.push_back(AgentKind::FactRefine); break;
        case 'P': s.order.push_back(AgentKind::PersonaRefine); break;
        case 'C': s.order.push_back(AgentKind::CoherenceRefine); break;
        default: throw Error(ErrorKind::Config, "bad sequential order '" + arg + "'");
      }
    }
    return s;
  }
  throw Error(ErrorKind::Config, "unknown strategy '" + name +
                                     "' (valid: no-refine, simultaneous, sequential:F>C>P (any order of F, P, C), "
                                     "dynamic, single, single-iterative:N, random, random:SEED, ideal)");
}

std::vector<Sequence> enumerate_sequences() {
  std::vector<Sequence> out{{}};
  const auto& all = aspect_refiners();
  for (std::size_t len = 1; len <= all.size(); ++len) {
    const std::size_t count = out.size();
    for (std::size_t i = 0; i < count; ++i) {
      const Sequence prev = out[i];
      if (prev.size() != len - 1) continue;
      for (auto k : all) {
        if (std::find(prev.begin(), prev.end(), k) != prev.end()) continue;
        auto next = prev;
        next.push_back(k);
        out.push_back(std::move(next));
      }
    }
  }
  return out;
}

double count_agent_calls(const RefinementTrace& trace, const StrategyConfig&) {
  return 1.0 + (trace.planner_invoked ? 1.0 : 0.0) + static_cast<double>(trace.steps.size()) +
         (trace.finalizer_invoked ? 1.0 : 0.0);
}

Sequence random_sequence(const RandomPlanner& cfg, const std::string& conversation_id, int turn) {
  std::mt19937_64 rng((cfg.seed ^ fnv1a(conversation_id)) + static_cast<std::uint64_t>(turn));
  double total = 0;
  for (const auto& [len, w] : cfg.length_weights) total += w;
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  int length = cfg.length_weights.rbegin()->first;
  double acc = 0;
  for (const auto& [len, w] : cfg.length_weights) {
    acc += w;
    if (u < acc) {
      length = len;
      break;
    }
  }
  Sequence pool = aspect_refiners();
  for (std::size_t i = pool.size() - 1; i > 0; --i) {
    std::swap(pool[i], pool[rng() % (i + 1)]);
  }
  pool.resize(static_cast<std::size_t>(length));
  return pool;
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(std::shared_ptr<const agents::Agents> agents, PipelineOptions options)
    : agents_(std::move(agents)), options_(options) {
  if (!agents_) throw Error(ErrorKind::Config, "pipeline needs agents");
}

Pipeline::Chain Pipeline::run_chain(const Conversation& conversation, const std::string& initial,
                                    const Sequence& order, const RefinementPlan& plan,
                                    RefinementTrace& trace, const StageObserver& observer) const {
  Chain chain;
  std::string previous = initial;
  std::optional<AgentKind> previous_agent;
  for (auto kind : order) {
    emit(observer, "refiner", "started", kind);
    auto r = agents_->refine(kind, conversation, initial, previous, previous_agent, plan);
    absorb(trace, r.stats, refine_stage(kind));
    previous = r.value.refined_response;
    previous_agent = kind;
    trace.steps.push_back(r.value);
    chain.steps.push_back(std::move(r.value));
    emit(observer, "refiner", "finished", kind, previous);
  }
  chain.final_response = previous;
  return chain;
}

PipelineResult Pipeline::run_turn(const Conversation& conversation, const StrategyConfig& config,
                                  const StageObserver& observer) const {
  config.validate();
  if (!conversation.awaiting_response()) {
    throw Error(ErrorKind::Validation, "conversation " + conversation.id() + " has no open query");
  }
  std::mutex obs_mu;
  StageObserver safe;
  if (observer) {
    safe = [&](const StageEvent& e) {
      std::lock_guard lock(obs_mu);
      observer(e);
    };
  }
  RefinementTrace trace;
  trace.strategy = strategy_name(config.strategy);
  try {
    auto result = run_turn_inner(conversation, config, safe, trace);
    emit(safe, "complete", "finished", std::nullopt, result.final_response);
    return result;
  } catch (const TurnError&) {
    throw;
  } catch (const Error& e) {
    trace.agent_calls = static_cast<int>(count_agent_calls(trace, config));
    throw TurnError(e.kind(), e.what(), std::move(trace));
  }
}

PipelineResult Pipeline::run_turn_inner(const Conversation& conversation,
                                        const StrategyConfig& config, const StageObserver& observer,
                                        RefinementTrace& trace) const {
  PipelineResult result;

  emit(observer, "responding", "started", AgentKind::Responding);
  auto initial = agents_->respond(conversation);
  absorb(trace, initial.stats, "responding");
  trace.initial_response = initial.value;
  emit(observer, "responding", "finished", AgentKind::Responding, initial.value);

  const std::string& init = trace.initial_response;
  std::string final_response = init;

  std::visit(
      overloaded{
          [&](const NoRefine&) {},
          [&](const FixedSequential& s) {
            final_response = run_chain(conversation, init, s.order, RefinementPlan(s.order), trace,
                                       observer)
                                 .final_response;
          },
          [&](const Dynamic&) {
            emit(observer, "planner", "started", AgentKind::Planner);
            auto decision = agents_->plan(conversation, init);
            absorb(trace, decision.stats, "planner");
            trace.planner_invoked = true;
            RefinementPlan plan;
            if (decision.value) {
              plan = decision.value->plan;
            } else {
              plan = RefinementPlan(config.fallback.order);
              trace.planner_fallback_used = true;
            }
            trace.plan = plan;
            emit(observer, "planner", "finished", AgentKind::Planner, plan.order_text());
            final_response =
                run_chain(conversation, init, plan.sequence(), plan, trace, observer).final_response;
          },
          [&](const RandomPlanner& s) {
            RefinementPlan plan(random_sequence(s, conversation.id(), conversation.last_turn().index));
            trace.plan = plan;
            final_response =
                run_chain(conversation, init, plan.sequence(), plan, trace, observer).final_response;
          },
          [&](const SingleCombined&) {
            final_response = run_chain(conversation, init, {AgentKind::CombinedRefine},
                                       RefinementPlan{}, trace, observer)
                                 .final_response;
          },
          [&](const SingleCombinedIterative& s) {
            Sequence rounds(static_cast<std::size_t>(s.rounds), AgentKind::CombinedRefine);
            final_response =
                run_chain(conversation, init, rounds, RefinementPlan{}, trace, observer).final_response;
          },
          [&](const Simultaneous&) {
            const Sequence order{AgentKind::FactRefine, AgentKind::PersonaRefine,
                                 AgentKind::CoherenceRefine};
            const RefinementPlan plan(order);
            auto call = [&, this](AgentKind kind) {
              emit(observer, "refiner", "started", kind);
              auto r = agents_->refine(kind, conversation, init, init, std::nullopt, plan);
              emit(observer, "refiner", "finished", kind, r.value.refined_response);
              return r;
            };
            std::vector<agents::AgentResult<RefinementStep>> results;
            if (options_.parallel_simultaneous) {
              std::vector<std::future<agents::AgentResult<RefinementStep>>> futures;
              for (auto k : order) futures.push_back(std::async(std::launch::async, call, k));
              std::exception_ptr first_error;
              for (auto& f : futures) {
                try {
                  results.push_back(f.get());
                } catch (...) {
                  if (!first_error) first_error = std::current_exception();
                }
              }
              for (std::size_t i = 0; i < results.size(); ++i) {
                absorb(trace, results[i].stats, refine_stage(results[i].value.agent));
                trace.steps.push_back(results[i].value);
              }
              if (first_error) std::rethrow_exception(first_error);
            } else {
              for (auto k : order) {
                results.push_back(call(k));
                absorb(trace, results.back().stats, refine_stage(k));
                trace.steps.push_back(results.back().value);
              }
            }
            emit(observer, "finalizer", "started", AgentKind::Finalizer);
            auto merged = agents_->finalize({results[0].value.refined_response,
                                             results[1].value.refined_response,
                                             results[2].value.refined_response},
                                            conversation);
            absorb(trace, merged.stats, "finalizer");
            trace.finalizer_invoked = true;
            final_response = merged.value;
            emit(observer, "finalizer", "finished", AgentKind::Finalizer, final_response);
          },
          [&](const IdealPlanner& s) {
            emit(observer, "search", "started");
            struct Node {
              RefinementStep step;
              std::string response;
            };
            std::map<Sequence, Node> cache;
            agents::CallStats search;
            RefinementTrace scratch;
            for (const auto& seq : enumerate_sequences()) {
              if (seq.empty()) continue;
              Sequence parent(seq.begin(), seq.end() - 1);
              const std::string& previous = parent.empty() ? init : cache.at(parent).response;
              std::optional<AgentKind> previous_agent;
              if (!parent.empty()) previous_agent = parent.back();
              auto r = agents_->refine(seq.back(), conversation, init, previous, previous_agent,
                                       RefinementPlan(seq));
              search.absorb(r.stats);
              cache[seq] = {r.value, r.value.refined_response};
            }
            trace.search_calls = search.gateway_calls;
            absorb(trace, search, "search");

            std::optional<std::size_t> best;
            for (const auto& seq : enumerate_sequences()) {
              std::string response = seq.empty() ? init : cache.at(seq).response;
              double score = s.scorer(conversation, seq, response);
              result.candidates.push_back({seq, std::move(response), score});
              const auto& c = result.candidates.back();
              if (!best) {
                best = result.candidates.size() - 1;
                continue;
              }
              const auto& b = result.candidates[*best];
              if (c.score > b.score || (c.score == b.score && tie_break_less(c.sequence, b.sequence))) {
                best = result.candidates.size() - 1;
              }
            }
            const auto& winner = result.candidates[*best];
            trace.plan = RefinementPlan(winner.sequence);
            for (std::size_t i = 1; i <= winner.sequence.size(); ++i) {
              trace.steps.push_back(cache.at(Sequence(winner.sequence.begin(),
                                                      winner.sequence.begin() + static_cast<long>(i)))
                                        .step);
            }
            final_response = winner.response;
            emit(observer, "search", "finished", std::nullopt, trace.plan->order_text());
          },
      },
      config.strategy);

  trace.final_response = final_response;
  trace.agent_calls = static_cast<int>(count_agent_calls(trace, config));
  result.final_response = final_response;
  result.trace = std::move(trace);
  return result;
}

std::vector<TurnOutcome> Pipeline::run_conversation(const Conversation& conversation,
                                                    const StrategyConfig& config, TurnPolicy policy,
                                                    const StageObserver& observer) const {
  std::vector<TurnOutcome> out;
  const auto& turns = conversation.turns();
  std::vector<std::string> generated;
  for (std::size_t k = 0; k < turns.size(); ++k) {
    std::vector<Turn> prefix;
    for (std::size_t i = 0; i < k; ++i) {
      Turn t = turns[i];
      if (policy == TurnPolicy::UseGoldHistory) {
        t.response = t.gold_response ? t.gold_response : t.response;
        if (!t.response) t.response = generated[i];
      } else {
        t.response = generated[i];
      }
      prefix.push_back(std::move(t));
    }
    Turn open = turns[k];
    open.response.reset();
    prefix.push_back(std::move(open));
    Conversation view(conversation.id(), conversation.persona(), conversation.fact(),
                      conversation.keywords(), std::move(prefix));

    TurnOutcome outcome;
    outcome.turn = turns[k].index;
    try {
      outcome.result = run_turn(view, config, observer);
      generated.push_back(outcome.result->final_response);
      out.push_back(std::move(outcome));
    } catch (const TurnError& e) {
      outcome.error = e.what();
      outcome.error_kind = e.kind();
      outcome.partial_trace = e.partial_trace();
      generated.emplace_back();
      out.push_back(std::move(outcome));
      if (policy == TurnPolicy::UseGeneratedHistory) break;
    }
  }
  return out;
}

}  // namespace refinery::pipeline
