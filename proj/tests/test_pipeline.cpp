#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "support.hpp"

using namespace refinery;
using namespace refinery::pipeline;
using namespace testing;

namespace {

StrategyConfig cfg(Strategy s) { return StrategyConfig{std::move(s), {}}; }

const Sequence kFCP{AgentKind::FactRefine, AgentKind::CoherenceRefine, AgentKind::PersonaRefine};

}  // namespace

TEST_CASE("agent accounting per strategy") {
  auto rig = echo_rig("<agents_set>Coherence, Persona</agents_set>");
  auto conv = one_turn();

  auto none = rig.pipeline->run_turn(conv, cfg(NoRefine{}));
  CHECK(none.trace.agent_calls == 1);
  CHECK(none.final_response == "R0");
  CHECK(none.trace.final_matches_steps());

  auto seq = rig.pipeline->run_turn(conv, cfg(FixedSequential{kFCP}));
  CHECK(seq.trace.agent_calls == 4);
  CHECK(seq.final_response == "R0+F+C+P");
  CHECK_FALSE(seq.trace.plan);

  auto sim = rig.pipeline->run_turn(conv, cfg(Simultaneous{}));
  CHECK(sim.trace.agent_calls == 5);
  CHECK(sim.trace.finalizer_invoked);
  CHECK(sim.final_response == "R0+F|R0+P|R0+C");
  CHECK(sim.trace.steps.size() == 3);
  CHECK(sim.trace.final_matches_steps());

  auto dyn = rig.pipeline->run_turn(conv, cfg(Dynamic{}));
  CHECK(dyn.trace.agent_calls == 4);
  CHECK(dyn.trace.planner_invoked);
  CHECK(dyn.final_response == "R0+C+P");
  REQUIRE(dyn.trace.plan);
  CHECK(dyn.trace.plan->sequence() == Sequence{AgentKind::CoherenceRefine, AgentKind::PersonaRefine});

  auto single = rig.pipeline->run_turn(conv, cfg(SingleCombined{}));
  CHECK(single.trace.agent_calls == 2);
  CHECK(single.final_response == "R0+S");

  auto iter = rig.pipeline->run_turn(conv, cfg(SingleCombinedIterative{3}));
  CHECK(iter.trace.agent_calls == 4);
  CHECK(iter.final_response == "R0+S+S+S");
}

TEST_CASE("agent calls match the gateway ledger for every non-search strategy") {
  for (auto s : std::vector<Strategy>{NoRefine{}, Simultaneous{}, FixedSequential{kFCP}, Dynamic{}, SingleCombined{},
                                      SingleCombinedIterative{2}, RandomPlanner{3, {{1, 1}, {2, 1}, {3, 1}}}}) {
    auto rig = echo_rig("<agents_set>Fact, Persona</agents_set>");
    auto r = rig.pipeline->run_turn(one_turn(), cfg(s));
    CAPTURE(strategy_name(s));
    CHECK(count_agent_calls(r.trace, cfg(s)) == static_cast<double>(rig.gateway->invocation_count()));
    CHECK(r.trace.gateway_calls == static_cast<int>(rig.gateway->invocation_count()));
    CHECK(r.trace.cassette_keys.size() == rig.gateway->invocation_count());
  }
}

TEST_CASE("dynamic with an empty plan keeps the initial response") {
  auto rig = echo_rig("<agents_set>None</agents_set>");
  auto r = rig.pipeline->run_turn(one_turn(), cfg(Dynamic{}));
  CHECK(r.final_response == r.trace.initial_response);
  CHECK(r.trace.agent_calls == 2);
  CHECK(r.trace.steps.empty());
}

TEST_CASE("planner fallback policies") {
  auto rig = echo_rig("gibberish");
  auto r = rig.pipeline->run_turn(one_turn(), cfg(Dynamic{}));
  CHECK(r.trace.planner_fallback_used);
  CHECK(r.final_response == "R0+F+C+P");
  CHECK(r.trace.agent_calls == 5);
  CHECK(r.trace.gateway_calls == 6);

  StrategyConfig none{Dynamic{}, PlannerFallback{{}}};
  auto n = rig.pipeline->run_turn(one_turn(), none);
  CHECK(n.trace.planner_fallback_used);
  CHECK(n.final_response == "R0");
}

TEST_CASE("dynamic mean agent calls follow mean plan length") {
  // 40% of turns plan three refiners, 60% plan two: mean length 2.4.
  auto rig = make_rig(handler_backend([](const llm::ChatRequest& req) {
    if (addressed_to(req) == AgentKind::Planner) {
      const auto& q = req.messages.back().content;
      int n = std::stoi(q.substr(q.find("turn-") + 5));
      return std::string(n % 5 < 2 ? "<agents_set>Fact, Coherence, Persona</agents_set>"
                                   : "<agents_set>Persona, Fact</agents_set>");
    }
    return marker_echo(req, "");
  }));
  double total = 0;
  for (int i = 0; i < 100; ++i) {
    total += rig.pipeline->run_turn(one_turn("turn-" + std::to_string(i)), cfg(Dynamic{})).trace.agent_calls;
  }
  CHECK(total / 100 == doctest::Approx(4.4).epsilon(1e-12));
}

TEST_CASE("sequential chaining passes each refinement to the next step") {
  std::vector<std::string> prompts;
  std::mutex mu;
  auto rig = make_rig(handler_backend([&](const llm::ChatRequest& req) {
    std::lock_guard lock(mu);
    prompts.push_back(req.concatenated_prompt());
    return marker_echo(req, "");
  }));
  std::vector<Sequence> orders;
  for (const auto& s : enumerate_sequences()) {
    if (s.size() == 3) orders.push_back(s);
  }
  REQUIRE(orders.size() == 6);
  for (const auto& order : orders) {
    prompts.clear();
    auto r = rig.pipeline->run_turn(one_turn(), cfg(FixedSequential{order}));
    REQUIRE(r.trace.steps.size() == 3);
    REQUIRE(prompts.size() == 4);
    for (std::size_t k = 1; k < 3; ++k) {
      CHECK(prompts[k + 1].find(r.trace.steps[k - 1].refined_response) != std::string::npos);
    }
    CHECK(prompts[1].find(r.trace.initial_response) != std::string::npos);
  }
}

TEST_CASE("simultaneous refiners run independently, threaded or not") {
  auto threaded = echo_rig();
  auto serial = make_rig(handler_backend([](const llm::ChatRequest& req) { return marker_echo(req, ""); }), {},
                         PipelineOptions{false});
  auto a = threaded.pipeline->run_turn(one_turn(), cfg(Simultaneous{}));
  auto b = serial.pipeline->run_turn(one_turn(), cfg(Simultaneous{}));
  CHECK(a.final_response == b.final_response);
  for (const auto& s : a.trace.steps) CHECK(s.refined_response.rfind("R0+", 0) == 0);
}

TEST_CASE("enumerate_sequences") {
  auto all = enumerate_sequences();
  CHECK(all.size() == 16);
  CHECK(all.front().empty());
  std::set<Sequence> uniq(all.begin(), all.end());
  CHECK(uniq.size() == 16);
  CHECK(uniq.count({AgentKind::FactRefine}));
  CHECK(uniq.count({AgentKind::FactRefine, AgentKind::PersonaRefine, AgentKind::CoherenceRefine}));
  for (const auto& s : all) CHECK(std::set<AgentKind>(s.begin(), s.end()).size() == s.size());
  CHECK(all == enumerate_sequences());
}

TEST_CASE("ideal planner picks the argmax") {
  auto rig = echo_rig();
  IdealPlanner ideal{[](const Conversation&, const Sequence& s, const std::string&) {
    return s == Sequence{AgentKind::PersonaRefine, AgentKind::FactRefine} ? 1.0 : 0.0;
  }};
  auto r = rig.pipeline->run_turn(one_turn(), cfg(ideal));
  CHECK(r.final_response == "R0+P+F");
  CHECK(r.trace.agent_calls == 3);
  CHECK(r.trace.search_calls == 15);
  CHECK(r.trace.gateway_calls == 16);
  CHECK(r.candidates.size() == 16);
  CHECK(r.trace.steps.size() == 2);
  CHECK(r.trace.final_matches_steps());

  IdealPlanner flat{[](const Conversation&, const Sequence&, const std::string&) { return 0.5; }};
  auto f = rig.pipeline->run_turn(one_turn(), cfg(flat));
  CHECK(f.trace.steps.empty());
  CHECK(f.final_response == "R0");

  IdealPlanner len1{[](const Conversation&, const Sequence& s, const std::string&) { return s.size() == 1 ? 1.0 : 0.0; }};
  auto l = rig.pipeline->run_turn(one_turn(), cfg(len1));
  CHECK(l.trace.plan->sequence() == Sequence{AgentKind::CoherenceRefine});
}

TEST_CASE("random planner is reproducible and follows its weights") {
  RandomPlanner rp{42, {{1, 1}, {2, 1}, {3, 1}}};
  std::map<std::size_t, int> lengths;
  for (int t = 1; t <= 300; ++t) {
    auto a = random_sequence(rp, "conv", t);
    CHECK(a == random_sequence(rp, "conv", t));
    CHECK(std::set<AgentKind>(a.begin(), a.end()).size() == a.size());
    ++lengths[a.size()];
  }
  CHECK(lengths.size() == 3);
  for (const auto& [len, n] : lengths) CHECK(n > 60);

  RandomPlanner ones{7, {{1, 1}}};
  auto rig = echo_rig();
  double total = 0;
  for (int i = 0; i < 20; ++i) {
    total += rig.pipeline->run_turn(one_turn("q" + std::to_string(i)), cfg(ones)).trace.agent_calls;
  }
  CHECK(total / 20 == 2.0);
}

TEST_CASE("strategy validation and names") {
  CHECK_THROWS_AS(cfg(FixedSequential{{}}).validate(), Error);
  CHECK_THROWS_AS(cfg(FixedSequential{{AgentKind::FactRefine, AgentKind::FactRefine}}).validate(), Error);
  CHECK_THROWS_AS(cfg(SingleCombinedIterative{0}).validate(), Error);
  CHECK_THROWS_AS(cfg(IdealPlanner{}).validate(), Error);
  CHECK_THROWS_AS(cfg(RandomPlanner{0, {{4, 1}}}).validate(), Error);
  for (const std::string n : {"no-refine", "simultaneous", "sequential:F>C>P", "sequential:P", "dynamic", "single",
                              "single-iterative:3", "random", "random:9", "ideal"}) {
    CHECK(strategy_name(parse_strategy(n)) == n);
  }
  CHECK_THROWS_AS(parse_strategy("sequential:F>X"), Error);
  CHECK_THROWS_AS(parse_strategy("bogus"), Error);
  CHECK_THROWS_AS(parse_strategy("single-iterative:x"), Error);
}

TEST_CASE("stage events follow execution order") {
  auto rig = echo_rig("<agents_set>Coherence, Persona</agents_set>");
  std::vector<std::string> events;
  rig.pipeline->run_turn(one_turn(), cfg(Dynamic{}), [&](const StageEvent& e) {
    events.push_back(e.stage + ":" + e.status + (e.agent ? ":" + std::string(slug(*e.agent)) : ""));
  });
  CHECK(events == std::vector<std::string>{
                      "responding:started:responding", "responding:finished:responding",
                      "planner:started:planner", "planner:finished:planner",
                      "refiner:started:coherence", "refiner:finished:coherence",
                      "refiner:started:persona", "refiner:finished:persona", "complete:finished"});
}

TEST_CASE("turn errors carry the partial trace") {
  auto rig = make_rig(handler_backend([](const llm::ChatRequest& req) -> std::string {
    if (addressed_to(req) == AgentKind::CoherenceRefine) throw TransportError("down", false, 500);
    return marker_echo(req, "");
  }));
  try {
    rig.pipeline->run_turn(one_turn(), cfg(FixedSequential{kFCP}));
    FAIL("expected a turn error");
  } catch (const TurnError& e) {
    CHECK(e.kind() == ErrorKind::Transport);
    CHECK(e.partial_trace().initial_response == "R0");
    CHECK(e.partial_trace().steps.size() == 1);
  }
}

TEST_CASE("conversation policies") {
  std::vector<std::string> histories;
  bool fail_turn2 = false;
  auto rig = make_rig(handler_backend([&](const llm::ChatRequest& req) -> std::string {
    if (addressed_to(req) == AgentKind::Responding) {
      std::string h;
      for (std::size_t i = 1; i + 1 < req.messages.size(); ++i) h += req.messages[i].content + ";";
      histories.push_back(h);
      if (fail_turn2 && req.messages.back().content.find("q2") != std::string::npos) {
        throw TransportError("gone", false);
      }
      return "<response>gen" + std::to_string(histories.size()) + "</response>";
    }
    return marker_echo(req, "");
  }));
  Conversation conv("c", {}, {}, {},
                    {Turn{1, "q1", "g1", "g1"}, Turn{2, "q2", "g2", "g2"}, Turn{3, "q3", "g3", "g3"}});

  auto gold = rig.pipeline->run_conversation(conv, cfg(NoRefine{}), TurnPolicy::UseGoldHistory);
  CHECK(gold.size() == 3);
  CHECK(histories[2] == "<question_text>q1</question_text>;g1;<question_text>q2</question_text>;g2;");

  histories.clear();
  auto gen = rig.pipeline->run_conversation(conv, cfg(NoRefine{}), TurnPolicy::UseGeneratedHistory);
  CHECK(gen.size() == 3);
  CHECK(histories[2] == "<question_text>q1</question_text>;gen1;<question_text>q2</question_text>;gen2;");

  Conversation single("s", {}, {}, {}, {Turn{1, "q1", "g1", "g1"}});
  histories.clear();
  auto a = rig.pipeline->run_conversation(single, cfg(NoRefine{}), TurnPolicy::UseGoldHistory);
  histories.clear();
  auto b = rig.pipeline->run_conversation(single, cfg(NoRefine{}), TurnPolicy::UseGeneratedHistory);
  CHECK(a[0].result->final_response == b[0].result->final_response);

  fail_turn2 = true;
  histories.clear();
  auto g2 = rig.pipeline->run_conversation(conv, cfg(NoRefine{}), TurnPolicy::UseGoldHistory);
  REQUIRE(g2.size() == 3);
  CHECK(g2[1].error);
  CHECK(g2[2].result);
  histories.clear();
  auto x2 = rig.pipeline->run_conversation(conv, cfg(NoRefine{}), TurnPolicy::UseGeneratedHistory);
  CHECK(x2.size() == 2);
  CHECK(x2[1].error_kind == ErrorKind::Transport);
}

TEST_CASE("trace json round trip and layout") {
  auto rig = echo_rig("<agents_set>Fact, Coherence</agents_set><agents_set_justification>j</agents_set_justification>");
  auto r = rig.pipeline->run_turn(one_turn(), cfg(Dynamic{}));
  auto j = trace_to_json(r.trace);
  CHECK(trace_from_json(j) == r.trace);
  CHECK(j["steps"].size() == 2);
  CHECK(j["plan"]["sequence"] == nlohmann::json::array({"fact", "coherence"}));

  auto root = std::filesystem::temp_directory_path() / "refinery_traces";
  std::filesystem::remove_all(root);
  auto p = write_trace(root, "run-1", "conv/7", 3, r.trace);
  CHECK(p == root / "runs" / "run-1" / "conv_7" / "3.json");
  std::ifstream in(p);
  CHECK(trace_from_json(nlohmann::json::parse(in)) == r.trace);
  std::filesystem::remove_all(root);
}
