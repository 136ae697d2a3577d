#include <doctest.h>

#include "refinery/core/metric.hpp"
#include "refinery/core/model.hpp"
#include "refinery/error.hpp"

using namespace refinery;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Config;
}

}  // namespace

TEST_CASE("conversation validation") {
  CHECK_NOTHROW(Conversation("a", {}, {}, {}, {}));
  CHECK(kind_of([] { Conversation("", {}, {}, {}, {}); }) == ErrorKind::Validation);
  CHECK(kind_of([] { Conversation("a", {}, {}, {}, {Turn{2, "q", {}, {}}}); }) == ErrorKind::Validation);
  CHECK(kind_of([] { Conversation("a", {}, {}, {}, {Turn{1, "", {}, {}}}); }) == ErrorKind::Validation);
  CHECK(kind_of([] {
          Conversation("a", {}, {}, {}, {Turn{1, "q", {}, {}}, Turn{2, "q2", {}, {}}});
        }) == ErrorKind::Validation);
  Conversation ok("a", {}, {}, {}, {Turn{1, "q", "r", {}}, Turn{2, "q2", {}, {}}});
  CHECK(ok.awaiting_response());
  CHECK(ok.last_turn().query == "q2");
}

TEST_CASE("append_turn and history_view") {
  Conversation c("a", {"p"}, std::string("f"), {"k"}, {});
  auto c1 = append_turn(c, "hello");
  CHECK(c1.turns().size() == 1);
  CHECK(c1.last_turn().index == 1);
  CHECK(kind_of([&] { append_turn(c1, "again"); }) == ErrorKind::Validation);
  CHECK(kind_of([&] { append_turn(c, ""); }) == ErrorKind::Validation);

  auto c2 = append_turn(c1.with_last_response("hi"), "how are you");
  auto h = history_view(c2);
  REQUIRE(h.size() == 1);
  CHECK(h[0].first == "hello");
  CHECK(h[0].second == "hi");

  auto c3 = append_turn(c2.with_last_response("fine"), "bye").with_last_response("ciao");
  CHECK(history_view(c3).size() == 3);
  auto last2 = history_view(c3, 2);
  REQUIRE(last2.size() == 2);
  CHECK(last2[0].first == "how are you");
  CHECK(c3.prefix(1).turns().size() == 1);
  CHECK(c3.persona() == std::vector<std::string>{"p"});
}

TEST_CASE("agent names") {
  CHECK(display_name(AgentKind::FactRefine) == "Fact Refining Agent");
  CHECK(display_name(AgentKind::PersonaRefine) == "Persona Refining Agent");
  CHECK(display_name(AgentKind::CoherenceRefine) == "Coherence Refining Agent");
  for (auto k : {AgentKind::Responding, AgentKind::Planner, AgentKind::FactRefine, AgentKind::PersonaRefine,
                 AgentKind::CoherenceRefine, AgentKind::Finalizer, AgentKind::Judge, AgentKind::CombinedRefine}) {
    CHECK(agent_from_slug(slug(k)) == k);
  }
  CHECK_FALSE(agent_from_slug("nope"));
  CHECK(aspect_refiners().size() == 3);
  CHECK(is_refiner(AgentKind::CombinedRefine));
  CHECK_FALSE(is_aspect_refiner(AgentKind::CombinedRefine));
}

TEST_CASE("refinement plan") {
  RefinementPlan p({AgentKind::CoherenceRefine, AgentKind::PersonaRefine, AgentKind::CoherenceRefine});
  CHECK(p.sequence() == std::vector<AgentKind>{AgentKind::CoherenceRefine, AgentKind::PersonaRefine});
  CHECK(p.order_text() == "Coherence Refining Agent, Persona Refining Agent");
  CHECK(RefinementPlan().order_text() == "None");
  CHECK(kind_of([] { RefinementPlan({AgentKind::Planner}); }) == ErrorKind::Domain);
}

TEST_CASE("verdict strings round trip") {
  for (auto v : {Verdict::Verified, Verdict::NotVerified, Verdict::Unparsed}) {
    CHECK(verdict_from_string(to_string(v)) == v);
  }
}

TEST_CASE("metric bounds") {
  CHECK(bounds(MetricKind::Groundedness).lo == 0.0);
  CHECK(bounds(MetricKind::Groundedness).hi == 1.0);
  CHECK(bounds(MetricKind::Coherence).lo == 1.0);
  CHECK(bounds(MetricKind::Engagingness).hi == 3.0);
  CHECK(metric_from_slug("naturalness") == MetricKind::Naturalness);
  CHECK_FALSE(bounds(MetricKind::Naturalness).contains(4.0));
}

TEST_CASE("final response consistency") {
  RefinementTrace t;
  t.initial_response = "a";
  t.final_response = "a";
  CHECK(t.final_matches_steps());
  RefinementStep s;
  s.refined_response = "b";
  t.steps.push_back(s);
  CHECK_FALSE(t.final_matches_steps());
  t.final_response = "b";
  CHECK(t.final_matches_steps());
  t.final_response = "merged";
  t.finalizer_invoked = true;
  CHECK(t.final_matches_steps());
}
