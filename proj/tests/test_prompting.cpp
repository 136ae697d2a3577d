#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "refinery/error.hpp"
#include "refinery/llm/cassette.hpp"
#include "refinery/prompting/prompts.hpp"

using namespace refinery;
using namespace refinery::prompting;

namespace {

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

const PromptLibrary& lib() { return *PromptLibrary::builtin(); }

}  // namespace

TEST_CASE("embedded assets match their golden hashes") {
  const std::map<std::string, std::string> golden = {
      {"finalizer", "63b3edf36e04cad25502b5f99712a40478e43fce4579cb7aeda8084d09f16f03"},
      {"judge_coherence", "2a25cdedacd2b596d1977a25fd6cf75570a1a0a09b0a56053df71378f4f1d7f2"},
      {"judge_engagingness", "9e11a2221ee27f5e2e343528c2b0d80c9f851d0309dc5d8e739b4af100d7035c"},
      {"judge_groundedness", "46fa800a8f07d980db473cd2d2e7efbac52c6fa3319f9461680b2886edf5afdc"},
      {"judge_naturalness", "036c570094c6a806eff6e77cc29a40acc8fae419be6e756716a6264274ef5032"},
      {"planner", "f1aa762e41694c4ab523dfb04a841194a32203f84fce640eb9309d19b2248ad7"},
      {"refine_coherence", "4d2364957b6ce0675db078678186980032776d817a596669153ce9467b441c90"},
      {"refine_combined", "180712a093304f34061e80d1e465f7df3bcf9f4ba0c63a0133223ff0badfe5ea"},
      {"refine_fact", "6def7c4ce8e0144b43d16096a73e8d782e8cb6012f762aaf41060d3faeac44ed"},
      {"refine_persona", "43c6af739b58df4e978cd8f7efcf600f2c101578b9cd8f9b9d11409079eba51f"},
      {"responding", "69e05a2375c9e107908e007e6b183a8cb03bfe491487edd23f62b848a1b7bed6"},
      {"responding_grounded", "caaa440466cd9270783c69da3fa269df89a4a8cc7a34d0fb9b3fd9a3c4aa73dc"},
  };
  const auto& assets = builtin_assets();
  CHECK(assets.size() == golden.size());
  for (const auto& [id, hash] : golden) {
    CAPTURE(id);
    REQUIRE(assets.count(id));
    CHECK(llm::sha256_hex(assets.at(id)) == hash);
  }
}

TEST_CASE("responding prompt") {
  auto r = render(lib().responding(), {{"keyword", "volcano"}, {"user_query", "height?"}});
  CHECK(r.user == "<question_text>height?</question_text>");
  CHECK(r.system.find("As a <role>Responding Agent</role>") == 0);
  CHECK(r.system.find("<keyword>volcano</keyword>") != std::string::npos);
  auto none = render(lib().responding(), {{"user_query", "q"}});
  CHECK(none.system.find("<keyword>None</keyword>") != std::string::npos);
}

TEST_CASE("absent optionals render as None") {
  auto r = render(lib().refiner(AgentKind::FactRefine),
                  {{"user_query", "q"}, {"initial_response", "i"}, {"generated_response", "g"}});
  CHECK(r.user.find("previous refining agent (None)") != std::string::npos);
  CHECK(r.user.find("<factChecking>g</factChecking>") != std::string::npos);
  auto p = render(lib().planner(), {{"user_query", "q"}, {"initial_response", "i"}, {"persona", ""}});
  CHECK(p.system.find("<userProfile>None</userProfile>") != std::string::npos);
  CHECK(p.system.find("Role: <role>Planner Agent</role>") == 0);
}

TEST_CASE("missing required placeholder is named") {
  try {
    render(lib().planner(), {{"user_query", "q"}});
    FAIL("expected a render error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Render);
    CHECK(std::string(e.what()).find("initial_response") != std::string::npos);
  }
}

TEST_CASE("refiner templates carry their verdict sentence and plan context") {
  CHECK(lib().refiner(AgentKind::FactRefine).system_body.find("'Fact is verified.'") != std::string::npos);
  CHECK(lib().refiner(AgentKind::PersonaRefine).system_body.find("'Persona is verified.'") != std::string::npos);
  CHECK(lib().refiner(AgentKind::CoherenceRefine).system_body.find("'Coherence is verified.'") !=
        std::string::npos);
  CHECK(lib().refiner(AgentKind::CombinedRefine).system_body.find("'Response is verified.'") !=
        std::string::npos);
  for (auto k : aspect_refiners()) {
    const auto& t = lib().refiner(k);
    CHECK(t.user_body.find("{planned_agent_order}") != std::string::npos);
    CHECK(t.user_body.find("{planned_agents_set_justification}") != std::string::npos);
    CHECK(t.user_body.find("{planned_agent_order_justification}") != std::string::npos);
  }
  CHECK_THROWS_AS(lib().refiner(AgentKind::Planner), Error);
  try {
    refiner_template_id(AgentKind::Judge);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Domain);
  }
}

TEST_CASE("judge templates") {
  CHECK(lib().judge(MetricKind::Groundedness).scale().lo == 0.0);
  CHECK(lib().judge(MetricKind::Groundedness).scale().hi == 1.0);
  CHECK(lib().judge(MetricKind::Coherence).scale().lo == 1.0);
  CHECK(lib().judge(MetricKind::Coherence).scale().hi == 3.0);
  CHECK(lib().judge(MetricKind::Engagingness).scale().hi == 3.0);
  for (auto m : kAllMetrics) {
    const auto& t = lib().judge(m);
    CHECK(t.scale().lo == bounds(m).lo);
    CHECK(t.scale().hi == bounds(m).hi);
    const std::string tail =
        "Evaluation Form (Scores ONLY without any additional text):\n- " + std::string(display_name(m)) + ":";
    CHECK(t.user_body.size() >= tail.size());
    CHECK(t.user_body.compare(t.user_body.size() - tail.size(), tail.size(), tail) == 0);
  }
  CHECK(lib().judge(MetricKind::Engagingness).user_body.find("Is the response dull or interesting?") !=
        std::string::npos);
  CHECK(lib().judge(MetricKind::Groundedness).user_body.find("{persona}") == std::string::npos);
}

TEST_CASE("sentinel round trip over every template") {
  for (const auto& [id, t] : lib().all()) {
    CAPTURE(id);
    RenderContext ctx;
    std::set<std::string> names = t.required;
    names.insert(t.optional.begin(), t.optional.end());
    for (const auto& n : names) ctx[n] = "\x01" + n + "\x02";
    auto r = render(t, ctx);
    for (const auto& n : names) {
      const std::string ph = "{" + n + "}";
      auto expected = count(t.system_body, ph) + count(t.user_body, ph);
      CHECK(count(r.system, ctx[n]) + count(r.user, ctx[n]) == expected);
      CHECK(r.system.find(ph) == std::string::npos);
      CHECK(r.user.find(ph) == std::string::npos);
    }
  }
}

TEST_CASE("values are inserted verbatim and never re-expanded") {
  auto r = render(lib().responding(), {{"user_query", "<b>{keyword}</b>"}, {"keyword", "k"}});
  CHECK(r.user == "<question_text><b>{keyword}</b></question_text>");
}

TEST_CASE("finalizer references all three refinements") {
  const auto& f = lib().finalizer();
  for (auto slot : {"fact_refined_response", "persona_refined_response", "coherence_refined_response"}) {
    CHECK(f.required.count(slot));
    CHECK(f.user_body.find(std::string("{") + slot + "}") != std::string::npos);
  }
  CHECK(f.metadata.count("origin"));
}

TEST_CASE("template parsing errors") {
  CHECK_THROWS_AS(parse_template("# id: x\nno delimiter"), Error);
  CHECK_THROWS_AS(parse_template("# id: x\n# required: a\nsys\n=== USER ===\nuser"), Error);
  CHECK_THROWS_AS(parse_template("# id: x\nsys {b}\n=== USER ===\nuser"), Error);
  auto t = parse_template("# id: x\n# required: a\n=== USER ===\n{a} and {not declared}");
  CHECK(t.system_body.empty());
  CHECK(render(t, {{"a", "1"}}).user == "1 and {not declared}");
}

TEST_CASE("override directory replaces embedded assets") {
  auto dir = std::filesystem::temp_directory_path() / "refinery_prompt_override";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "responding.txt");
    out << "# required: user_query\nCustom\n=== USER ===\nQ: {user_query}\n";
  }
  auto custom = PromptLibrary::with_override_dir(dir);
  CHECK(render(custom->responding(), {{"user_query", "x"}}).user == "Q: x");
  CHECK(custom->planner().system_body == lib().planner().system_body);
  std::filesystem::remove_all(dir);
}
