#pragma once

#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "refinery/error.hpp"
#include "refinery/tagparse/tagparse.hpp"

namespace testing {

using namespace refinery;

inline nlohmann::json load_protocol_corpus() {
  std::ifstream in(std::string(REFINERY_FIXTURE_DIR) + "/protocol_corpus.json");
  return nlohmann::json::parse(in);
}

// Empty on success, otherwise a description of the mismatch.
inline std::string check_protocol_case(const nlohmann::json& c) {
  const std::string kind = c.at("kind");
  const std::string input = c.at("input");
  const auto& expect = c.at("expect");
  const std::string want_error = expect.value("error", "");
  try {
    if (kind == "planner") {
      auto d = tagparse::parse_planner(input);
      std::vector<std::string> got;
      for (auto k : d.plan.sequence()) got.emplace_back(slug(k));
      if (!want_error.empty()) return "expected " + want_error;
      if (got != expect.at("sequence").get<std::vector<std::string>>()) return "sequence mismatch";
      if (expect.contains("set_justification") && d.plan.set_justification() != expect["set_justification"])
        return "set justification mismatch";
      if (expect.contains("order_justification") &&
          d.plan.order_justification() != expect["order_justification"])
        return "order justification mismatch";
    } else if (kind == "refiner") {
      auto agent = agent_from_slug(c.at("agent").get<std::string>());
      auto r = tagparse::parse_refiner(input, *agent);
      if (!want_error.empty()) return "expected " + want_error;
      if (to_string(r.verdict) != expect.at("verdict").get<std::string>()) return "verdict mismatch";
      if (r.refined_response != expect.at("refined_response")) return "refined text mismatch";
      if (expect.contains("verification_justification") &&
          r.verification_justification != expect["verification_justification"])
        return "verification justification mismatch";
      if (expect.contains("refinement_justification") &&
          r.refinement_justification != expect["refinement_justification"])
        return "refinement justification mismatch";
    } else if (kind == "judge") {
      auto metric = metric_from_slug(c.at("metric").get<std::string>());
      auto s = tagparse::parse_judge_score(input, *metric);
      if (!want_error.empty()) return "expected " + want_error;
      if (s.value != expect.at("value").get<double>()) return "score mismatch";
    } else if (kind == "extract") {
      auto mode = c.at("mode") == "strict" ? tagparse::ExtractionMode::Strict : tagparse::ExtractionMode::Lenient;
      auto v = tagparse::extract_tag(input, c.at("tag").get<std::string>(), mode);
      if (!want_error.empty()) return "expected " + want_error;
      if (v != expect.at("value")) return "extracted text mismatch";
    } else {
      return "unknown case kind " + kind;
    }
  } catch (const Error& e) {
    if (want_error.empty()) return std::string("unexpected error: ") + e.what();
    if (to_string(e.kind()) != want_error) return "wrong error kind " + std::string(to_string(e.kind()));
  }
  return {};
}

// Random protocol-shaped noise. Returns the number of property violations;
// any exception other than refinery::Error escapes to the caller.
inline int fuzz_protocol(int n, std::uint64_t seed) {
  static const char* fragments[] = {
      "<agents_set>", "</agents_set>", ",", ", ", "Fact", "fact", "Persona", "PERSONA", "Coherence",
      "coherence", "None", "none", "Refining Agent", "Wizard", "<verification>", "</verification>",
      "Fact is verified.", "Persona is not verified.", "<refined_response>", "</refined_response>",
      "<response>", "</response>", "- Coherence:", "(1-3)", "2", "3.5", "-1", ".", "0", "\n", " ",
      "<", ">", "/", "{", "}", "é", "\xff", "\0"};
  std::mt19937_64 rng(seed);
  int violations = 0;
  const auto nfrag = sizeof(fragments) / sizeof(fragments[0]);
  for (int i = 0; i < n; ++i) {
    std::string s;
    int parts = static_cast<int>(rng() % 24);
    for (int p = 0; p < parts; ++p) {
      if (rng() % 7 == 0) {
        s.push_back(static_cast<char>(rng() % 256));
      } else {
        auto idx = rng() % nfrag;
        s += idx + 1 == nfrag ? std::string(1, '\0') : std::string(fragments[idx]);
      }
    }
    try {
      auto d = tagparse::parse_planner(s);
      const auto& seq = d.plan.sequence();
      std::set<AgentKind> uniq(seq.begin(), seq.end());
      if (seq.size() > 3 || uniq.size() != seq.size()) ++violations;
    } catch (const Error&) {
    }
    for (auto k : {AgentKind::FactRefine, AgentKind::PersonaRefine, AgentKind::CoherenceRefine}) {
      try {
        auto r = tagparse::parse_refiner(s, k);
        if (r.refined_response.empty()) ++violations;
      } catch (const Error&) {
      }
    }
    for (auto m : kAllMetrics) {
      try {
        auto j = tagparse::parse_judge_score(s, m);
        if (!bounds(m).contains(j.value)) ++violations;
      } catch (const Error&) {
      }
    }
    for (auto mode : {tagparse::ExtractionMode::Strict, tagparse::ExtractionMode::Lenient}) {
      try {
        tagparse::extract_tag(s, "response", mode);
      } catch (const Error&) {
      }
    }
  }
  return violations;
}

}  // namespace testing
