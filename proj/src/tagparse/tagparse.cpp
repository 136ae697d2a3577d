#include "refinery/tagparse/tagparse.hpp"

#include <algorithm>
#include <cctype>
#include <regex>

#include "refinery/error.hpp"

namespace refinery::tagparse {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::optional<std::string> find_tag(std::string_view text, std::string_view tag,
                                    ExtractionMode mode) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  auto b = text.find(open);
  if (b == std::string_view::npos) return std::nullopt;
  b += open.size();
  auto e = text.find(close, b);
  if (e == std::string_view::npos) {
    if (mode == ExtractionMode::Strict) return std::nullopt;
    return std::string(text.substr(b));
  }
  return std::string(text.substr(b, e - b));
}

std::string extract_tag(std::string_view text, std::string_view tag, ExtractionMode mode) {
  auto found = find_tag(text, tag, mode);
  if (!found) throw TagNotFoundError(std::string(tag), std::string(text));
  return *found;
}

PlannerDecision parse_planner(std::string_view text, ExtractionMode mode) {
  auto set = find_tag(text, "agents_set", mode);
  if (!set) {
    throw Error(ErrorKind::PlannerParse,
                "planner output has no <agents_set>: " + std::string(text.substr(0, 200)));
  }
  PlannerDecision d;
  d.raw_sequence_text = *set;

  std::vector<AgentKind> seq;
  if (lower(trim(*set)) != "none") {
    static const std::pair<std::string_view, AgentKind> kKeywords[] = {
        {"fact", AgentKind::FactRefine},
        {"persona", AgentKind::PersonaRefine},
        {"coherence", AgentKind::CoherenceRefine},
    };
    std::string_view rest = *set;
    while (!rest.empty()) {
      auto comma = rest.find(',');
      std::string token = trim(rest.substr(0, comma));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
      if (token.empty()) continue;
      const std::string lt = lower(token);
      std::optional<AgentKind> hit;
      std::size_t best = std::string::npos;
      for (const auto& [word, kind] : kKeywords) {
        auto pos = lt.find(word);
        if (pos < best) {
          best = pos;
          hit = kind;
        }
      }
      if (!hit) {
        d.warnings.push_back("planner named an unknown agent: '" + token + "'");
        continue;
      }
      if (std::find(seq.begin(), seq.end(), *hit) != seq.end()) {
        d.warnings.push_back("planner repeated " + std::string(display_name(*hit)));
        continue;
      }
      seq.push_back(*hit);
    }
  }
  d.plan = RefinementPlan(std::move(seq),
                          trim(find_tag(text, "agents_set_justification", mode).value_or("")),
                          trim(find_tag(text, "agents_set_order_justification", mode).value_or("")));
  return d;
}

std::string render_planner(const RefinementPlan& plan) {
  return "<agent_planning>\n<agents_set>" + plan.order_text() +
         "</agents_set>\n<agents_set_justification>" + plan.set_justification() +
         "</agents_set_justification>\n<agents_set_order_justification>" +
         plan.order_justification() + "</agents_set_order_justification>\n</agent_planning>";
}

std::string_view aspect_word(AgentKind kind) {
  switch (kind) {
    case AgentKind::FactRefine: return "Fact";
    case AgentKind::PersonaRefine: return "Persona";
    case AgentKind::CoherenceRefine: return "Coherence";
    case AgentKind::CombinedRefine: return "Response";
    default:
      throw Error(ErrorKind::Domain, std::string(display_name(kind)) + " is not a refiner");
  }
}

RefinerOutput parse_refiner(std::string_view text, AgentKind kind, ExtractionMode mode) {
  const std::string verified = std::string(aspect_word(kind)) + " is verified.";
  RefinerOutput out;

  auto refined = find_tag(text, "refined_response", mode);
  if (!refined || trim(*refined).empty()) {
    throw Error(ErrorKind::MissingRefinement,
                std::string(display_name(kind)) + " produced no <refined_response>");
  }
  out.refined_response = trim(*refined);

  if (auto v = find_tag(text, "verification", mode)) {
    if (v->find(verified) != std::string::npos) {
      out.verdict = Verdict::Verified;
    } else if (v->find("is not verified") != std::string::npos) {
      out.verdict = Verdict::NotVerified;
    }
  }
  out.verification_justification = trim(find_tag(text, "verification_justification", mode).value_or(""));
  out.refinement_justification = trim(find_tag(text, "refinement_justification", mode).value_or(""));
  return out;
}

JudgeScore parse_judge_score(std::string_view text, MetricKind metric) {
  std::string_view scan = text;
  const std::string label = lower(display_name(metric));
  if (auto pos = lower(text).find(label); pos != std::string::npos) {
    scan = text.substr(pos + label.size());
    auto p = scan.find_first_not_of(" \t");
    if (p != std::string_view::npos && scan[p] == '(') {
      auto close = scan.find(')', p);
      if (close != std::string_view::npos) scan = scan.substr(close + 1);
    }
  }

  static const std::regex number(R"([-+]?(\d+(\.\d*)?|\.\d+))");
  std::match_results<std::string_view::const_iterator> m;
  if (!std::regex_search(scan.begin(), scan.end(), m, number)) {
    throw Error(ErrorKind::JudgeParse, "no score for " + std::string(display_name(metric)) +
                                           " in judge output: " + std::string(text.substr(0, 200)));
  }
  double value = 0.0;
  try {
    value = std::stod(m.str());
  } catch (const std::out_of_range&) {
    throw Error(ErrorKind::Bounds, std::string(display_name(metric)) + " score is out of range");
  }
  const auto b = bounds(metric);
  if (!b.contains(value)) {
    throw Error(ErrorKind::Bounds, std::string(display_name(metric)) + " score " + m.str() +
                                       " is outside [" + std::to_string(b.lo) + ", " +
                                       std::to_string(b.hi) + "]");
  }
  return {metric, value, std::string(text)};
}

}  // namespace refinery::tagparse
