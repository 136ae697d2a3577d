#pragma once

// Reading fields out of the tag protocol the agent prompts ask models to
// follow. Not an XML parser: no attributes, entities or nesting.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refinery/core/metric.hpp"
#include "refinery/core/model.hpp"

namespace refinery::tagparse {

enum class ExtractionMode {
  // Matched open and close tags required.
  Strict,
  // An unclosed tag runs to the end of the text.
  Lenient,
};

/// Content of the first <tag>...</tag>. Throws TagNotFoundError when absent.
std::string extract_tag(std::string_view text, std::string_view tag,
                        ExtractionMode mode = ExtractionMode::Lenient);
/// Non-throwing variant.
std::optional<std::string> find_tag(std::string_view text, std::string_view tag,
                                    ExtractionMode mode = ExtractionMode::Lenient);

struct PlannerDecision {
  std::string raw_sequence_text;
  RefinementPlan plan;
  std::vector<std::string> warnings;
};

/// Throws Error(PlannerParse) when <agents_set> is missing.
PlannerDecision parse_planner(std::string_view text, ExtractionMode mode = ExtractionMode::Lenient);

/// Canonical planner output for a plan; parse_planner maps it back to `plan`.
std::string render_planner(const RefinementPlan& plan);

struct RefinerOutput {
  Verdict verdict = Verdict::Unparsed;
  std::string verification_justification;
  std::string refined_response;
  std::string refinement_justification;
};

/// "Fact", "Persona", "Coherence", or "Response" for the combined refiner.
std::string_view aspect_word(AgentKind kind);

/// Throws Error(Domain) for a non-refiner kind and Error(MissingRefinement)
/// when <refined_response> is missing or blank.
RefinerOutput parse_refiner(std::string_view text, AgentKind kind,
                            ExtractionMode mode = ExtractionMode::Lenient);

struct JudgeScore {
  MetricKind metric;
  double value;
  std::string raw_text;
};

/// First number after the optional metric label. Throws Error(JudgeParse)
/// when none is found and Error(Bounds) when it is off the metric's scale.
JudgeScore parse_judge_score(std::string_view text, MetricKind metric);

}  // namespace refinery::tagparse
