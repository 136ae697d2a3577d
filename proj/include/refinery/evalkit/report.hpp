#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refinery/evalkit/aggregate.hpp"
#include "refinery/evalkit/stats.hpp"

namespace refinery::evalkit {

/// ANOVA and Tukey over run-level means of one metric, one group per
/// aggregate ("overall" uses per-run Overall values).
struct MetricTest {
  std::string metric;
  std::optional<AnovaResult> anova;
  std::vector<TukeyComparison> pairs;
  // Why the test was skipped or failed.
  std::string note;
};

struct ReportStats {
  std::vector<std::string> labels;
  std::vector<MetricTest> tests;
  // Why no tests were run at all.
  std::string note;
};

/// Runs the tests when there are at least two aggregates with two or more
/// runs each; a metric whose groups are degenerate gets a note instead of
/// numbers.
ReportStats compute_stats(const std::vector<RunAggregate>& aggregates);

/// Keys sorted; numbers in shortest round-trip form. `metadata` is copied
/// under "config".
nlohmann::json report_to_json(const std::vector<RunAggregate>& aggregates, const ReportStats& stats,
                              const nlohmann::json& metadata = nlohmann::json::object());

/// Canonical text of a report document: 2-space indent, trailing newline.
std::string dump_report(const nlohmann::json& report);

/// One row per aggregate, highest Overall first. The Overall column can be
/// left out; rows keep the same order.
std::string report_markdown(const std::vector<RunAggregate>& aggregates, const ReportStats& stats = {},
                            bool include_overall = true);

struct ReportPaths {
  std::filesystem::path json;
  std::filesystem::path markdown;
};

/// `<root>/runs/<run_id>/report.json` and `report.md`.
ReportPaths write_report(const std::filesystem::path& root, const std::string& run_id,
                         const nlohmann::json& report, const std::string& markdown);

}  // namespace refinery::evalkit
