#include "refinery/evalkit/report.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "refinery/error.hpp"

namespace refinery::evalkit {

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json opt_list(const std::vector<std::optional<double>>& vs) {
  auto arr = nlohmann::json::array();
  for (const auto& v : vs) arr.push_back(opt(v));
  return arr;
}

std::vector<double> present(const std::vector<std::optional<double>>& xs) {
  std::vector<double> out;
  for (const auto& x : xs)
    if (x) out.push_back(*x);
  return out;
}

MetricTest run_test(const std::string& name, const std::vector<std::vector<double>>& groups) {
  MetricTest t;
  t.metric = name;
  try {
    t.anova = anova_oneway(groups);
    t.pairs = tukey_hsd(groups);
  } catch (const Error& e) {
    t.anova.reset();
    t.pairs.clear();
    t.note = e.what();
  }
  return t;
}

std::string cell(const std::optional<double>& mean, double std, int digits) {
  if (!mean) return "n/a";
  return fmt::format("{:.{}f} ± {:.{}f}", *mean, digits, std, digits);
}

std::string safe(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out.empty() || out == "." || out == ".." ? "_" : out;
}

}  // namespace

ReportStats compute_stats(const std::vector<RunAggregate>& aggregates) {
  ReportStats stats;
  for (const auto& a : aggregates) stats.labels.push_back(a.label);
  if (aggregates.size() < 2) {
    stats.note = "significance tests need at least two strategies";
    return stats;
  }
  for (const auto& a : aggregates) {
    if (a.run_count < 2) {
      stats.note = "significance tests need at least two runs per strategy";
      return stats;
    }
  }
  for (auto m : kAllMetrics) {
    std::vector<std::vector<double>> groups;
    for (const auto& a : aggregates) groups.push_back(present(a.metrics.at(m).run_means));
    stats.tests.push_back(run_test(std::string(slug(m)), groups));
  }
  std::vector<std::vector<double>> overall;
  for (const auto& a : aggregates) overall.push_back(present(a.run_overall));
  stats.tests.push_back(run_test("overall", overall));
  return stats;
}

nlohmann::json report_to_json(const std::vector<RunAggregate>& aggregates, const ReportStats& stats,
                              const nlohmann::json& metadata) {
  nlohmann::json j;
  j["config"] = metadata;
  j["aggregates"] = nlohmann::json::array();
  for (const auto& a : aggregates) {
    nlohmann::json aj;
    aj["label"] = a.label;
    aj["run_count"] = a.run_count;
    aj["turn_count"] = a.turn_count;
    aj["overall"] = opt(a.overall);
    aj["overall_std"] = a.overall_std;
    aj["run_overall"] = opt_list(a.run_overall);
    aj["agent_calls"] = opt(a.agent_calls);
    aj["run_agent_calls"] = opt_list(a.run_agent_calls);
    for (const auto& [m, ma] : a.metrics) {
      nlohmann::json mj;
      mj["mean"] = opt(ma.mean);
      mj["std"] = ma.std;
      mj["run_means"] = opt_list(ma.run_means);
      mj["missing"] = ma.missing;
      mj["scored"] = ma.scored;
      aj["metrics"][std::string(slug(m))] = std::move(mj);
    }
    j["aggregates"].push_back(std::move(aj));
  }
  nlohmann::json sj;
  sj["labels"] = stats.labels;
  sj["note"] = stats.note;
  sj["tests"] = nlohmann::json::array();
  for (const auto& t : stats.tests) {
    nlohmann::json tj;
    tj["metric"] = t.metric;
    tj["note"] = t.note;
    if (t.anova) {
      tj["anova"] = {{"f", t.anova->f},
                     {"df_between", t.anova->df_between},
                     {"df_within", t.anova->df_within},
                     {"p", t.anova->p}};
    } else {
      tj["anova"] = nullptr;
    }
    tj["tukey"] = nlohmann::json::array();
    for (const auto& p : t.pairs) {
      tj["tukey"].push_back({{"a", stats.labels.at(p.group_i)},
                             {"b", stats.labels.at(p.group_j)},
                             {"mean_diff", p.mean_diff},
                             {"p_adj", p.p_adj},
                             {"ci_low", p.ci_low},
                             {"ci_high", p.ci_high},
                             {"significant", p.significant}});
    }
    sj["tests"].push_back(std::move(tj));
  }
  j["stats"] = std::move(sj);
  return j;
}

std::string dump_report(const nlohmann::json& report) { return report.dump(2) + "\n"; }

std::string report_markdown(const std::vector<RunAggregate>& aggregates, const ReportStats& stats,
                            bool include_overall) {
  std::vector<const RunAggregate*> rows;
  for (const auto& a : aggregates) rows.push_back(&a);
  std::stable_sort(rows.begin(), rows.end(), [](const RunAggregate* a, const RunAggregate* b) {
    if (a->overall.has_value() != b->overall.has_value()) return a->overall.has_value();
    if (a->overall && *a->overall != *b->overall) return *a->overall > *b->overall;
    return a->label < b->label;
  });

  std::string md = include_overall ? "| Strategy | Coh. | Grd. | Nat. | Eng. | Overall | #Agent | Runs |\n"
                                    : "| Strategy | Coh. | Grd. | Nat. | Eng. | #Agent | Runs |\n";
  md += include_overall ? "|---|---|---|---|---|---|---|---|\n" : "|---|---|---|---|---|---|---|\n";
  for (const auto* a : rows) {
    const auto& M = a->metrics;
    md += fmt::format("| {} | {} | {} | {} | {} |", a->label,
                      cell(M.at(MetricKind::Coherence).mean, M.at(MetricKind::Coherence).std, 2),
                      cell(M.at(MetricKind::Groundedness).mean, M.at(MetricKind::Groundedness).std, 2),
                      cell(M.at(MetricKind::Naturalness).mean, M.at(MetricKind::Naturalness).std, 2),
                      cell(M.at(MetricKind::Engagingness).mean, M.at(MetricKind::Engagingness).std, 2));
    if (include_overall) md += " " + cell(a->overall, a->overall_std, 2) + " |";
    md += fmt::format(" {} | {} |\n", a->agent_calls ? fmt::format("{:.1f}", *a->agent_calls) : "n/a",
                      a->run_count);
  }

  int missing = 0;
  for (const auto& a : aggregates)
    for (const auto& [m, ma] : a.metrics) missing += ma.missing;
  if (missing > 0) md += fmt::format("\nMissing metric scores (excluded per metric): {}\n", missing);

  if (!stats.note.empty() && aggregates.size() > 1) md += "\n" + stats.note + "\n";
  for (const auto& t : stats.tests) {
    if (!t.anova) {
      if (!t.note.empty()) md += fmt::format("\n{}: tests skipped ({})\n", t.metric, t.note);
      continue;
    }
    md += fmt::format("\n{}: F({}, {}) = {:.2f}, p = {:.3g}\n", t.metric, t.anova->df_between,
                      t.anova->df_within, t.anova->f, t.anova->p);
    for (const auto& p : t.pairs) {
      md += fmt::format("- {} vs {}: diff {:.4f}, p_adj {:.4f}, 95% CI [{:.4f}, {:.4f}]{}\n",
                        stats.labels.at(p.group_i), stats.labels.at(p.group_j), p.mean_diff, p.p_adj,
                        p.ci_low, p.ci_high, p.significant ? " *" : "");
    }
  }
  return md;
}

ReportPaths write_report(const std::filesystem::path& root, const std::string& run_id,
                         const nlohmann::json& report, const std::string& markdown) {
  const auto dir = root / "runs" / safe(run_id);
  std::filesystem::create_directories(dir);
  ReportPaths paths{dir / "report.json", dir / "report.md"};
  std::ofstream j(paths.json, std::ios::binary | std::ios::trunc);
  std::ofstream m(paths.markdown, std::ios::binary | std::ios::trunc);
  if (!j || !m) throw Error(ErrorKind::Config, "cannot write report under " + dir.string());
  j << dump_report(report);
  m << markdown;
  return paths;
}

}  // namespace refinery::evalkit
