#include "refinery/evalkit/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "refinery/error.hpp"

namespace refinery::evalkit {

namespace {

std::optional<double> mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return std::nullopt;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

std::vector<double> present(const std::vector<std::optional<double>>& xs) {
  std::vector<double> out;
  for (const auto& x : xs)
    if (x) out.push_back(*x);
  return out;
}

}  // namespace

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = *mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

RunAggregate aggregate(const std::string& label, const std::vector<RunScores>& runs) {
  if (runs.empty()) throw Error(ErrorKind::Aggregation, fmt::format("{}: no runs to aggregate", label));

  // Sorting by key makes every sum independent of the input turn order.
  std::vector<RunScores> sorted = runs;
  std::set<TurnKey> reference;
  for (std::size_t r = 0; r < sorted.size(); ++r) {
    auto& run = sorted[r];
    std::sort(run.begin(), run.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
    std::set<TurnKey> keys;
    for (const auto& t : run) {
      if (!keys.insert(t.key).second)
        throw Error(ErrorKind::Aggregation, fmt::format("{}: run {} scores {} turn {} twice", label, r + 1,
                                                        t.key.conversation_id, t.key.turn));
    }
    if (r == 0) {
      reference = std::move(keys);
    } else if (keys != reference) {
      throw Error(ErrorKind::Aggregation,
                  fmt::format("{}: run {} covers a different turn set than run 1", label, r + 1));
    }
  }

  RunAggregate agg;
  agg.label = label;
  agg.run_count = static_cast<int>(sorted.size());
  agg.turn_count = static_cast<int>(reference.size());

  for (auto m : kAllMetrics) {
    MetricAggregate ma;
    for (const auto& run : sorted) {
      std::vector<double> vals;
      for (const auto& t : run) {
        auto it = t.metrics.find(m);
        if (it != t.metrics.end() && it->second) {
          vals.push_back(*it->second);
        } else {
          ++ma.missing;
        }
      }
      ma.scored += static_cast<int>(vals.size());
      ma.run_means.push_back(mean_of(vals));
    }
    const auto avail = present(ma.run_means);
    ma.mean = mean_of(avail);
    ma.std = sample_std(avail);
    agg.metrics[m] = std::move(ma);
  }

  const auto& M = agg.metrics;
  if (M.at(MetricKind::Coherence).mean && M.at(MetricKind::Groundedness).mean &&
      M.at(MetricKind::Naturalness).mean && M.at(MetricKind::Engagingness).mean) {
    agg.overall = overall_score(*M.at(MetricKind::Coherence).mean, *M.at(MetricKind::Groundedness).mean,
                                *M.at(MetricKind::Naturalness).mean, *M.at(MetricKind::Engagingness).mean);
  }
  for (std::size_t r = 0; r < sorted.size(); ++r) {
    std::optional<double> o;
    const auto& c = M.at(MetricKind::Coherence).run_means[r];
    const auto& g = M.at(MetricKind::Groundedness).run_means[r];
    const auto& n = M.at(MetricKind::Naturalness).run_means[r];
    const auto& e = M.at(MetricKind::Engagingness).run_means[r];
    if (c && g && n && e) o = overall_score(*c, *g, *n, *e);
    agg.run_overall.push_back(o);

    std::vector<double> calls;
    for (const auto& t : sorted[r])
      if (t.agent_calls) calls.push_back(*t.agent_calls);
    agg.run_agent_calls.push_back(mean_of(calls));
  }
  agg.overall_std = sample_std(present(agg.run_overall));
  agg.agent_calls = mean_of(present(agg.run_agent_calls));
  return agg;
}

}  // namespace refinery::evalkit
