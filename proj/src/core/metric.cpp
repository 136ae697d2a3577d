#include "refinery/core/metric.hpp"

namespace refinery {

ScoreBounds bounds(MetricKind metric) {
  return metric == MetricKind::Groundedness ? ScoreBounds{0.0, 1.0} : ScoreBounds{1.0, 3.0};
}

std::string_view display_name(MetricKind metric) {
  switch (metric) {
    case MetricKind::Coherence: return "Coherence";
    case MetricKind::Groundedness: return "Groundedness";
    case MetricKind::Naturalness: return "Naturalness";
    case MetricKind::Engagingness: return "Engagingness";
  }
  return "Coherence";
}

std::string_view slug(MetricKind metric) {
  switch (metric) {
    case MetricKind::Coherence: return "coherence";
    case MetricKind::Groundedness: return "groundedness";
    case MetricKind::Naturalness: return "naturalness";
    case MetricKind::Engagingness: return "engagingness";
  }
  return "coherence";
}

std::optional<MetricKind> metric_from_slug(std::string_view s) {
  for (auto m : kAllMetrics) {
    if (slug(m) == s) return m;
  }
  return std::nullopt;
}

}  // namespace refinery
