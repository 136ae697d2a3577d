#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace refinery {

enum class MetricKind { Coherence, Groundedness, Naturalness, Engagingness };

struct ScoreBounds {
  double lo;
  double hi;

  bool contains(double v) const noexcept { return v >= lo && v <= hi; }
};

ScoreBounds bounds(MetricKind metric);
/// "Coherence", "Groundedness", ...
std::string_view display_name(MetricKind metric);
/// "coherence", "groundedness", ...
std::string_view slug(MetricKind metric);
std::optional<MetricKind> metric_from_slug(std::string_view s);

inline constexpr std::array<MetricKind, 4> kAllMetrics = {
    MetricKind::Coherence, MetricKind::Groundedness, MetricKind::Naturalness,
    MetricKind::Engagingness};

}  // namespace refinery
