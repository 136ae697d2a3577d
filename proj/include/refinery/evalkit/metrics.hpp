#pragma once

#include <map>
#include <optional>

#include "refinery/core/metric.hpp"

namespace refinery::evalkit {

/// 100 × mean of the four metrics rescaled to [0, 1] by their bounds.
/// Throws Error(Domain) when a value is outside its metric's bounds.
double overall_score(double coherence, double groundedness, double naturalness, double engagingness);

struct MetricScores {
  double coherence = 1.0;
  double groundedness = 0.0;
  double naturalness = 1.0;
  double engagingness = 1.0;

  double get(MetricKind m) const;
  void set(MetricKind m, double v);
  double overall() const { return overall_score(coherence, groundedness, naturalness, engagingness); }
};

/// Per-metric scores for one judged turn; nullopt marks a missing metric.
using TurnMetrics = std::map<MetricKind, std::optional<double>>;

}  // namespace refinery::evalkit
