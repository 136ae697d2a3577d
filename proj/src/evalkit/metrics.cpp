#include "refinery/evalkit/metrics.hpp"

#include <string>

#include "refinery/error.hpp"

namespace refinery::evalkit {

namespace {

double unit(MetricKind m, double v) {
  const auto b = bounds(m);
  if (!b.contains(v)) {
    throw Error(ErrorKind::Domain, std::string(display_name(m)) + " value " + std::to_string(v) +
                                       " is outside its scale");
  }
  return (v - b.lo) / (b.hi - b.lo);
}

}  // namespace

double overall_score(double coherence, double groundedness, double naturalness, double engagingness) {
  return 100.0 *
         (unit(MetricKind::Coherence, coherence) + unit(MetricKind::Groundedness, groundedness) +
          unit(MetricKind::Naturalness, naturalness) + unit(MetricKind::Engagingness, engagingness)) /
         4.0;
}

double MetricScores::get(MetricKind m) const {
  switch (m) {
    case MetricKind::Coherence: return coherence;
    case MetricKind::Groundedness: return groundedness;
    case MetricKind::Naturalness: return naturalness;
    case MetricKind::Engagingness: return engagingness;
  }
  return 0.0;
}

void MetricScores::set(MetricKind m, double v) {
  switch (m) {
    case MetricKind::Coherence: coherence = v; break;
    case MetricKind::Groundedness: groundedness = v; break;
    case MetricKind::Naturalness: naturalness = v; break;
    case MetricKind::Engagingness: engagingness = v; break;
  }
}

}  // namespace refinery::evalkit
