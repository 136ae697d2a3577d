#pragma once

// Significance tests over run-level means.

#include <cstddef>
#include <vector>

namespace refinery::evalkit {

struct AnovaResult {
  double f = 0.0;
  int df_between = 0;
  int df_within = 0;
  double p = 1.0;
};

/// One-way ANOVA. Throws Error(Stat) with fewer than two groups, a group
/// of fewer than two observations, or zero within-group variance.
AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups);

/// CDF of the studentized range for `k` means and `df` error degrees of
/// freedom (df may be +infinity).
double studentized_range_cdf(double q, int k, double df);
double studentized_range_sf(double q, int k, double df);
/// Inverse CDF.
double studentized_range_quantile(double p, int k, double df);

struct TukeyComparison {
  std::size_t group_i = 0;
  std::size_t group_j = 0;
  // mean_i − mean_j
  double mean_diff = 0.0;
  double p_adj = 1.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool significant = false;
};

/// All pairs i < j. Intervals at 1 − alpha; significant ⇔ p_adj < alpha.
std::vector<TukeyComparison> tukey_hsd(const std::vector<std::vector<double>>& groups,
                                       double alpha = 0.05);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(const std::vector<double>& values);

/// Pearson correlation of the average ranks. Throws Error(Stat) on a
/// length mismatch, fewer than two points or a constant input.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace refinery::evalkit
