#include "refinery/evalkit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include "refinery/error.hpp"

namespace refinery::evalkit {

namespace {

using boost::math::quadrature::gauss_kronrod;

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double phi(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }
double Phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

void check_groups(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw Error(ErrorKind::Stat, "need at least two groups");
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].size() < 2) {
      throw Error(ErrorKind::Stat, "group " + std::to_string(i) + " has fewer than two observations");
    }
  }
}

struct Partition {
  std::vector<double> means;
  double ss_within = 0.0;
  double ss_between = 0.0;
  int n_total = 0;
};

Partition partition(const std::vector<std::vector<double>>& groups) {
  Partition p;
  double grand = 0.0;
  for (const auto& g : groups) {
    p.means.push_back(mean(g));
    p.n_total += static_cast<int>(g.size());
    grand += std::accumulate(g.begin(), g.end(), 0.0);
  }
  grand /= p.n_total;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (double x : groups[i]) p.ss_within += (x - p.means[i]) * (x - p.means[i]);
    p.ss_between += static_cast<double>(groups[i].size()) * (p.means[i] - grand) * (p.means[i] - grand);
  }
  if (!(p.ss_within > 0.0)) throw Error(ErrorKind::Stat, "zero within-group variance");
  return p;
}

// P(range of k standard normals < w).
double range_cdf_normal(double w, int k) {
  if (w <= 0.0) return 0.0;
  auto f = [&](double z) {
    const double d = Phi(z) - Phi(z - w);
    return phi(z) * std::pow(d, k - 1);
  };
  // Integrand mass sits between -9 and w + 9.
  const double a = -9.0, mid = 0.5 * w, b = w + 9.0;
  const double v = gauss_kronrod<double, 31>::integrate(f, a, mid, 12, 1e-13) +
                   gauss_kronrod<double, 31>::integrate(f, mid, b, 12, 1e-13);
  return std::clamp(k * v, 0.0, 1.0);
}

}  // namespace

AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups) {
  check_groups(groups);
  const auto p = partition(groups);
  AnovaResult r;
  r.df_between = static_cast<int>(groups.size()) - 1;
  r.df_within = p.n_total - static_cast<int>(groups.size());
  r.f = (p.ss_between / r.df_between) / (p.ss_within / r.df_within);
  boost::math::fisher_f dist(r.df_between, r.df_within);
  r.p = boost::math::cdf(boost::math::complement(dist, r.f));
  return r;
}

double studentized_range_cdf(double q, int k, double df) {
  if (k < 2) throw Error(ErrorKind::Stat, "studentized range needs k >= 2");
  if (!(df > 0.0)) throw Error(ErrorKind::Stat, "studentized range needs df > 0");
  if (!(q > 0.0)) return 0.0;
  if (std::isinf(df) || df > 25000.0) return range_cdf_normal(q, k);

  // s = sqrt(chi2_df / df); integrate its density against the normal-range CDF.
  const double log_norm = 0.5 * df * std::log(df) - std::lgamma(0.5 * df) - (0.5 * df - 1.0) * std::log(2.0);
  auto density = [&](double s) {
    if (s <= 0.0) return 0.0;
    return std::exp(log_norm + (df - 1.0) * std::log(s) - 0.5 * df * s * s);
  };
  boost::math::chi_squared chi(df);
  const double lo = std::sqrt(boost::math::quantile(chi, 1e-15) / df);
  const double hi = std::sqrt(boost::math::quantile(boost::math::complement(chi, 1e-15)) / df);
  const double mode = df > 1.0 ? std::sqrt((df - 1.0) / df) : 0.5 * (lo + hi);
  auto f = [&](double s) { return density(s) * range_cdf_normal(q * s, k); };
  double v = gauss_kronrod<double, 31>::integrate(f, lo, mode, 10, 1e-12) +
             gauss_kronrod<double, 31>::integrate(f, mode, hi, 10, 1e-12);
  return std::clamp(v, 0.0, 1.0);
}

double studentized_range_sf(double q, int k, double df) { return 1.0 - studentized_range_cdf(q, k, df); }

double studentized_range_quantile(double p, int k, double df) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorKind::Stat, "quantile probability must lie in (0, 1)");
  auto g = [&](double q) { return studentized_range_cdf(q, k, df) - p; };
  double hi = 10.0;
  while (g(hi) < 0.0) {
    hi *= 2.0;
    if (hi > 1e4) throw Error(ErrorKind::Stat, "studentized range quantile did not bracket");
  }
  std::uintmax_t iters = 200;
  boost::math::tools::eps_tolerance<double> tol(40);
  auto [a, b] = boost::math::tools::toms748_solve(g, 1e-9, hi, -p, g(hi), tol, iters);
  return 0.5 * (a + b);
}

std::vector<TukeyComparison> tukey_hsd(const std::vector<std::vector<double>>& groups, double alpha) {
  check_groups(groups);
  const auto p = partition(groups);
  const int k = static_cast<int>(groups.size());
  const double df = p.n_total - k;
  const double mse = p.ss_within / df;
  const double crit = studentized_range_quantile(1.0 - alpha, k, df);

  std::vector<TukeyComparison> out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      TukeyComparison c;
      c.group_i = i;
      c.group_j = j;
      c.mean_diff = p.means[i] - p.means[j];
      const double se =
          std::sqrt(0.5 * mse * (1.0 / static_cast<double>(groups[i].size()) + 1.0 / static_cast<double>(groups[j].size())));
      c.p_adj = std::clamp(studentized_range_sf(std::abs(c.mean_diff) / se, k, df), 0.0, 1.0);
      c.ci_low = c.mean_diff - crit * se;
      c.ci_high = c.mean_diff + crit * se;
      c.significant = c.p_adj < alpha;
      out.push_back(c);
    }
  }
  return out;
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error(ErrorKind::Stat, "spearman inputs differ in length");
  if (x.size() < 2) throw Error(ErrorKind::Stat, "spearman needs at least two points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::Stat, "spearman input is constant");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace refinery::evalkit
