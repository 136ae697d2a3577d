#pragma once

// Independent numerical oracles for the statistics routines.

#include <cmath>
#include <numeric>
#include <vector>

namespace testing {

template <typename F>
inline double simpson(F f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

inline double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// P(studentized range < q) by a plain Simpson double integral.
inline double oracle_ptukey(double q, int k, double df) {
  auto range_cdf = [&](double w) {
    return k * simpson([&](double z) { return norm_pdf(z) * std::pow(norm_cdf(z) - norm_cdf(z - w), k - 1); },
                       -12.0, w + 12.0, 3000);
  };
  const double c = 0.5 * df * std::log(df) - std::lgamma(0.5 * df) - (0.5 * df - 1.0) * std::log(2.0);
  auto dens = [&](double s) { return s <= 0 ? 0.0 : std::exp(c + (df - 1) * std::log(s) - 0.5 * df * s * s); };
  const double smax = 1.0 + 14.0 / std::sqrt(2.0 * df) + 2.0;
  return simpson([&](double s) { return dens(s) * range_cdf(q * s); }, 0.0, smax, 800);
}

struct BruteAnova {
  double f;
  int dfb, dfw;
};

// Textbook sums of squares, total minus within, accumulated in long double.
inline BruteAnova brute_anova(const std::vector<std::vector<double>>& g) {
  long double total = 0, n = 0;
  for (const auto& xs : g)
    for (double x : xs) total += x, n += 1;
  const long double grand = total / n;
  long double sst = 0, ssw = 0;
  for (const auto& xs : g) {
    long double m = 0;
    for (double x : xs) m += x;
    m /= xs.size();
    for (double x : xs) {
      sst += (x - grand) * (x - grand);
      ssw += (x - m) * (x - m);
    }
  }
  const int k = static_cast<int>(g.size());
  const int N = static_cast<int>(n);
  return {static_cast<double>(((sst - ssw) / (k - 1)) / (ssw / (N - k))), k - 1, N - k};
}

// Upper F tail as a regularized incomplete beta, integrated directly.
inline double oracle_f_sf(double f, int d1, int d2) {
  const double a = 0.5 * d2, b = 0.5 * d1, y = d2 / (d2 + d1 * f);
  const double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  // t = y·u^2 removes the t^(a-1) endpoint behaviour for a < 1.
  auto g = [&](double u) {
    const double t = y * u * u;
    if (t <= 0) return 0.0;
    return 2.0 * y * u * std::exp((a - 1) * std::log(t) + (b - 1) * std::log1p(-t) - lbeta);
  };
  return simpson(g, 0.0, 1.0, 20000);
}

// Rank of each element by explicit counting, ties averaged.
inline double oracle_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      int below = 0, equal = 0;
      for (double w : v) below += w < v[i], equal += w == v[i];
      r[i] = below + (equal + 1) / 2.0;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace testing
