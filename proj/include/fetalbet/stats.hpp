#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "fetalbet/error.hpp"

namespace fetalbet {

inline double mean(std::span<const double> x) {
  detail::require(!x.empty(), "mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Sample standard deviation (n - 1); 0 for a single value.
inline double sample_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double sq = 0.0;
  for (double v : x) sq += (v - m) * (v - m);
  return std::sqrt(sq / static_cast<double>(x.size() - 1));
}

// Linear interpolation between order statistics (numpy's default rule).
inline double quantile(std::vector<double> x, double q) {
  detail::require(!x.empty(), "quantile of an empty sample");
  detail::require(q >= 0.0 && q <= 1.0, "quantile must lie in [0, 1]");
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, x.size() - 1);
  return x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]);
}

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  double mean_difference = 0.0;
};

// Two-sided paired t-test on a - b.
inline TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ContractError("paired_t_test: samples differ in length (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  if (a.size() < 2) throw ContractError("paired_t_test: need at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double m = mean(d);
  const double sd = sample_std(d);
  if (!(sd > 0.0) || sd <= std::abs(m) * 1e-14)
    throw DegenerateError("paired_t_test: differences have zero variance");
  const double n = static_cast<double>(d.size());
  TTestResult r;
  r.df = n - 1;
  r.mean_difference = m;
  r.t = m / (sd / std::sqrt(n));
  const boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

inline std::string significance_stars(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("significance_stars: p-value outside [0, 1]");
  if (p > 0.05) return "ns";
  if (p > 0.01) return "*";
  if (p > 0.001) return "**";
  if (p > 0.0001) return "***";
  return "****";
}

}  // namespace fetalbet
