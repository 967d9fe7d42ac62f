#pragma once

#include <cmath>
#include <vector>

#include "couplekit/core.hpp"

namespace testing {

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += v;
  const double m = s / n;
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

// Pearson correlation of paired samples, with the Fisher-z approximate SE.
inline MeanSe correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  const double r = sab / std::sqrt(saa * sbb);
  return {r, (1.0 - r * r) / std::sqrt(n)};
}

// Brute-force numeric inverse of a continuous increasing CDF by bisection.
template <class Cdf>
double bisect_quantile(Cdf cdf, double u, double lo, double hi) {
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < u ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace testing
