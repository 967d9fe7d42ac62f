#include "couplekit/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "couplekit/error.hpp"

namespace couplekit::stats {

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("normal_quantile: probability outside [0, 1]");
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  return boost::math::quantile(boost::math::normal_distribution<double>{}, p);
}

double pairwise_sum(std::span<const double> values) noexcept {
  constexpr std::size_t kBlock = 64;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double mean(std::span<const double> values) noexcept {
  if (values.empty()) return 0.0;
  return pairwise_sum(values) / static_cast<double>(values.size());
}

double sample_variance(std::span<const double> values) noexcept {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  std::vector<double> sq(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) sq[i] = (values[i] - m) * (values[i] - m);
  return pairwise_sum(sq) / static_cast<double>(values.size() - 1);
}

namespace {

double kolmogorov_sf(double lambda) {
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int j = 1; j <= 200; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += (j % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

}  // namespace

TestResult ks_test(std::vector<double> sample, const std::function<double(double)>& cdf) {
  if (sample.empty()) throw ValidationError("ks_test: empty sample");
  std::sort(sample.begin(), sample.end());
  const auto n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  const double rn = std::sqrt(n);
  return {d, kolmogorov_sf((rn + 0.12 + 0.11 / rn) * d)};
}

TestResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ValidationError("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto na = static_cast<double>(a.size());
  const auto nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d)};
}

TestResult anderson_darling_normal(std::vector<double> sample) {
  const std::size_t size = sample.size();
  if (size < 8) throw ValidationError("anderson_darling_normal: need at least 8 observations");
  std::sort(sample.begin(), sample.end());
  const double m = mean(sample);
  const double sd = std::sqrt(sample_variance(sample));
  if (!(sd > 0.0)) throw ValidationError("anderson_darling_normal: zero variance sample");
  const auto n = static_cast<double>(size);
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double zi = (sample[i] - m) / sd;
    const double zr = (sample[size - 1 - i] - m) / sd;
    // log(1 - Phi(z)) = log(Phi(-z)), evaluated without cancellation.
    const double log_cdf = std::log(std::max(normal_cdf(zi), 1e-300));
    const double log_sf = std::log(std::max(normal_cdf(-zr), 1e-300));
    s += (2.0 * static_cast<double>(i) + 1.0) * (log_cdf + log_sf);
  }
  const double a2 = -n - s / n;
  const double adj = a2 * (1.0 + 0.75 / n + 2.25 / (n * n));
  double p;
  if (adj >= 0.6) {
    p = std::exp(1.2937 - 5.709 * adj + 0.0186 * adj * adj);
  } else if (adj >= 0.34) {
    p = std::exp(0.9177 - 4.279 * adj - 1.38 * adj * adj);
  } else if (adj >= 0.2) {
    p = 1.0 - std::exp(-8.318 + 42.796 * adj - 59.938 * adj * adj);
  } else {
    p = 1.0 - std::exp(-13.436 + 101.14 * adj - 223.73 * adj * adj);
  }
  return {adj, std::clamp(p, 0.0, 1.0)};
}

double chi_square_sf(double statistic, double dof) {
  if (dof <= 0) throw ValidationError("chi_square_sf: dof must be positive");
  if (statistic <= 0) return 1.0;
  return boost::math::gamma_q(dof / 2.0, statistic / 2.0);
}

TestResult chi_square_test(std::span<const double> observed, std::span<const double> probabilities) {
  if (observed.size() != probabilities.size() || observed.size() < 2)
    throw ValidationError("chi_square_test: need matching observed/probability vectors of size >= 2");
  const double total = pairwise_sum(observed);
  double stat = 0.0;
  for (std::size_t j = 0; j < observed.size(); ++j) {
    const double expected = total * probabilities[j];
    if (expected <= 0) throw ValidationError("chi_square_test: zero expected count");
    stat += (observed[j] - expected) * (observed[j] - expected) / expected;
  }
  return {stat, chi_square_sf(stat, static_cast<double>(observed.size() - 1))};
}

}  // namespace couplekit::stats
