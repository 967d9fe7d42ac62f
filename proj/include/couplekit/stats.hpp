#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace couplekit::stats {

double normal_cdf(double x) noexcept;
/// Standard normal quantile; returns +/-infinity at p = 1 / p = 0.
double normal_quantile(double p);

/// Pairwise (cascade) summation with a fixed tree shape, so the result only
/// depends on the order of the input, not on how it was produced.
double pairwise_sum(std::span<const double> values) noexcept;
double mean(std::span<const double> values) noexcept;
/// Sample variance with denominator (n - 1).
double sample_variance(std::span<const double> values) noexcept;

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against a continuous CDF. The p-value
/// uses the asymptotic Kolmogorov law with Stephens' small-sample correction.
TestResult ks_test(std::vector<double> sample, const std::function<double(double)>& cdf);

/// Two-sample Kolmogorov-Smirnov test.
TestResult ks_two_sample(std::vector<double> a, std::vector<double> b);

/// Anderson-Darling normality test with mean and variance estimated from the
/// sample (D'Agostino-Stephens adjusted statistic and p-value approximation).
TestResult anderson_darling_normal(std::vector<double> sample);

/// Pearson chi-square goodness of fit of observed counts against probabilities.
TestResult chi_square_test(std::span<const double> observed, std::span<const double> probabilities);

/// Upper tail of the chi-square distribution.
double chi_square_sf(double statistic, double dof);

}  // namespace couplekit::stats
