#pragma once

#include <string>
#include <vector>

#include "couplekit/core.hpp"
#include "couplekit/matching.hpp"

namespace couplekit {

enum class EstimatorKind { HT, OLS, Logit };

std::string to_string(EstimatorKind kind);
EstimatorKind estimator_kind_from_string(const std::string& name);

struct EstimateRecord {
  EstimatorKind kind = EstimatorKind::HT;
  Vector theta;
  std::string target;
  Index iterations = 0;
  double gradient_norm = 0.0;
};

/// theta = E_n[Y_i H(D_i)] with H the Horvitz-Thompson weight of F.
EstimateRecord ht_estimate(const Vector& y, const Matrix& d, const Marginal& marginal);

/// Slopes of the least-squares fit Y ~ 1 + D.
EstimateRecord ols_blp(const Vector& y, const Matrix& d);

struct LogitOptions {
  double tol = 1e-10;  // gradient max-norm
  Index max_iter = 100;
  bool intercept = true;
};

/// Logistic regression MLE by Newton's method with step halving. With
/// `intercept`, theta = (beta_0, beta_1..m). Accepts fractional responses.
EstimateRecord logit_mle(const Vector& y, const Matrix& d, const LogitOptions& options = {});

/// Feature vector x(d) used by the logit fit.
Vector logit_features(const Vector& d, bool intercept);
double logistic(double t);

/// s_i(d) = Y_i(d) H_j(d), the influence of component j of the HT estimator.
InfluenceSpec ht_influence(std::shared_ptr<const PotentialOutcomes> outcomes, Index units, const Marginal& marginal,
                           Index component = 0);

/// HT estimand theta_n = E_n E_F[Y_i(D) H_j(D)] on the table draws.
double ht_estimand(const PotentialOutcomes& outcomes, Index units, const FunctionTable& table, Index component = 0);

struct LinearizedTarget {
  Vector theta;        // BLP slopes or logit coefficients on the table draws
  Matrix jacobian;     // var_F(D) for OLS, J_n for logit
  FunctionTable table; // influence values s_i(D^(r)) for the chosen component
};

/// OLS-BLP linearization: s_i(d) = e_i(d) H_j(d) with
/// e_i(d) = Y_i(d) - E_F[Ybar_n(D)] - theta_BLP'(d - E_F D).
LinearizedTarget blp_influence_table(const PotentialOutcomes& outcomes, Index units, const Marginal& marginal, Index count,
                                     RandomStream stream, Index component = 0,
                                     TableLayout layout = TableLayout::Independent, Index orbit = 1);

/// Logit linearization: s_i(d) = (Y_i(d) - L(beta_n'x(d))) [J_n^{-1} x(d)]_j with
/// J_n = E_F[L'(beta_n'x) x x'], beta_n fitted to Ybar_n on the table draws.
LinearizedTarget logit_influence_table(const PotentialOutcomes& outcomes, Index units, const Marginal& marginal,
                                       Index count, RandomStream stream, Index component = 0,
                                       const LogitOptions& options = {}, TableLayout layout = TableLayout::Independent,
                                       Index orbit = 1);

struct VarianceEstimate {
  double sigma2 = 0.0;
  std::vector<Index> pairing;
  Vector group_means;
};

/// sigma^2 = (k^2 / 2n^2) sum_g (theta_g - theta_pi(g))^2.
VarianceEstimate collapsed_strata_variance(const Vector& group_estimates, Index k, Index n,
                                           const std::vector<Index>& pairing);

/// Pairs groups by ordering their covariate centroids along the first
/// principal direction and matching neighbours; with an odd number of groups,
/// the cyclic shift along that order.
std::vector<Index> pair_groups(const Matrix& x, const Matching& matching);

/// The cyclic shift g -> g + 1 mod G.
std::vector<Index> cyclic_pairing(Index groups);

struct ConfidenceInterval {
  double alpha = 0.05;
  double lower = 0.0;
  double upper = 0.0;
};

ConfidenceInterval confidence_interval(double theta, double sigma2, double alpha);

}  // namespace couplekit
