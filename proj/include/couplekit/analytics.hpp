#pragma once

#include <functional>
#include <string>
#include <vector>

#include "couplekit/core.hpp"
#include "couplekit/couplings.hpp"
#include "couplekit/matching.hpp"
#include "couplekit/transport.hpp"

namespace couplekit {

enum class DispersionMethod { MonteCarlo, ClosedForm };

struct DispersionEstimate {
  double value = 0.0;
  double se = 0.0;
  DispersionMethod method = DispersionMethod::MonteCarlo;
  Index replications = 0;
};

/// Draws one k x dim treatment tuple.
using TupleSampler = std::function<Matrix(RandomStream)>;
using Phi = std::function<double(const Vector&)>;

TupleSampler coupling_sampler(const CouplingSpec& spec, const TransportMap& map);

/// Monte Carlo dispersion -(k-1) corr(phi(D_i), phi(D_j)), averaging over all
/// ordered pairs i != j within each tuple. Moments are pooled over reps and
/// slots; the standard error uses the delta method for the ratio of means.
DispersionEstimate dispersion_mc(const TupleSampler& sampler, const Phi& phi, Index reps, RandomStream stream);
DispersionEstimate dispersion_mc(const CouplingSpec& spec, const TransportMap& map, const Phi& phi, Index reps,
                                 RandomStream stream);

/// Exact dispersion on a known eigenspace. Labels:
///   LatinHypercube: "hist", "hist_perp"; ShiftedLattice: "acyclic", "cyclic";
///   GaussianCopula: "hermite:<m>" (or "h<m>"); Antithetic: "odd", "even";
///   CompleteRandomization and IID: "any".
double dispersion_closed_form(CouplingKind kind, Index k, const std::string& label);

struct MatchQualityReport {
  double v_iid = 0.0;
  double v_delta = 0.0;
  double v_g = 0.0;
  double c = 0.0;
  double q = 0.0;
  /// Group-centered form (k-1)^{-1} (n/k)^{-1} sum_g sum_i var(s_ig - sbar_g).
  double v_delta_centered = 0.0;
};

/// Sample-moment variance components of the rows of `values` (n x R) under the
/// grouping; no degeneracy check.
MatchQualityReport variance_parts(const Matrix& values, const Matching& matching);

/// Match quality of a FunctionTable; throws when v_iid is zero.
MatchQualityReport match_quality(const FunctionTable& table, const Matching& matching);

/// Q_k(b) = 1 - (n/k)^{-1} sum_g var_k(b_ig) / var_n(b), with var_k the
/// within-group sample variance (denominator k-1) and var_n over all units
/// (denominator n).
double covariate_match_quality(const Vector& b, const Matching& matching);

struct ImbalanceEstimate {
  double ratio = 0.0;
  double se = 0.0;
  double imbalance = 0.0;      // E_G cov_n(phi(D), b)^2
  double imbalance_iid = 0.0;  // same under iid assignment
  double q_b = 0.0;
  Index replications = 0;
};

ImbalanceEstimate imbalance_ratio(const CouplingSpec& spec, const TransportMap& map, const Phi& phi, const Vector& b,
                                  const Matching& matching, Index reps, RandomStream stream);

struct Projection {
  Vector projected;
  double weight = 0.0;  // var(P phi) / var(phi)
};

/// Per-bin mean of phi over the k bins of u in [0,1], minus the grand mean.
Projection histogram_projection(const Vector& values, const Vector& u, Index k);

struct CyclicProjection {
  Vector cyclic;
  Vector acyclic;
  double w_cyclic = 0.0;
  double w_acyclic = 0.0;
};

/// P_c phi(u) = k^{-1} sum_l phi(u + l/k mod 1) - mean, P_a phi = phi - k^{-1} sum_l phi(u + l/k mod 1).
CyclicProjection cyclic_projection(const std::function<double(double)>& phi, const Vector& u, Index k);
/// Same on values already laid out in shift orbits of length k.
CyclicProjection cyclic_projection(const Vector& values, Index k);

struct HermiteProjection {
  Vector coefficients;  // <phi, h_m>, m = 1..M
  Vector weights;       // coefficient^2 / var(phi)
  Vector se;            // standard errors of the coefficients
};

/// Normalized probabilists' Hermite polynomial h_m = He_m / sqrt(m!).
double hermite(Index m, double x);
HermiteProjection hermite_projection(const Vector& values, const Vector& z, Index max_order);

struct EigenRow {
  std::string label;
  double weight = 0.0;
  double dispersion = 0.0;
  double match_quality = 0.0;
  double v_iid = 0.0;
  double v_delta = 0.0;
  double v_g = 0.0;
};

struct EfficiencyReport {
  CouplingKind kind = CouplingKind::IID;
  Index k = 0;
  bool monte_carlo_only = false;
  std::vector<EigenRow> rows;
  double predicted_efficiency = 0.0;
  /// sum_m [disp_m v_delta(s^m) + (1 - disp_m) v_iid(s^m)]
  double nominal_variance = 0.0;
  /// Kind-specific closed form (LHS, RS, AV, CR, IID); equals nominal_variance
  /// up to table slack.
  double nominal_variance_kind = 0.0;
  double v_iid = 0.0;
};

/// Projects the influence table onto the eigenspaces of the coupling and
/// combines per-space weights, match qualities and closed-form dispersions.
/// Requirements on the table: canonical uniforms for LHS, a shift-orbit layout
/// with orbit k for RS, a reflection layout for AV (and Gaussian with k = 2).
EfficiencyReport efficiency_decomposition(const CouplingSpec& spec, const FunctionTable& table, const Matching& matching,
                                          Index hermite_order = 8);

/// Total variation of a function sampled on an increasing grid (>= 1000 points).
double total_variation(const Vector& grid, const Vector& values);
/// eta_TV = E_n[V_i^2] / v_iid for per-unit variations V_i.
double eta_tv(const Vector& variations, double v_iid);

struct WorstCaseRate {
  double id = 0.0;  // infimum dispersion
  double sd = 0.0;  // supremum dispersion
  double rate = 1.0;
};

WorstCaseRate worst_case_rate(CouplingKind kind, Index k);

}  // namespace couplekit
