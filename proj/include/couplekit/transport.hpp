#pragma once

#include <functional>
#include <string>
#include <vector>

#include "couplekit/core.hpp"
#include "couplekit/couplings.hpp"

namespace couplekit {

enum class TransportKind { Quantile, SemiDiscrete };

struct FitDiagnostics {
  double mass_error = 0.0;          // L-infinity cell mass error on the check set
  Index samples_per_iteration = 0;  // stratified samples per ascent batch
  Index check_samples = 0;
  Index iterations = 0;
  Index accepted = 0;
  double step_scale = 0.0;
  bool converged = false;
  /// Sampled dual gain of every accepted step, each evaluated on the batch
  /// that proposed it (old and new potentials on common samples).
  std::vector<double> dual_gains;
};

struct SemiDiscreteOptions {
  Index mc_samples = 200000;
  double tol = 1e-3;
  Index max_iterations = 500;
  Index check_every = 10;
  /// Initial step scale of the plain gradient variant; 0 selects it from the
  /// point spacing.
  double step_scale = 0.0;
  /// Precondition the ascent direction with a sampled estimate of the dual
  /// Hessian and backtrack the step length (damped Newton). When false the
  /// update is plain gradient ascent with step c / sqrt(t).
  bool preconditioned = true;
};

/// Geometry-preserving map from [0,1]^m into the treatment space.
class TransportMap {
 public:
  static TransportMap quantile(Marginal marginal);
  static TransportMap semidiscrete(Matrix points, Vector weights, Vector potentials, FitDiagnostics diagnostics = {});

  TransportKind kind() const noexcept { return kind_; }
  Index dimension() const noexcept;
  const Marginal& marginal() const noexcept { return marginal_; }
  const Matrix& points() const noexcept { return points_; }
  const Vector& weights() const noexcept { return weights_; }
  const Vector& potentials() const noexcept { return potentials_; }
  const FitDiagnostics& diagnostics() const noexcept { return diagnostics_; }

  /// Support index selected for u (semi-discrete, or discrete m = 1 quantile), else -1.
  Index cell(const Vector& u) const;
  Vector apply(const Vector& u) const;

 private:
  TransportKind kind_ = TransportKind::Quantile;
  Marginal marginal_;
  Matrix points_;
  Vector weights_;
  Vector potentials_;
  Vector offsets_;  // |d_j|^2 - psi_j
  FitDiagnostics diagnostics_;
};

struct TreatmentTuple {
  Matrix uniforms;          // k x m, empty for complete randomization
  Matrix treatments;        // k x dim
  std::vector<Index> cell;  // support index per slot, -1 when not applicable
};

/// Applies T row by row.
TreatmentTuple quantile_map(const Marginal& marginal, const UniformTuple& tuple);
TreatmentTuple apply_transport(const TransportMap& map, const UniformTuple& tuple);

/// Samples one within-group treatment tuple: coupling then transport, or the
/// complete-randomization allocation directly.
TreatmentTuple draw_treatments(const CouplingSpec& spec, const TransportMap& map, RandomStream stream);

/// Stochastic dual ascent for the semi-discrete transport from unif[0,1]^m to
/// the weighted points under quadratic cost.
TransportMap fit_semidiscrete(const Matrix& points, const Vector& weights, RandomStream stream,
                              const SemiDiscreteOptions& options = {});

/// Cell masses of a semi-discrete map on `count` jittered stratified samples.
Vector cell_masses(const TransportMap& map, Index count, RandomStream stream);

/// count x m jittered stratified points in [0,1)^m (count rounded down to a
/// full grid g^m).
Matrix jittered_grid(Index count, Index m, RandomStream stream);

struct MonotonicityResult {
  bool passed = true;
  Index trials = 0;
  Index violations = 0;
  double worst_margin = 0.0;  // min over trials of sum u.T(u) - sum u.T(u_sigma)
};

/// Checks sum_l u_l'T(u_l) >= sum_l u_l'T(u_sigma(l)) for random point sets and
/// permutations.
MonotonicityResult cyclic_monotonicity_check(const std::function<Vector(const Vector&)>& map, Index m, Index points,
                                             Index trials, RandomStream stream, double tol = 1e-9);
MonotonicityResult cyclic_monotonicity_check(const TransportMap& map, Index points, Index trials, RandomStream stream,
                                             double tol = 1e-9);

/// Rejection sampling of `count` points uniformly from {d in box : cost(d) <= budget}.
Matrix discretize_constrained(const Vector& lower, const Vector& upper, const std::function<double(const Vector&)>& cost,
                              double budget, Index count, RandomStream stream, Index max_proposals = 0);

void save_transport_json(const TransportMap& map, const std::string& path);
TransportMap load_transport_json(const std::string& path);

}  // namespace couplekit
