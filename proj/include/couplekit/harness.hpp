#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "couplekit/analytics.hpp"
#include "couplekit/core.hpp"
#include "couplekit/couplings.hpp"
#include "couplekit/inference.hpp"
#include "couplekit/matching.hpp"
#include "couplekit/transport.hpp"

namespace couplekit {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

enum class OutcomeFamily { Null, Linear, Quadratic, Histogram, Cyclic, Logistic };

std::string to_string(OutcomeFamily family);
OutcomeFamily outcome_family_from_string(const std::string& name);

struct PopulationSpec {
  Index n = 0;
  Index p = 0;
  OutcomeFamily family = OutcomeFamily::Linear;
  /// Share of each coefficient's variance explained by the covariates.
  double r2 = 0.7;
  double baseline = 0.0;  // mean of a_i
  double effect = 1.0;    // mean of b_i (and c_i)
  double spread = 1.0;    // sd of the coefficients across units
  Index bins = 4;         // histogram family
  Index frequency = 4;    // cyclic family
};

/// Synthetic potential outcomes with per-unit coefficients. With t(d) = 1'd
/// and u(d) the CDF of the first treatment coordinate:
///   null       1'X_i (no treatment effect)
///   linear     a_i + b_i t
///   quadratic  a_i + b_i t + c_i t^2
///   histogram  a_i + b_i floor(bins u) / bins
///   cyclic     a_i + b_i sin(2 pi frequency u)
///   logistic   1{v_i < L(a_i + b_i t)}
class SyntheticOutcomes final : public PotentialOutcomes {
 public:
  SyntheticOutcomes(OutcomeFamily family, Vector a, Vector b, Vector c, Vector v, Marginal marginal, Index bins,
                    Index frequency, Vector level = Vector());

  double outcome(Index unit, const Vector& d) const override;
  std::string describe() const override;

  OutcomeFamily family() const noexcept { return family_; }
  const Vector& a() const noexcept { return a_; }
  const Vector& b() const noexcept { return b_; }
  const Vector& c() const noexcept { return c_; }
  /// Exact E_F[Y_i(D) H(D)] per unit (n x m) when available in closed form
  /// (linear family: b_i 1; null family: 0).
  std::optional<Matrix> exact_unit_blp() const;

 private:
  double position(const Vector& d) const;

  OutcomeFamily family_;
  Vector a_, b_, c_, v_, level_;
  Marginal marginal_;
  Index bins_;
  Index frequency_;
};

/// Covariates X ~ N(0, I_p) unless given; coefficients sqrt(r2) z(X'gamma) +
/// sqrt(1 - r2) eps, rescaled by `spread` and shifted by the family means.
Population make_population(const PopulationSpec& spec, const Marginal& marginal, RandomStream stream,
                           const std::optional<Matrix>& covariates = std::nullopt);

struct TransportConfig {
  std::string potentials_path;  // load instead of fitting
  SemiDiscreteOptions options;
};

struct SweepConfig {
  CouplingKind coupling = CouplingKind::LatinHypercube;
  std::vector<Index> k_grid;
  Index dispersion_reps = 20000;
  /// Synthetic populations averaged per k (population p > 0 uses stream
  /// (kPopulation, p)); must be 1 with a covariate file.
  Index populations = 1;
};

struct SimulationConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 0;
  PopulationSpec population;
  std::string covariates_path;
  Marginal marginal = Marginal::univariate(Univariate::uniform(0.0, 1.0));
  std::vector<CouplingSpec> designs;
  EstimatorKind estimator = EstimatorKind::HT;
  Index component = 0;
  Index replications = 1000;
  Index table_draws = 4096;
  double alpha = 0.05;
  MatchingOptions matching;
  TransportConfig transport;
  SweepConfig sweep;
  LogitOptions logit;

  void validate() const;
  Json to_json() const;
};

/// Parses and validates a configuration; relative paths resolve against `base_dir`.
SimulationConfig parse_config(const Json& json, const std::string& base_dir = ".");
SimulationConfig load_config(const std::string& path);

Marginal marginal_from_json(const Json& json, const std::string& base_dir = ".");
Json marginal_to_json(const Marginal& marginal);

/// Population for a configuration: covariates from `covariates_path` (or the
/// override) else generated from the population block.
Population build_population(const SimulationConfig& config, const std::optional<Matrix>& covariates = std::nullopt);

/// Quantile map, or the semi-discrete map for a multivariate point cloud
/// (loaded from the configured potentials file, else fitted).
TransportMap build_transport(const SimulationConfig& config);

struct DesignRun {
  Matching matching;
  Matrix uniforms;    // n x m; zero columns for complete randomization
  Matrix treatments;  // n x dim
  std::vector<Index> cell;
};

/// Draws within-group treatments for a fixed matching; group g uses stream.child(g).
DesignRun assign_treatments(const Matching& matching, const CouplingSpec& spec, const TransportMap& map,
                            RandomStream stream);

/// Matches units (stream.child(kMatching)) then assigns (stream.child(kCoupling)).
DesignRun run_design(const Matrix& x, const CouplingSpec& spec, const TransportMap& map, RandomStream stream,
                     const MatchingOptions& options = {});

std::string design_csv(const DesignRun& run);
/// Checks header, row count, group sizes and numeric fields of a design file.
void validate_design_csv(const std::string& text, Index n, Index k);

struct DesignResult {
  CouplingSpec spec;
  bool baseline = false;
  std::string status = "ok";
  std::string error;
  Index replications = 0;
  double theta_n = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double bias_se = 0.0;
  double variance = 0.0;
  double variance_se = 0.0;
  double relative_efficiency = 0.0;
  double relative_efficiency_se = 0.0;
  std::optional<double> predicted_efficiency;
  double coverage = 0.0;
  double coverage_se = 0.0;
  double mean_sigma2 = 0.0;
  double mean_sigma2_se = 0.0;
  double sigma2_ratio = 0.0;
  double delta2 = 0.0;
  double predicted_sigma2_ratio = 0.0;
  double match_quality = 0.0;
  std::vector<EigenRow> eigen_rows;
  std::vector<double> estimates;  // per replication
  std::vector<double> sigma2;     // per replication
};

struct SimulationReport {
  std::uint64_t seed = 0;
  std::vector<DesignResult> designs;
  Json to_json(const SimulationConfig& config) const;
};

/// Replicates assign -> estimate for every design (plus an IID baseline when
/// none is listed) and compares empirical with predicted efficiency.
/// Replication r of design j draws group g from stream path
/// (kSimulation, j, r, g) under the root seed.
SimulationReport simulate(const SimulationConfig& config, const Population& population, const TransportMap& map);

struct SweepRow {
  Index k = 0;
  Index populations = 1;
  double match_quality = 0.0;
  double match_quality_se = 0.0;
  double dispersion = 0.0;
  double dispersion_se = 0.0;
  double efficiency_product = 0.0;
  double efficiency_product_se = 0.0;
  std::optional<double> predicted_efficiency;
};

std::vector<SweepRow> sweep_tradeoff(const SimulationConfig& config, const Population& population,
                                     const TransportMap& map);
std::string sweep_csv(const std::vector<SweepRow>& rows);
void validate_sweep_csv(const std::string& text);

/// Per design: closed-form/MC dispersion of H, match quality and the
/// eigenspace decomposition on the influence table.
Json analyze(const SimulationConfig& config, const Population& population, const TransportMap& map);

/// Structural checks of a report; throws ValidationError naming the field.
void validate_report_json(const Json& report);
void validate_potentials_json(const Json& potentials);

/// Influence table used for predictions: HT s_i = Y_i H_j, or the OLS / logit
/// linearization, laid out for the coupling's eigenspaces.
LinearizedTarget influence_table_for(const SimulationConfig& config, const Population& population,
                                     const CouplingSpec& spec, RandomStream stream);

}  // namespace couplekit
