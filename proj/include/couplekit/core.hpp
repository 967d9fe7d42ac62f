#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "couplekit/random.hpp"

namespace couplekit {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Family { Uniform, Exponential, Normal, Discrete };

/// One-dimensional factor of a marginal.
///
/// Named families: uniform(a, b), exponential(rate), normal(mu, sigma).
/// A finite support (Discrete) is also accepted as a factor so that mixed
/// factorial treatments such as Exp(1) x unif{1..t} can be written as products.
class Univariate {
 public:
  static Univariate uniform(double a, double b);
  static Univariate exponential(double rate);
  static Univariate normal(double mu, double sigma);
  static Univariate discrete(std::vector<double> support, std::vector<double> weights);

  Family family() const noexcept { return family_; }
  double param1() const noexcept { return p1_; }
  double param2() const noexcept { return p2_; }
  const std::vector<double>& support() const noexcept { return support_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  /// Generalized inverse CDF inf{x : F(x) >= u}.
  double quantile(double u) const;
  double cdf(double x) const;
  double mean() const;
  double variance() const;
  std::string describe() const;

 private:
  Family family_ = Family::Uniform;
  double p1_ = 0.0;
  double p2_ = 1.0;
  std::vector<double> support_;  // sorted ascending
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

enum class MarginalKind { DiscretePoints, UnivariateNamed, ProductOfUnivariates };

struct Moments {
  Vector mean;
  Matrix covariance;
};

/// Treatment distribution F.
class Marginal {
 public:
  /// Weighted point cloud; rows of `points` are treatments.
  static Marginal discrete(Matrix points, Vector weights);
  /// Equal weights on the rows of `points`.
  static Marginal discrete_uniform(Matrix points);
  static Marginal univariate(Univariate factor);
  static Marginal product(std::vector<Univariate> factors);

  MarginalKind kind() const noexcept { return kind_; }
  Index dimension() const noexcept { return dim_; }
  const Matrix& points() const noexcept { return points_; }
  const Vector& weights() const noexcept { return weights_; }
  const std::vector<Univariate>& factors() const noexcept { return factors_; }

  /// True when F can be reached from [0,1]^m by a componentwise quantile map.
  bool has_quantile() const noexcept;
  Vector quantile(const Vector& u) const;
  /// Index of the support point selected by the quantile map (discrete m = 1),
  /// otherwise -1.
  Index quantile_index(double u) const;
  Moments moments() const;
  /// One draw from F; uses the quantile map when available and categorical
  /// sampling over rows otherwise.
  Vector sample(RandomStream& stream) const;
  std::string describe() const;

 private:
  MarginalKind kind_ = MarginalKind::UnivariateNamed;
  Index dim_ = 1;
  Matrix points_;
  Vector weights_;
  std::vector<Univariate> factors_;
  std::vector<Index> order_;  // discrete m = 1: point indices in ascending order
};

/// Horvitz-Thompson weight H(d) = var_F(D)^{-1} (d - E_F D).
class HtWeight {
 public:
  explicit HtWeight(const Marginal& marginal);
  Vector operator()(const Vector& d) const;
  const Vector& mean() const noexcept { return mean_; }
  const Matrix& precision() const noexcept { return precision_; }

 private:
  Vector mean_;
  Matrix precision_;
};

Vector ht_weight(const Marginal& marginal, const Vector& d);

/// Symmetric inverse through an eigendecomposition; throws NumericalError when
/// the smallest eigenvalue falls below 1e-12 times the largest.
Matrix symmetric_inverse(const Matrix& a, const std::string& what);

/// Potential outcomes Y_i(d), used by the simulation harness.
class PotentialOutcomes {
 public:
  virtual ~PotentialOutcomes() = default;
  virtual double outcome(Index unit, const Vector& d) const = 0;
  virtual std::string describe() const = 0;
};

struct Population {
  Matrix covariates;  // n x p
  std::shared_ptr<const PotentialOutcomes> outcomes;

  Index size() const noexcept { return covariates.rows(); }
  void validate() const;
};

/// Influence function s_i(d) for a fixed set of units.
struct InfluenceSpec {
  Index units = 0;
  std::function<double(Index unit, const Vector& d)> fn;
  std::string label;
};

/// s_i(d) = c_i + a_i phi(d).
InfluenceSpec parametric_influence(Vector c, Vector a, std::function<double(const Vector&)> phi,
                                   std::string label = "parametric");

enum class TableLayout {
  Independent,
  /// Rows come in orbits {frac(b + l/k) : l = 0..k-1} of the canonical uniform.
  ShiftOrbit,
  /// Rows come in pairs {b, 1 - b} of the canonical uniform.
  ReflectionOrbit,
};

/// Empirical representation of (s_i) on R common draws from F.
struct FunctionTable {
  Matrix draws;     // R x m, D^(r) ~ F
  Matrix uniforms;  // R x m canonical uniforms with D = quantile(U); empty if unavailable
  Matrix values;    // n x R
  Marginal marginal;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> path;
  TableLayout layout = TableLayout::Independent;
  Index orbit = 1;

  Index units() const noexcept { return values.rows(); }
  Index size() const noexcept { return values.cols(); }
  /// Same draws, new values (n' x R).
  FunctionTable with_values(Matrix new_values) const;
  void validate() const;
};

/// R x m uniforms in (0,1) laid out according to `layout`.
Matrix table_uniforms(Index count, Index m, TableLayout layout, Index orbit, RandomStream stream);

FunctionTable build_function_table(const Marginal& marginal, const InfluenceSpec& influence, Index count,
                                   RandomStream stream, TableLayout layout = TableLayout::Independent,
                                   Index orbit = 1);

/// Evaluates an influence spec on the draws of an existing table.
FunctionTable evaluate_on_table(const FunctionTable& table, const InfluenceSpec& influence);

}  // namespace couplekit
