#include "couplekit/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "couplekit/error.hpp"
#include "couplekit/parallel.hpp"
#include "couplekit/stats.hpp"

namespace couplekit {

namespace {

constexpr double kWeightTol = 1e-12;
constexpr double kTiny = 0x1p-54;

double clamp_open(double u) { return std::clamp(u, kTiny, 1.0 - kTiny); }

void check_weights(const std::vector<double>& w, const char* who) {
  if (w.empty()) throw ValidationError(std::string(who) + ": empty support");
  double total = 0.0;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError(std::string(who) + ": weights must be finite and nonnegative");
    total += x;
  }
  if (std::abs(total - 1.0) > kWeightTol) {
    std::ostringstream os;
    os << who << ": weights sum to " << total << ", expected 1";
    throw ValidationError(os.str());
  }
}

}  // namespace

Univariate Univariate::uniform(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b) || !(a <= b)) throw ValidationError("uniform(a, b) requires finite a <= b");
  Univariate f;
  f.family_ = Family::Uniform;
  f.p1_ = a;
  f.p2_ = b;
  return f;
}

Univariate Univariate::exponential(double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw ValidationError("exponential(rate) requires rate > 0");
  Univariate f;
  f.family_ = Family::Exponential;
  f.p1_ = rate;
  f.p2_ = 0.0;
  return f;
}

Univariate Univariate::normal(double mu, double sigma) {
  if (!std::isfinite(mu) || !(sigma > 0.0) || !std::isfinite(sigma))
    throw ValidationError("normal(mu, sigma) requires finite mu and sigma > 0");
  Univariate f;
  f.family_ = Family::Normal;
  f.p1_ = mu;
  f.p2_ = sigma;
  return f;
}

Univariate Univariate::discrete(std::vector<double> support, std::vector<double> weights) {
  if (support.size() != weights.size()) throw ValidationError("discrete factor: support and weights differ in length");
  check_weights(weights, "discrete factor");
  std::vector<std::size_t> order(support.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return support[i] < support[j]; });
  Univariate f;
  f.family_ = Family::Discrete;
  double cum = 0.0;
  for (std::size_t idx : order) {
    if (!std::isfinite(support[idx])) throw ValidationError("discrete factor: non-finite support point");
    if (!f.support_.empty() && f.support_.back() == support[idx])
      throw ValidationError("discrete factor: duplicate support point");
    f.support_.push_back(support[idx]);
    f.weights_.push_back(weights[idx]);
    cum += weights[idx];
    f.cumulative_.push_back(cum);
  }
  f.cumulative_.back() = 1.0;
  return f;
}

double Univariate::quantile(double u) const {
  if (!(u >= 0.0 && u <= 1.0)) throw ValidationError("quantile: u outside [0, 1]");
  switch (family_) {
    case Family::Uniform:
      return p1_ + u * (p2_ - p1_);
    case Family::Exponential:
      return -std::log1p(-clamp_open(u)) / p1_;
    case Family::Normal:
      return p1_ + p2_ * stats::normal_quantile(clamp_open(u));
    case Family::Discrete: {
      // First support point whose cumulative weight reaches u; the slack absorbs
      // rounding in the running sums (e.g. 1/3 + 1/3 vs 2/3).
      auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u - kWeightTol);
      if (it == cumulative_.end()) --it;
      return support_[static_cast<std::size_t>(it - cumulative_.begin())];
    }
  }
  return 0.0;
}

double Univariate::cdf(double x) const {
  switch (family_) {
    case Family::Uniform:
      if (p2_ == p1_) return x >= p1_ ? 1.0 : 0.0;
      return std::clamp((x - p1_) / (p2_ - p1_), 0.0, 1.0);
    case Family::Exponential:
      return x <= 0.0 ? 0.0 : -std::expm1(-p1_ * x);
    case Family::Normal:
      return stats::normal_cdf((x - p1_) / p2_);
    case Family::Discrete: {
      auto it = std::upper_bound(support_.begin(), support_.end(), x);
      if (it == support_.begin()) return 0.0;
      return cumulative_[static_cast<std::size_t>(it - support_.begin()) - 1];
    }
  }
  return 0.0;
}

double Univariate::mean() const {
  switch (family_) {
    case Family::Uniform:
      return 0.5 * (p1_ + p2_);
    case Family::Exponential:
      return 1.0 / p1_;
    case Family::Normal:
      return p1_;
    case Family::Discrete: {
      double m = 0.0;
      for (std::size_t j = 0; j < support_.size(); ++j) m += weights_[j] * support_[j];
      return m;
    }
  }
  return 0.0;
}

double Univariate::variance() const {
  switch (family_) {
    case Family::Uniform:
      return (p2_ - p1_) * (p2_ - p1_) / 12.0;
    case Family::Exponential:
      return 1.0 / (p1_ * p1_);
    case Family::Normal:
      return p2_ * p2_;
    case Family::Discrete: {
      const double m = mean();
      double v = 0.0;
      for (std::size_t j = 0; j < support_.size(); ++j) v += weights_[j] * (support_[j] - m) * (support_[j] - m);
      return v;
    }
  }
  return 0.0;
}

std::string Univariate::describe() const {
  std::ostringstream os;
  switch (family_) {
    case Family::Uniform:
      os << "uniform(" << p1_ << ", " << p2_ << ")";
      break;
    case Family::Exponential:
      os << "exponential(" << p1_ << ")";
      break;
    case Family::Normal:
      os << "normal(" << p1_ << ", " << p2_ << ")";
      break;
    case Family::Discrete:
      os << "discrete(" << support_.size() << " points)";
      break;
  }
  return os.str();
}

Marginal Marginal::discrete(Matrix points, Vector weights) {
  if (points.rows() < 1 || points.cols() < 1) throw ValidationError("discrete marginal: need at least one point");
  if (weights.size() != points.rows()) throw ValidationError("discrete marginal: weights length differs from point count");
  if (!points.allFinite()) throw ValidationError("discrete marginal: non-finite point coordinates");
  check_weights(std::vector<double>(weights.data(), weights.data() + weights.size()), "discrete marginal");
  std::vector<Index> order(static_cast<std::size_t>(points.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  auto row_less = [&](Index a, Index b) {
    for (Index c = 0; c < points.cols(); ++c) {
      if (points(a, c) != points(b, c)) return points(a, c) < points(b, c);
    }
    return false;
  };
  std::stable_sort(order.begin(), order.end(), row_less);
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (!row_less(order[i - 1], order[i])) {
      std::ostringstream os;
      os << "discrete marginal: duplicate points at rows " << std::min(order[i - 1], order[i]) << " and "
         << std::max(order[i - 1], order[i]);
      throw ValidationError(os.str());
    }
  }
  Marginal f;
  f.kind_ = MarginalKind::DiscretePoints;
  f.dim_ = points.cols();
  f.points_ = std::move(points);
  f.weights_ = std::move(weights);
  if (f.dim_ == 1) f.order_ = std::move(order);
  return f;
}

Marginal Marginal::discrete_uniform(Matrix points) {
  const Index size = points.rows();
  if (size < 1) throw ValidationError("discrete marginal: need at least one point");
  return discrete(std::move(points), Vector::Constant(size, 1.0 / static_cast<double>(size)));
}

Marginal Marginal::univariate(Univariate factor) {
  Marginal f;
  f.kind_ = MarginalKind::UnivariateNamed;
  f.dim_ = 1;
  f.factors_.push_back(std::move(factor));
  return f;
}

Marginal Marginal::product(std::vector<Univariate> factors) {
  if (factors.empty()) throw ValidationError("product marginal: no factors");
  Marginal f;
  f.kind_ = MarginalKind::ProductOfUnivariates;
  f.dim_ = static_cast<Index>(factors.size());
  f.factors_ = std::move(factors);
  return f;
}

bool Marginal::has_quantile() const noexcept { return kind_ != MarginalKind::DiscretePoints || dim_ == 1; }

Index Marginal::quantile_index(double u) const {
  if (kind_ != MarginalKind::DiscretePoints || dim_ != 1) return -1;
  if (!(u >= 0.0 && u <= 1.0)) throw ValidationError("quantile: u outside [0, 1]");
  double cum = 0.0;
  for (Index idx : order_) {
    cum += weights_(idx);
    if (cum >= u - kWeightTol) return idx;
  }
  return order_.back();
}

Vector Marginal::quantile(const Vector& u) const {
  if (u.size() != dim_) throw ValidationError("quantile: dimension mismatch");
  if (!has_quantile())
    throw ValidationError("quantile: multivariate point clouds requires transport map (use a semi-discrete map)");
  Vector d(dim_);
  if (kind_ == MarginalKind::DiscretePoints) {
    d(0) = points_(quantile_index(u(0)), 0);
    return d;
  }
  for (Index j = 0; j < dim_; ++j) d(j) = factors_[static_cast<std::size_t>(j)].quantile(u(j));
  return d;
}

Moments Marginal::moments() const {
  Moments mo;
  if (kind_ == MarginalKind::DiscretePoints) {
    mo.mean = points_.transpose() * weights_;
    const Matrix centered = points_.rowwise() - mo.mean.transpose();
    mo.covariance = centered.transpose() * weights_.asDiagonal() * centered;
    mo.covariance = 0.5 * (mo.covariance + mo.covariance.transpose());
    return mo;
  }
  mo.mean.resize(dim_);
  mo.covariance = Matrix::Zero(dim_, dim_);
  for (Index j = 0; j < dim_; ++j) {
    mo.mean(j) = factors_[static_cast<std::size_t>(j)].mean();
    mo.covariance(j, j) = factors_[static_cast<std::size_t>(j)].variance();
  }
  return mo;
}

Vector Marginal::sample(RandomStream& stream) const {
  if (has_quantile()) {
    Vector u(dim_);
    for (Index j = 0; j < dim_; ++j) u(j) = stream.uniform_open();
    return quantile(u);
  }
  const double u = stream.uniform();
  double cum = 0.0;
  for (Index i = 0; i < points_.rows(); ++i) {
    cum += weights_(i);
    if (u < cum) return points_.row(i).transpose();
  }
  return points_.row(points_.rows() - 1).transpose();
}

std::string Marginal::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case MarginalKind::DiscretePoints:
      os << "discrete(" << points_.rows() << " points in R^" << dim_ << ")";
      break;
    case MarginalKind::UnivariateNamed:
      os << factors_.front().describe();
      break;
    case MarginalKind::ProductOfUnivariates:
      for (std::size_t j = 0; j < factors_.size(); ++j) os << (j ? " x " : "") << factors_[j].describe();
      break;
  }
  return os.str();
}

Matrix symmetric_inverse(const Matrix& a, const std::string& what) {
  if (a.rows() != a.cols() || a.rows() == 0) throw ValidationError(what + ": matrix must be square and non-empty");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (a + a.transpose()));
  if (eig.info() != Eigen::Success) throw NumericalError(what + ": eigendecomposition failed");
  const Vector& lambda = eig.eigenvalues();
  const double top = lambda.cwiseAbs().maxCoeff();
  if (!(top > 0.0) || lambda.minCoeff() < 1e-12 * top) throw NumericalError(what + ": degenerate marginal (singular covariance)");
  return eig.eigenvectors() * lambda.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

HtWeight::HtWeight(const Marginal& marginal) {
  Moments mo = marginal.moments();
  precision_ = symmetric_inverse(mo.covariance, "ht_weight");
  mean_ = std::move(mo.mean);
}

Vector HtWeight::operator()(const Vector& d) const {
  if (d.size() != mean_.size()) throw ValidationError("ht_weight: dimension mismatch");
  return precision_ * (d - mean_);
}

Vector ht_weight(const Marginal& marginal, const Vector& d) { return HtWeight(marginal)(d); }

void Population::validate() const {
  if (covariates.rows() < 2) throw ValidationError("population: need n >= 2 units");
  if (covariates.cols() < 1) throw ValidationError("population: need at least one covariate");
  if (!covariates.allFinite()) throw ValidationError("population: non-finite covariate values");
}

InfluenceSpec parametric_influence(Vector c, Vector a, std::function<double(const Vector&)> phi, std::string label) {
  if (c.size() != a.size()) throw ValidationError("parametric influence: c and a differ in length");
  InfluenceSpec spec;
  spec.units = c.size();
  spec.label = std::move(label);
  spec.fn = [c = std::move(c), a = std::move(a), phi = std::move(phi)](Index i, const Vector& d) {
    return c(i) + a(i) * phi(d);
  };
  return spec;
}

FunctionTable FunctionTable::with_values(Matrix new_values) const {
  if (new_values.cols() != size()) throw ValidationError("function table: new values have the wrong number of draws");
  FunctionTable t = *this;
  t.values = std::move(new_values);
  return t;
}

void FunctionTable::validate() const {
  if (size() < 2) throw ValidationError("function table: need R >= 2 draws");
  if (draws.rows() != size()) throw ValidationError("function table: draws and values disagree on R");
  if (uniforms.size() != 0 && uniforms.rows() != size()) throw ValidationError("function table: uniforms and values disagree on R");
  for (Index r = 0; r < values.cols(); ++r) {
    for (Index i = 0; i < values.rows(); ++i) {
      if (!std::isfinite(values(i, r))) {
        std::ostringstream os;
        os << "function table: non-finite influence value for unit " << i << " at draw " << r;
        throw NumericalError(os.str());
      }
    }
  }
}

Matrix table_uniforms(Index count, Index m, TableLayout layout, Index orbit, RandomStream stream) {
  if (count < 2) throw ValidationError("function table: need R >= 2 draws");
  Matrix u(count, m);
  switch (layout) {
    case TableLayout::Independent:
      for (Index r = 0; r < count; ++r)
        for (Index j = 0; j < m; ++j) u(r, j) = stream.uniform_open();
      break;
    case TableLayout::ShiftOrbit: {
      if (orbit < 2 || count % orbit != 0) throw ValidationError("function table: shift-orbit layout needs R divisible by k >= 2");
      for (Index b = 0; b < count / orbit; ++b) {
        Vector base(m);
        for (Index j = 0; j < m; ++j) base(j) = stream.uniform_open();
        for (Index l = 0; l < orbit; ++l) {
          for (Index j = 0; j < m; ++j) {
            double x = base(j) + static_cast<double>(l) / static_cast<double>(orbit);
            x -= std::floor(x);
            u(b * orbit + l, j) = x;
          }
        }
      }
      break;
    }
    case TableLayout::ReflectionOrbit:
      if (count % 2 != 0) throw ValidationError("function table: reflection layout needs an even R");
      for (Index b = 0; b < count / 2; ++b) {
        for (Index j = 0; j < m; ++j) {
          const double x = stream.uniform_open();
          u(2 * b, j) = x;
          u(2 * b + 1, j) = 1.0 - x;
        }
      }
      break;
  }
  return u;
}

FunctionTable build_function_table(const Marginal& marginal, const InfluenceSpec& influence, Index count,
                                   RandomStream stream, TableLayout layout, Index orbit) {
  if (count < 2) throw ValidationError("function table: need R >= 2 draws");
  if (!influence.fn || influence.units < 1) throw ValidationError("function table: influence spec is empty");
  FunctionTable t{.marginal = marginal};
  t.seed = stream.seed();
  t.path = stream.path();
  t.layout = layout;
  t.orbit = layout == TableLayout::ShiftOrbit ? orbit : (layout == TableLayout::ReflectionOrbit ? 2 : 1);
  const Index m = marginal.dimension();
  if (marginal.has_quantile()) {
    t.uniforms = table_uniforms(count, m, layout, orbit, stream);
    t.draws.resize(count, m);
    for (Index r = 0; r < count; ++r) t.draws.row(r) = marginal.quantile(t.uniforms.row(r).transpose()).transpose();
  } else {
    if (layout != TableLayout::Independent)
      throw ValidationError("function table: orbit layouts need a marginal with a quantile map");
    t.draws.resize(count, m);
    for (Index r = 0; r < count; ++r) t.draws.row(r) = marginal.sample(stream).transpose();
  }
  return evaluate_on_table(t, influence);
}

FunctionTable evaluate_on_table(const FunctionTable& table, const InfluenceSpec& influence) {
  if (!influence.fn || influence.units < 1) throw ValidationError("function table: influence spec is empty");
  const Index count = table.draws.rows();
  Matrix values(influence.units, count);
  parallel_for(static_cast<std::size_t>(count), [&](std::size_t r) {
    const Vector d = table.draws.row(static_cast<Index>(r)).transpose();
    for (Index i = 0; i < influence.units; ++i) values(i, static_cast<Index>(r)) = influence.fn(i, d);
  });
  FunctionTable t = table;
  t.values = std::move(values);
  t.validate();
  return t;
}

}  // namespace couplekit
