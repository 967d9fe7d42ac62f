#include "couplekit/inference.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "couplekit/error.hpp"
#include "couplekit/parallel.hpp"
#include "couplekit/stats.hpp"

namespace couplekit {

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::HT:
      return "ht";
    case EstimatorKind::OLS:
      return "ols";
    case EstimatorKind::Logit:
      return "logit";
  }
  return "?";
}

EstimatorKind estimator_kind_from_string(const std::string& name) {
  std::string s;
  for (char c : name) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "ht" || s == "horvitz-thompson") return EstimatorKind::HT;
  if (s == "ols" || s == "ols-blp" || s == "blp") return EstimatorKind::OLS;
  if (s == "logit" || s == "logitmle") return EstimatorKind::Logit;
  throw ValidationError("unknown estimator '" + name + "'");
}

EstimateRecord ht_estimate(const Vector& y, const Matrix& d, const Marginal& marginal) {
  if (y.size() != d.rows() || y.size() == 0) throw ValidationError("ht_estimate: outcomes and treatments differ in length");
  if (d.cols() != marginal.dimension()) throw ValidationError("ht_estimate: treatment dimension differs from the marginal");
  const HtWeight h(marginal);
  EstimateRecord rec;
  rec.kind = EstimatorKind::HT;
  rec.target = "BLP slope of the average dose-response under F";
  rec.theta = Vector::Zero(d.cols());
  for (Index i = 0; i < y.size(); ++i) rec.theta += y(i) * h(d.row(i).transpose());
  rec.theta /= static_cast<double>(y.size());
  return rec;
}

EstimateRecord ols_blp(const Vector& y, const Matrix& d) {
  const Index n = y.size();
  if (n != d.rows() || n == 0) throw ValidationError("ols_blp: outcomes and treatments differ in length");
  Matrix x(n, d.cols() + 1);
  x.col(0).setOnes();
  x.rightCols(d.cols()) = d;
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < x.cols()) throw NumericalError("ols_blp: design matrix is rank deficient");
  const Vector coef = qr.solve(y);
  EstimateRecord rec;
  rec.kind = EstimatorKind::OLS;
  rec.target = "BLP slope of the average dose-response under F";
  rec.theta = coef.tail(d.cols());
  return rec;
}

double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

Vector logit_features(const Vector& d, bool intercept) {
  if (!intercept) return d;
  Vector x(d.size() + 1);
  x(0) = 1.0;
  x.tail(d.size()) = d;
  return x;
}

namespace {

double log_likelihood(const Vector& y, const Matrix& x, const Vector& beta) {
  double ll = 0.0;
  const Vector eta = x * beta;
  for (Index i = 0; i < y.size(); ++i) {
    const double t = eta(i);
    // log L(t) = -log(1 + e^{-t}), log(1 - L(t)) = -log(1 + e^{t})
    const double log1pexp_neg = t > 0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
    ll += y(i) * (-log1pexp_neg) + (1.0 - y(i)) * (-(t + log1pexp_neg));
  }
  return ll / static_cast<double>(y.size());
}

}  // namespace

EstimateRecord logit_mle(const Vector& y, const Matrix& d, const LogitOptions& options) {
  const Index n = y.size();
  if (n != d.rows() || n == 0) throw ValidationError("logit_mle: outcomes and treatments differ in length");
  if ((y.array() < 0.0).any() || (y.array() > 1.0).any()) throw ValidationError("logit_mle: outcomes must lie in [0, 1]");
  if (y.maxCoeff() == y.minCoeff()) throw NumericalError("logit_mle: perfect separation (all outcomes equal)");
  Matrix x(n, d.cols() + (options.intercept ? 1 : 0));
  for (Index i = 0; i < n; ++i) x.row(i) = logit_features(d.row(i).transpose(), options.intercept).transpose();
  Vector beta = Vector::Zero(x.cols());
  double ll = log_likelihood(y, x, beta);
  EstimateRecord rec;
  rec.kind = EstimatorKind::Logit;
  rec.target = "best logistic approximation to the average dose-response under F";
  for (Index iter = 1; iter <= options.max_iter; ++iter) {
    Vector grad = Vector::Zero(x.cols());
    Matrix info = Matrix::Zero(x.cols(), x.cols());
    for (Index i = 0; i < n; ++i) {
      const double p = logistic(x.row(i).dot(beta));
      grad += (y(i) - p) * x.row(i).transpose();
      info += p * (1.0 - p) * x.row(i).transpose() * x.row(i);
    }
    grad /= static_cast<double>(n);
    info /= static_cast<double>(n);
    rec.gradient_norm = grad.cwiseAbs().maxCoeff();
    rec.iterations = iter - 1;
    if (rec.gradient_norm <= options.tol) {
      double worst = 0.0;
      for (Index i = 0; i < n; ++i) worst = std::max(worst, std::abs(y(i) - logistic(x.row(i).dot(beta))));
      if (worst < 1e-6) throw NumericalError("logit_mle: perfect separation (fitted probabilities match every outcome)");
      rec.theta = beta;
      return rec;
    }
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 1e-14).all()) {
      throw NumericalError("logit_mle: singular information matrix (perfect separation or collinear treatments)");
    }
    const Vector step = ldlt.solve(grad);
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h, t *= 0.5) {
      const Vector cand = beta + t * step;
      const double cand_ll = log_likelihood(y, x, cand);
      if (cand_ll >= ll - 1e-15 * std::abs(ll)) {
        beta = cand;
        ll = cand_ll;
        improved = true;
        break;
      }
    }
    if (!improved) break;
    if (beta.cwiseAbs().maxCoeff() > 1e3) throw NumericalError("logit_mle: coefficients diverge (perfect separation)");
  }
  std::ostringstream os;
  os << "logit_mle: no convergence after " << options.max_iter << " iterations, gradient norm " << rec.gradient_norm;
  throw NumericalError(os.str());
}

InfluenceSpec ht_influence(std::shared_ptr<const PotentialOutcomes> outcomes, Index units, const Marginal& marginal,
                           Index component) {
  if (!outcomes) throw ValidationError("ht_influence: no outcome model");
  if (component < 0 || component >= marginal.dimension()) throw ValidationError("ht_influence: component out of range");
  InfluenceSpec spec;
  spec.units = units;
  spec.label = "ht";
  spec.fn = [outcomes, h = HtWeight(marginal), component](Index i, const Vector& d) {
    return outcomes->outcome(i, d) * h(d)(component);
  };
  return spec;
}

double ht_estimand(const PotentialOutcomes& outcomes, Index units, const FunctionTable& table, Index component) {
  const HtWeight h(table.marginal);
  std::vector<double> cols(static_cast<std::size_t>(table.size()));
  parallel_for(cols.size(), [&](std::size_t r) {
    const Vector d = table.draws.row(static_cast<Index>(r)).transpose();
    double acc = 0.0;
    for (Index i = 0; i < units; ++i) acc += outcomes.outcome(i, d);
    cols[r] = acc / static_cast<double>(units) * h(d)(component);
  });
  return stats::mean(cols);
}

namespace {

Matrix outcome_matrix(const PotentialOutcomes& outcomes, Index units, const Matrix& draws) {
  Matrix y(units, draws.rows());
  parallel_for(static_cast<std::size_t>(draws.rows()), [&](std::size_t r) {
    const Vector d = draws.row(static_cast<Index>(r)).transpose();
    for (Index i = 0; i < units; ++i) y(i, static_cast<Index>(r)) = outcomes.outcome(i, d);
  });
  if (!y.allFinite()) throw NumericalError("influence table: outcome model produced non-finite values");
  return y;
}

FunctionTable draws_only(const Marginal& marginal, Index count, RandomStream stream, TableLayout layout, Index orbit) {
  InfluenceSpec zero{1, [](Index, const Vector&) { return 0.0; }, "zero"};
  return build_function_table(marginal, zero, count, stream, layout, orbit);
}

}  // namespace

LinearizedTarget blp_influence_table(const PotentialOutcomes& outcomes, Index units, const Marginal& marginal, Index count,
                                     RandomStream stream, Index component, TableLayout layout, Index orbit) {
  if (component < 0 || component >= marginal.dimension()) throw ValidationError("blp_influence_table: component out of range");
  FunctionTable base = draws_only(marginal, count, stream, layout, orbit);
  const Matrix y = outcome_matrix(outcomes, units, base.draws);
  const HtWeight h(marginal);
  const Index R = base.size();
  const Vector ybar = y.colwise().mean().transpose();
  const double ybar_mean = ybar.mean();
  Vector cross = Vector::Zero(marginal.dimension());
  Matrix hd(R, marginal.dimension());
  for (Index r = 0; r < R; ++r) {
    hd.row(r) = h(base.draws.row(r).transpose()).transpose();
    cross += (ybar(r) - ybar_mean) * hd.row(r).transpose();
  }
  LinearizedTarget out;
  out.theta = cross / static_cast<double>(R);
  out.jacobian = marginal.moments().covariance;
  Matrix s(units, R);
  for (Index r = 0; r < R; ++r) {
    const Vector centered = base.draws.row(r).transpose() - h.mean();
    const double fit = ybar_mean + out.theta.dot(centered);
    for (Index i = 0; i < units; ++i) s(i, r) = (y(i, r) - fit) * hd(r, component);
  }
  out.table = base.with_values(std::move(s));
  out.table.validate();
  return out;
}

LinearizedTarget logit_influence_table(const PotentialOutcomes& outcomes, Index units, const Marginal& marginal,
                                       Index count, RandomStream stream, Index component, const LogitOptions& options,
                                       TableLayout layout, Index orbit) {
  FunctionTable base = draws_only(marginal, count, stream, layout, orbit);
  const Matrix y = outcome_matrix(outcomes, units, base.draws);
  const Index R = base.size();
  const Vector ybar = y.colwise().mean().transpose();
  LinearizedTarget out;
  out.theta = logit_mle(ybar, base.draws, options).theta;
  const Index p = out.theta.size();
  if (component < 0 || component >= p) throw ValidationError("logit_influence_table: component out of range");
  Matrix xs(R, p);
  Vector prob(R);
  out.jacobian = Matrix::Zero(p, p);
  for (Index r = 0; r < R; ++r) {
    xs.row(r) = logit_features(base.draws.row(r).transpose(), options.intercept).transpose();
    prob(r) = logistic(xs.row(r).dot(out.theta));
    out.jacobian += prob(r) * (1.0 - prob(r)) * xs.row(r).transpose() * xs.row(r);
  }
  out.jacobian /= static_cast<double>(R);
  const Matrix jinv = symmetric_inverse(out.jacobian, "logit_influence_table");
  Matrix s(units, R);
  for (Index r = 0; r < R; ++r) {
    const double direction = jinv.row(component).dot(xs.row(r));
    for (Index i = 0; i < units; ++i) s(i, r) = (y(i, r) - prob(r)) * direction;
  }
  out.table = base.with_values(std::move(s));
  out.table.validate();
  return out;
}

VarianceEstimate collapsed_strata_variance(const Vector& group_estimates, Index k, Index n,
                                           const std::vector<Index>& pairing) {
  const Index groups = group_estimates.size();
  if (groups < 2) throw ValidationError("collapsed_strata_variance: need at least two groups");
  if (static_cast<Index>(pairing.size()) != groups) throw ValidationError("collapsed_strata_variance: pairing has the wrong length");
  std::vector<char> hit(static_cast<std::size_t>(groups), 0);
  for (Index g = 0; g < groups; ++g) {
    const Index p = pairing[static_cast<std::size_t>(g)];
    if (p < 0 || p >= groups) throw ValidationError("collapsed_strata_variance: pairing index out of range");
    if (p == g) throw ValidationError("collapsed_strata_variance: pairing has a fixed point");
    if (hit[static_cast<std::size_t>(p)]) throw ValidationError("collapsed_strata_variance: pairing is not a permutation");
    hit[static_cast<std::size_t>(p)] = 1;
  }
  if (k < 1 || n < 1) throw ValidationError("collapsed_strata_variance: k and n must be positive");
  double ss = 0.0;
  for (Index g = 0; g < groups; ++g) {
    const double diff = group_estimates(g) - group_estimates(pairing[static_cast<std::size_t>(g)]);
    ss += diff * diff;
  }
  const auto kd = static_cast<double>(k);
  const auto nd = static_cast<double>(n);
  VarianceEstimate v;
  v.sigma2 = kd * kd / (2.0 * nd * nd) * ss;
  v.pairing = pairing;
  v.group_means = group_estimates;
  return v;
}

std::vector<Index> cyclic_pairing(Index groups) {
  if (groups < 2) throw ValidationError("pairing: need at least two groups");
  std::vector<Index> p(static_cast<std::size_t>(groups));
  for (Index g = 0; g < groups; ++g) p[static_cast<std::size_t>(g)] = (g + 1) % groups;
  return p;
}

std::vector<Index> pair_groups(const Matrix& x, const Matching& matching) {
  if (matching.units() != x.rows()) throw ValidationError("pair_groups: matching and covariates disagree on n");
  const Index groups = matching.groups();
  if (groups < 2) throw ValidationError("pair_groups: need at least two groups");
  const Matrix z = standardize_columns(x);
  Matrix centroids = Matrix::Zero(groups, x.cols());
  for (Index i = 0; i < x.rows(); ++i) centroids.row(matching.group[static_cast<std::size_t>(i)]) += z.row(i);
  centroids /= static_cast<double>(matching.k);
  const Vector score = groups > 1 ? Vector(centroids * principal_direction(centroids)) : Vector::Zero(groups);
  std::vector<Index> order(static_cast<std::size_t>(groups));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return score(a) < score(b); });
  std::vector<Index> p(static_cast<std::size_t>(groups));
  if (groups % 2 == 0) {
    for (Index j = 0; j < groups; j += 2) {
      p[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = order[static_cast<std::size_t>(j + 1)];
      p[static_cast<std::size_t>(order[static_cast<std::size_t>(j + 1)])] = order[static_cast<std::size_t>(j)];
    }
  } else {
    for (Index j = 0; j < groups; ++j)
      p[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = order[static_cast<std::size_t>((j + 1) % groups)];
  }
  return p;
}

ConfidenceInterval confidence_interval(double theta, double sigma2, double alpha) {
  if (!(sigma2 >= 0.0)) throw ValidationError("confidence_interval: variance must be nonnegative");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("confidence_interval: alpha must lie in (0, 1)");
  const double half = stats::normal_quantile(1.0 - alpha / 2.0) * std::sqrt(sigma2);
  return {alpha, theta - half, theta + half};
}

}  // namespace couplekit
