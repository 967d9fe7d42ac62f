#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "couplekit/error.hpp"
#include "couplekit/inference.hpp"
#include "couplekit/stats.hpp"
#include "helpers.hpp"

using namespace couplekit;

namespace {

class LinearOutcomes final : public PotentialOutcomes {
 public:
  LinearOutcomes(Vector a, Vector b) : a_(std::move(a)), b_(std::move(b)) {}
  double outcome(Index i, const Vector& d) const override { return a_(i) + b_(i) * d(0) + 0.5 * d(0) * d(0); }
  std::string describe() const override { return "linear plus square"; }

 private:
  Vector a_, b_;
};

class ChoiceOutcomes final : public PotentialOutcomes {
 public:
  explicit ChoiceOutcomes(Vector v) : v_(std::move(v)) {}
  double outcome(Index i, const Vector& d) const override { return v_(i) < logistic(0.5 + 1.5 * d(0)) ? 1.0 : 0.0; }
  std::string describe() const override { return "choice"; }

 private:
  Vector v_;
};

}  // namespace

TEST_CASE("ht estimator") {
  Matrix arms(2, 1);
  arms << 0, 1;
  const Marginal bern = Marginal::discrete(arms, Vector::Constant(2, 0.5));
  RandomStream s(1);
  Vector y(10);
  Matrix d(10, 1);
  for (Index i = 0; i < 10; ++i) {
    y(i) = s.normal();
    d(i, 0) = static_cast<double>(i % 2);
  }
  double dim = 0.0;
  for (Index i = 0; i < 10; ++i) dim += y(i) * (2 * d(i, 0) - 1);
  CHECK(ht_estimate(y, d, bern).theta(0) == doctest::Approx(2.0 * dim / 10));

  // Y_i(d) = d under unif[0, 1] recovers slope 1.
  const Marginal u = Marginal::univariate(Univariate::uniform(0.0, 1.0));
  const Index n = 200000;
  Matrix dd(n, 1);
  for (Index i = 0; i < n; ++i) dd(i, 0) = s.uniform();
  const Vector yy = dd.col(0);
  CHECK(ht_estimate(yy, dd, u).theta(0) == doctest::Approx(1.0).epsilon(0.02));

  const auto c = ht_estimate(Vector::Constant(n, 3.0), dd, u);
  CHECK(std::abs(c.theta(0)) < 3 * 3.0 * std::sqrt(12.0 / n));
  // Linear in outcomes.
  CHECK(ht_estimate(2.5 * yy, dd, u).theta(0) == doctest::Approx(2.5 * ht_estimate(yy, dd, u).theta(0)));
}

TEST_CASE("ols blp") {
  RandomStream s(2);
  Matrix d(50, 1);
  for (Index i = 0; i < 50; ++i) d(i, 0) = s.uniform();
  const Vector y = (2.0 - 3.0 * d.col(0).array()).matrix();
  CHECK(ols_blp(y, d).theta(0) == doctest::Approx(-3.0));
  CHECK(ols_blp((y.array() + 11.0).matrix(), d).theta(0) == doctest::Approx(-3.0));

  Matrix b(40, 1);
  Vector yb(40);
  double m1 = 0.0, m0 = 0.0;
  for (Index i = 0; i < 40; ++i) {
    b(i, 0) = static_cast<double>(i % 2);
    yb(i) = s.normal() + b(i, 0);
    (i % 2 ? m1 : m0) += yb(i) / 20.0;
  }
  CHECK(ols_blp(yb, b).theta(0) == doctest::Approx(m1 - m0));
  CHECK_THROWS_AS(ols_blp(yb, Matrix::Ones(40, 1)), NumericalError);
}

TEST_CASE("logit mle") {
  RandomStream s(3);
  const Index n = 5000;
  Matrix d(n, 1);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    d(i, 0) = s.normal();
    y(i) = s.uniform() < logistic(1.0 - 0.5 * d(i, 0)) ? 1.0 : 0.0;
  }
  const auto fit = logit_mle(y, d);
  // Standard errors from the observed information.
  Matrix info = Matrix::Zero(2, 2);
  for (Index i = 0; i < n; ++i) {
    const Vector x = logit_features(d.row(i).transpose(), true);
    const double p = logistic(x.dot(fit.theta));
    info += p * (1 - p) * x * x.transpose();
  }
  const Vector se = info.inverse().diagonal().cwiseSqrt();
  CHECK(std::abs(fit.theta(0) - 1.0) < 4 * se(0));
  CHECK(std::abs(fit.theta(1) + 0.5) < 4 * se(1));
  CHECK(fit.gradient_norm <= 1e-10);

  Vector intercept_only(100);
  for (Index i = 0; i < 100; ++i) intercept_only(i) = i < 30 ? 1.0 : 0.0;
  LogitOptions o;
  const Matrix none(100, 0);
  CHECK(logit_mle(intercept_only, none, o).theta(0) == doctest::Approx(std::log(0.3 / 0.7)).epsilon(1e-9));

  CHECK_THROWS_WITH_AS(logit_mle(Vector::Zero(100), d.topRows(100)), doctest::Contains("separation"), NumericalError);
  Matrix sep(4, 1);
  sep << -2, -1, 1, 2;
  Vector ysep(4);
  ysep << 0, 0, 1, 1;
  CHECK_THROWS_AS(logit_mle(ysep, sep), NumericalError);
  o.max_iter = 1;
  CHECK_THROWS_WITH_AS(logit_mle(y, d, o), doctest::Contains("gradient"), NumericalError);
}

TEST_CASE("influence tables") {
  const Index n = 20;
  RandomStream s(4);
  Vector a(n), b(n);
  for (Index i = 0; i < n; ++i) {
    a(i) = s.normal();
    b(i) = 1.0 + s.normal();
  }
  const auto outcomes = std::make_shared<LinearOutcomes>(a, b);
  const Marginal u = Marginal::univariate(Univariate::uniform(0.0, 1.0));

  SUBCASE("ols residual influence is centered on average") {
    const LinearizedTarget t = blp_influence_table(*outcomes, n, u, 20000, RandomStream(5));
    // BLP slope of mean(a) + mean(b) d + d^2 / 2 under unif[0, 1] is mean(b) + 1/2.
    CHECK(t.theta(0) == doctest::Approx(b.mean() + 0.5).epsilon(0.02));
    CHECK(t.jacobian(0, 0) == doctest::Approx(1.0 / 12));
    // Over units and draws the residual influence averages to theta (1 - E_R[(D - 1/2)^2] * 12).
    const Vector dc = t.table.draws.col(0).array() - 0.5;
    const double second = 12.0 * dc.squaredNorm() / static_cast<double>(dc.size());
    CHECK(std::abs(t.table.values.mean() - t.theta(0) * (1.0 - second)) < 1e-9);
    CHECK(std::abs(t.table.values.mean()) < 0.05);
    // Per unit E_F s_i = theta_i - theta with theta_i = b_i + 1/2.
    const Vector per_unit = t.table.values.rowwise().mean();
    for (Index i = 0; i < n; ++i) CHECK(std::abs(per_unit(i) - (b(i) + 0.5 - t.theta(0))) < 0.05);
  }

  SUBCASE("homogeneous slopes give the same per-unit mean") {
    const LinearOutcomes same(a, Vector::Constant(n, 2.0));
    const LinearizedTarget t = blp_influence_table(same, n, u, 20000, RandomStream(5));
    const double overall = t.table.values.mean();
    for (Index i = 0; i < n; ++i) {
      const Vector r = t.table.values.row(i).transpose();
      const double m = r.mean();
      const double se = std::sqrt((r.array() - m).square().sum() / (r.size() - 1.0) / r.size());
      CHECK(std::abs(m - overall) < 4 * se);
    }
  }

  SUBCASE("ht influence and estimand") {
    const InfluenceSpec spec = ht_influence(outcomes, n, u);
    const FunctionTable t = build_function_table(u, spec, 20000, RandomStream(6));
    const double theta = ht_estimand(*outcomes, n, t);
    CHECK(theta == doctest::Approx(t.values.mean()).epsilon(1e-9));
    CHECK(theta == doctest::Approx(b.mean() + 0.5).epsilon(0.05));
    CHECK_THROWS_AS(ht_influence(outcomes, n, u, 1), ValidationError);
  }

  SUBCASE("logit influence") {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = s.uniform();
    const ChoiceOutcomes choice(v);
    const LinearizedTarget t = logit_influence_table(choice, n, u, 8000, RandomStream(7), 1);
    CHECK(t.theta.size() == 2);
    CHECK(t.jacobian.rows() == 2);
    // Score orthogonality: E_F[(Ybar - L) x] = 0 on the table draws, so unit influences average to 0.
    CHECK(std::abs(t.table.values.mean()) < 1e-8);
  }
}

TEST_CASE("collapsed strata variance") {
  Vector g(2);
  g << 1, 3;
  CHECK(collapsed_strata_variance(g, 2, 4, {1, 0}).sigma2 == doctest::Approx(1.0));
  CHECK(collapsed_strata_variance(Vector::Constant(4, 2.0), 2, 8, cyclic_pairing(4)).sigma2 == 0.0);

  RandomStream s(8);
  Vector h(7);
  for (Index j = 0; j < 7; ++j) h(j) = s.normal();
  const auto p = cyclic_pairing(7);
  double ss = 0.0;
  for (Index j = 0; j < 7; ++j) ss += std::pow(h(j) - h(p[static_cast<std::size_t>(j)]), 2);
  CHECK(collapsed_strata_variance(h, 3, 21, p).sigma2 == doctest::Approx(9.0 / (2.0 * 441.0) * ss).epsilon(1e-12));

  CHECK_THROWS_AS(collapsed_strata_variance(Vector::Ones(1), 2, 2, {0}), ValidationError);
  CHECK_THROWS_WITH_AS(collapsed_strata_variance(g, 2, 4, {0, 1}), doctest::Contains("fixed point"), ValidationError);
  CHECK_THROWS_AS(collapsed_strata_variance(Vector::Ones(3), 2, 6, {1, 0, 0}), ValidationError);
}

TEST_CASE("group pairing") {
  RandomStream s(9);
  for (Index groups : {2, 5, 6, 9}) {
    const Index k = 3, n = groups * k;
    Matrix x(n, 2);
    for (Index i = 0; i < n; ++i) x.row(i) << s.normal(), s.normal();
    const Matching m = match_k_tuples(x, k, s.child(static_cast<std::uint64_t>(groups)));
    const auto p = pair_groups(x, m);
    std::vector<char> hit(static_cast<std::size_t>(groups), 0);
    for (Index g = 0; g < groups; ++g) {
      const Index q = p[static_cast<std::size_t>(g)];
      CHECK(q != g);
      hit[static_cast<std::size_t>(q)] = 1;
      if (groups % 2 == 0) CHECK(p[static_cast<std::size_t>(q)] == g);
    }
    for (char h : hit) CHECK(h == 1);
  }
}

TEST_CASE("confidence interval") {
  const auto ci = confidence_interval(0.0, 1.0, 0.05);
  CHECK(ci.lower == doctest::Approx(-1.959964).epsilon(1e-6));
  CHECK(ci.upper == doctest::Approx(1.959964).epsilon(1e-6));
  const auto point = confidence_interval(2.0, 0.0, 0.1);
  CHECK(point.lower == 2.0);
  CHECK(point.upper == 2.0);
  const auto w = confidence_interval(1.0, 4.0, 0.1);
  CHECK(w.upper - w.lower == doctest::Approx(2 * stats::normal_quantile(0.95) * 2.0));
  CHECK_THROWS_AS(confidence_interval(0.0, -1.0, 0.05), ValidationError);
  CHECK_THROWS_AS(confidence_interval(0.0, 1.0, 1.5), ValidationError);
}

TEST_CASE("estimator names") {
  CHECK(estimator_kind_from_string("ht") == EstimatorKind::HT);
  CHECK(estimator_kind_from_string("ols-blp") == EstimatorKind::OLS);
  CHECK(estimator_kind_from_string("logit") == EstimatorKind::Logit);
  CHECK_THROWS_AS(estimator_kind_from_string("probit"), ValidationError);
}
