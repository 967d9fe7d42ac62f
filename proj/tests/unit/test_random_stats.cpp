#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "couplekit/parallel.hpp"
#include "couplekit/random.hpp"
#include "couplekit/stats.hpp"
#include "helpers.hpp"

using namespace couplekit;

TEST_CASE("streams are reproducible and path dependent") {
  RandomStream a(42, {1, 2, 3}), b(42, {1, 2, 3}), c(42, {1, 2, 4}), d(43, {1, 2, 3});
  std::vector<std::uint64_t> va, vb, vc, vd;
  for (int i = 0; i < 100; ++i) {
    va.push_back(a.next_u64());
    vb.push_back(b.next_u64());
    vc.push_back(c.next_u64());
    vd.push_back(d.next_u64());
  }
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(va != vd);
  CHECK(RandomStream(42).child({1, 2}).child(3).path() == std::vector<std::uint64_t>{1, 2, 3});
}

TEST_CASE("sibling streams are uncorrelated") {
  std::vector<double> x, y;
  for (std::uint64_t i = 0; i < 20000; ++i) {
    x.push_back(RandomStream(7, {i, 0}).uniform());
    y.push_back(RandomStream(7, {i, 1}).uniform());
  }
  const auto r = testing::correlation(x, y);
  CHECK(std::abs(r.mean) < 3 * r.se);
}

TEST_CASE("uniform, normal and permutation") {
  RandomStream s(1);
  std::vector<double> u, z;
  for (int i = 0; i < 100000; ++i) {
    const double v = s.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    u.push_back(v);
    z.push_back(s.normal());
  }
  CHECK(stats::ks_test(u, [](double x) { return x; }).p_value > 1e-3);
  CHECK(stats::ks_test(z, stats::normal_cdf).p_value > 1e-3);
  auto p = s.permutation(10);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(p[i] == i);
}

TEST_CASE("normal quantile inverts the cdf") {
  for (double p : {1e-8, 0.001, 0.025, 0.3, 0.5, 0.9, 0.975, 0.999999}) {
    CHECK(stats::normal_cdf(stats::normal_quantile(p)) == doctest::Approx(p).epsilon(1e-9));
  }
  CHECK(stats::normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-6));
}

TEST_CASE("pairwise sum and moments") {
  std::vector<double> v(1000);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(stats::pairwise_sum(v) == 500500.0);
  CHECK(stats::mean(v) == doctest::Approx(500.5));
  CHECK(stats::sample_variance(v) == doctest::Approx(1000.0 * 1001.0 / 12.0));
}

TEST_CASE("goodness of fit tests") {
  RandomStream s(5);
  std::vector<double> u, w;
  for (int i = 0; i < 5000; ++i) {
    u.push_back(s.uniform());
    w.push_back(std::pow(s.uniform(), 2.0));
  }
  CHECK(stats::ks_test(w, [](double x) { return x; }).p_value < 1e-6);
  CHECK(stats::ks_two_sample(u, w).p_value < 1e-6);

  std::vector<double> z, e;
  for (int i = 0; i < 2000; ++i) {
    z.push_back(s.normal());
    e.push_back(-std::log(1.0 - s.uniform()));
  }
  CHECK(stats::anderson_darling_normal(z).p_value > 1e-3);
  CHECK(stats::anderson_darling_normal(e).p_value < 1e-6);

  const std::vector<double> obs{25, 25, 25, 25}, prob{0.25, 0.25, 0.25, 0.25};
  CHECK(stats::chi_square_test(obs, prob).p_value == doctest::Approx(1.0));
  // Upper tail of chi-square(2) is exp(-x/2).
  CHECK(stats::chi_square_sf(3.0, 2.0) == doctest::Approx(std::exp(-1.5)).epsilon(1e-10));
}

TEST_CASE("parallel_for covers every index once") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS(parallel_for(10, [](std::size_t i) {
    if (i == 3) throw std::runtime_error("boom");
  }));
}
