#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/LU>

#include "biasctl/metrics.hpp"
#include "support.hpp"

using namespace biasctl;

namespace {

Matrix random_spd(std::mt19937_64& gen, int d, double ridge = 0.5) {
  std::normal_distribution<double> n;
  Matrix g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = n(gen);
  Matrix s = g * g.transpose() / d;
  s.diagonal().array() += ridge;
  return s;
}

// Trace form with an explicit inverse.
double b2_ref(const Matrix& p, const Matrix& q) {
  const Matrix m = Matrix::Identity(p.rows(), p.cols()) - p.inverse() * q;
  return (m * m).trace() / static_cast<double>(p.rows());
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("running moments: merge equals single pass") {
  std::mt19937_64 gen(4);
  std::normal_distribution<double> n(1.0, 2.0);
  std::uniform_int_distribution<int> cut(1, 2998);
  for (bool diag : {false, true}) {
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<Vector> xs(3000, Vector(5));
      for (auto& x : xs)
        for (auto& v : x) v = n(gen);
      RunningMoments all(5, diag), a(5, diag), b(5, diag);
      const int k = cut(gen);
      for (int i = 0; i < 3000; ++i) {
        all.update(xs[i]);
        (i < k ? a : b).update(xs[i]);
      }
      RunningMoments ba = b;
      ba.merge(a);
      a.merge(b);
      CHECK((ba.variance() - all.variance()).norm() < 1e-10);
      CHECK(a.count() == 3000);
      CHECK((a.mean() - all.mean()).norm() < 1e-10);
      CHECK((a.variance() - all.variance()).norm() < 1e-10);
      if (!diag) {
        CHECK((a.covariance() - all.covariance()).norm() < 1e-10);
        CHECK(a.covariance().isApprox(a.covariance().transpose(), 0.0));
        CHECK((a.covariance().diagonal().array() >= 0).all());
      }
    }
  }
  // direct population covariance
  RunningMoments m(2);
  Vector x(2);
  x << 1, 2;
  m.update(x);
  x << 3, 0;
  m.update(x);
  CHECK(m.mean()[0] == 2.0);
  CHECK(m.covariance()(0, 0) == doctest::Approx(1.0));
  CHECK(m.covariance()(0, 1) == doctest::Approx(-1.0));
  CHECK(m.second_moment()[1] == doctest::Approx(2.0));
  CHECK_THROWS(RunningMoments(2, true).covariance());
}

TEST_CASE("b2_cov values") {
  const Matrix one = Matrix::Identity(1, 1);
  CHECK(b2_cov(one, Matrix::Constant(1, 1, 4.0 / 3.0)) == doctest::Approx(1.0 / 9.0));
  std::mt19937_64 gen(7);
  for (int k = 0; k < 50; ++k) {
    const Matrix p = random_spd(gen, 6), q = random_spd(gen, 6);
    CHECK(b2_cov(p, p) == doctest::Approx(0.0));
    CHECK(b2_cov(p, q) == doctest::Approx(b2_ref(p, q)).epsilon(1e-10));
  }
  Vector tv(3), ev(3);
  tv << 1, 2, 4;
  ev << 1.5, 2, 2;
  CHECK(b2_cov_diag(tv, ev) == doctest::Approx((0.25 + 0 + 0.25) / 3));
  Matrix bad = Matrix::Identity(2, 2);
  bad(1, 1) = -1;
  CHECK_THROWS_AS(b2_cov(bad, Matrix::Identity(2, 2)), std::invalid_argument);
}

TEST_CASE("b2_cov divergence axioms on random SPD pairs") {
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> dim(1, 8);
  for (int k = 0; k < 1000; ++k) {
    const int d = dim(gen);
    const Matrix p = random_spd(gen, d, 0.1), q = random_spd(gen, d, 0.1);
    CHECK(b2_cov(p, q) >= 0.0);
    CHECK(b2_cov(p, p) < 1e-20);
  }
  // any single symmetric entry moved by 1e-3 gives a positive value
  const Matrix p = random_spd(gen, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j <= i; ++j) {
      Matrix q = p;
      q(i, j) += 1e-3;
      if (i != j) q(j, i) += 1e-3;
      CHECK(b2_cov(p, q) > 0.0);
    }
}

TEST_CASE("basis change") {
  std::mt19937_64 gen(13);
  std::normal_distribution<double> n;
  for (int k = 0; k < 50; ++k) {
    const Matrix p = random_spd(gen, 5), q = random_spd(gen, 5);
    Matrix a = Matrix::Identity(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) a(i, j) += 0.3 * n(gen);
    const auto [before, after] = basis_change_check(p, q, a);
    CHECK(after == doctest::Approx(before).epsilon(1e-8));
    const auto [b1, a1] = basis_change_check(p, q, Matrix::Identity(5, 5));
    CHECK(a1 == b1);
    const auto [b2, a2] = basis_change_check(p, q, 2.0 * Matrix::Identity(5, 5));
    CHECK(a2 == doctest::Approx(b2).epsilon(1e-14));
  }
  Matrix singular = Matrix::Identity(3, 3);
  singular(2, 2) = 0;
  CHECK_THROWS_AS(basis_change_check(Matrix::Identity(3, 3), Matrix::Identity(3, 3), singular),
                  std::invalid_argument);
}

TEST_CASE("b2_avg") {
  auto t = make_standard_gaussian(1);
  Vector e(1);
  e[0] = 1.1;
  CHECK(b2_avg(*t->truth(), e) == doctest::Approx(0.005));
  e[0] = 1.0;
  CHECK(b2_avg(*t->truth(), e) == 0.0);

  auto r = make_rosenbrock_product(2, 0.1);
  RunningMoments m(4);
  std::mt19937_64 gen(1);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    Vector x(4);
    for (auto& v : x) v = n(gen);
    m.update(x);
  }
  const auto rep = make_error_report(*r->truth(), m, 77, 0.5);
  CHECK(rep.b2_avg == doctest::Approx(rep.per_dim.mean()));
  CHECK(rep.grad_calls == 77);
  GroundTruth g = *t->truth();
  g.second_moment_variance[0] = 0.0;
  CHECK_THROWS(b2_avg(g, e));
}

TEST_CASE("exact samples: b2_cov expectation") {
  // population covariance about the sample mean: E b2 = (d+1)/n - d/n^2
  const int d = 9, reps = 400;
  std::mt19937_64 gen(2024);
  std::normal_distribution<double> n;
  const Matrix id = Matrix::Identity(d, d);
  for (int size : {200, 1000}) {
    std::vector<double> vals;
    for (int r = 0; r < reps; ++r) {
      RunningMoments m(d);
      Vector x(d);
      for (int i = 0; i < size; ++i) {
        for (auto& v : x) v = n(gen);
        m.update(x);
      }
      vals.push_back(b2_cov(id, m.covariance()));
    }
    const double expect = (d + 1.0) / size - static_cast<double>(d) / (size * double(size));
    const double mu = testing_support::mean(vals);
    double ss = 0;
    for (double v : vals) ss += (v - mu) * (v - mu);
    const double se = std::sqrt(ss / (reps - 1) / reps);
    CHECK(std::abs(mu - expect) < 3 * se);
  }
}

TEST_CASE("autocorrelation time") {
  CHECK(tau_int_gauss(0.0, 100) == 1.0);
  CHECK(tau_int_gauss(0.5, 10) == doctest::Approx(3.0 * (1.0 - 0.1 * (1.0 - std::pow(0.5, 10)) / 0.75)));
  CHECK(tau_int_gauss(0.5, 10) == doctest::Approx(2.6004).epsilon(1e-4));
  CHECK(tau_int_gauss(0.9, 100'000'000) == doctest::Approx(19.0).epsilon(1e-6));
  // brute force: n Var[mean] / Var[x] = 1 + 2 sum_k (1 - k/n) rho^k
  for (double rho : {-0.3, 0.2, 0.8}) {
    const int n = 37;
    double s = 1.0;
    for (int k = 1; k < n; ++k) s += 2.0 * (1.0 - double(k) / n) * std::pow(rho, k);
    CHECK(tau_int_gauss(rho, n) == doctest::Approx(s).epsilon(1e-12));
  }
  CHECK_THROWS(tau_int_gauss(1.0, 10));

  // AR(1) chain: estimated tau near (1+rho)/(1-rho)
  std::mt19937_64 gen(3);
  std::normal_distribution<double> n;
  const double rho = 0.7;
  std::vector<double> x(200000);
  double v = 0;
  for (auto& e : x) e = v = rho * v + std::sqrt(1 - rho * rho) * n(gen);
  CHECK(integrated_autocorr_time(x) == doctest::Approx((1 + rho) / (1 - rho)).epsilon(0.1));
  CHECK(effective_sample_size(x) == doctest::Approx(x.size() / ((1 + rho) / (1 - rho))).epsilon(0.1));
  const auto ac = autocorrelation(x, 3);
  CHECK(ac[0] == 1.0);
  CHECK(ac[2] == doctest::Approx(rho * rho).epsilon(0.05));

  // batch SE: for AR(1), sqrt(tau / n)
  CHECK(batch_means_se(x, 50) == doctest::Approx(std::sqrt((1 + rho) / (1 - rho) / x.size())).epsilon(0.35));
}

TEST_CASE("median curves and crossing") {
  std::vector<Curve> same(4, Curve{3, 2, 1});
  CHECK(median_curve(same) == Curve{3, 2, 1});
  CHECK(median_curve({{1}, {2}, {9}}) == Curve{2});
  CHECK(median_curve({{1}, {2}, {9}, {10}}) == Curve{5.5});
  CHECK_THROWS(median_curve({{1, 2}, {1}}));
  CHECK_THROWS(median_curve({{1}}));

  const std::vector<std::uint64_t> grid{10, 20, 30, 40};
  auto c = grads_to_threshold(grid, {0.5, 0.2, 0.01, 0.001}, 0.01);
  CHECK(c.grad_calls == 40);
  CHECK(!c.censored);
  c = grads_to_threshold(grid, {0.5, 0.2, 0.05, 0.02}, 0.01);
  CHECK(c.censored);
  CHECK(c.grad_calls == 40);
}

TEST_CASE("bootstrap") {
  const std::vector<std::uint64_t> grid{10, 20, 30};
  std::vector<Curve> same(5, Curve{0.5, 0.005, 0.001});
  const auto z = bootstrap_error(same, grid, 0.01);
  CHECK(z.relative_error == 0.0);
  CHECK(z.resamples == kDefaultBootstrapResamples);
  CHECK(z.point.grad_calls == 20);

  // two chains: resamples AA -> 20, BB -> 30, AB and BA (mean curve) -> 30
  const std::vector<Curve> two{{0.5, 0.005, 0.001}, {0.5, 0.5, 0.001}};
  const auto ex = bootstrap_error_exhaustive(two, grid, 0.01);
  CHECK(ex.resamples == 4);
  CHECK(ex.point.grad_calls == 30);
  const double mean = (20 + 30 * 3) / 4.0;
  const double sd = std::sqrt((std::pow(20 - mean, 2) + 3 * std::pow(30 - mean, 2)) / 4);
  CHECK(ex.std_dev == doctest::Approx(sd));
  CHECK(ex.relative_error == doctest::Approx(sd / 30));

  // random resampling approaches the exhaustive answer
  const auto mc = bootstrap_error(two, grid, 0.01, 4000, 1);
  CHECK(mc.std_dev == doctest::Approx(sd).epsilon(0.1));

  const std::vector<Curve> never{{1, 1, 1}, {1, 1, 0.5}};
  const auto cen = bootstrap_error(never, grid, 0.01);
  CHECK(cen.point.censored);
  CHECK(cen.censored_resamples == cen.resamples);
  CHECK_THROWS(bootstrap_error(two, grid, 0.01, 1));
}

TEST_CASE("checkpoint grid") {
  auto g = checkpoint_grid(1000, 512);
  CHECK(g.front() == 2);
  CHECK(g.back() == 1000);
  CHECK(g.size() == 500);
  g = checkpoint_grid(10, 3);
  CHECK(g == std::vector<std::uint64_t>{4, 8, 10});
  g = checkpoint_grid(1'000'000, 256, true, 10);
  CHECK(g.front() == 10);
  CHECK(g.back() == 1'000'000);
  CHECK(std::is_sorted(g.begin(), g.end()));
  CHECK(std::adjacent_find(g.begin(), g.end()) == g.end());
  CHECK_THROWS(checkpoint_grid(0));
}

}  // TEST_SUITE
