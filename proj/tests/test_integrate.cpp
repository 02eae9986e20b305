#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/LU>

#include "biasctl/gauss_oracle.hpp"
#include "biasctl/integrate.hpp"
#include "biasctl/samplers.hpp"
#include "support.hpp"

using namespace biasctl;
using testing_support::verlet_1d;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_SUITE("integrate") {

TEST_CASE("one step on a 1-d gaussian matches the kick-drift-kick map") {
  for (double s2 : {1.0, 0.3, 4.0}) {
    auto t = std::make_shared<GaussTarget>(vec({s2}));
    for (double eps : {0.05, 0.5, 1.0}) {
      double x = 1.0, u = -0.4;
      verlet_1d(s2, eps, x, u);
      const auto out = verlet_step(make_state(*t, vec({1.0}), vec({-0.4})), *t, eps);
      CHECK(out.state.x[0] == doctest::Approx(x).epsilon(1e-14));
      CHECK(out.state.u[0] == doctest::Approx(u).epsilon(1e-14));
      const double dh = 0.5 * (u * u + x * x / s2) - 0.5 * (0.16 + 1.0 / s2);
      CHECK(out.delta_h == doctest::Approx(dh).epsilon(1e-12));
      CHECK(out.grad_calls == 1);
    }
  }
}

TEST_CASE("eps = 0 is the identity") {
  auto t = make_rosenbrock_product(2, 0.1);
  const auto s = make_state(*t, vec({0.2, 0.1, -0.3, 1.0}), vec({1, 2, 3, 4}));
  const auto out = verlet_step(s, *t, 0.0);
  CHECK(out.state.x == s.x);
  CHECK(out.state.u == s.u);
  CHECK(out.delta_h == 0.0);
}

TEST_CASE("gaussian z=(1,0), eps=0.5 against the closed-form matrix") {
  const double eps = 0.5, y = eps * eps;
  // Matrix derived by hand from kick-drift-kick with unit variance.
  const double a11 = 1 - y / 2, a12 = eps, a21 = -eps * (1 - y / 4), a22 = 1 - y / 2;
  const double x1 = a11 * 1.0 + a12 * 0.0, u1 = a21 * 1.0 + a22 * 0.0;
  auto t = make_standard_gaussian(1);
  const auto out = verlet_step(make_state(*t, vec({1.0}), vec({0.0})), *t, eps);
  CHECK(out.state.x[0] == doctest::Approx(x1).epsilon(1e-14));
  CHECK(out.state.u[0] == doctest::Approx(u1).epsilon(1e-14));
  CHECK(out.delta_h == doctest::Approx(0.5 * (x1 * x1 + u1 * u1) - 0.5).epsilon(1e-12));
  CHECK(a11 * a22 - a12 * a21 == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("partial momentum refresh") {
  auto t = make_standard_gaussian(2);
  const auto s = make_state(*t, vec({0.0, 0.0}), vec({1.0, -2.0}));
  const Vector n = vec({0.5, 0.25});
  CHECK(ou_refresh(s, 0.1, 1e300, n).u.isApprox(s.u));
  CHECK(ou_refresh(s, 1e3, 1.0, n).u.isApprox(n));
  const auto half = ou_refresh(s, std::log(2.0), 1.0, n);
  CHECK(half.u[0] == doctest::Approx(0.5 * 1.0 + std::sqrt(3.0) / 2 * 0.5));
  CHECK(half.u[1] == doctest::Approx(0.5 * -2.0 + std::sqrt(3.0) / 2 * 0.25));
  CHECK(half.x == s.x);
}

TEST_CASE("refresh keeps the unit momentum marginal") {
  ChainRng rng(1, 0);
  Vector u = Vector::Constant(1, 3.0);
  std::vector<double> sq;
  for (int i = 0; i < 200000; ++i) {
    ou_refresh_inplace(u, 0.3, 1.0, rng.normal_vector(1));
    if (i > 100) sq.push_back(u[0] * u[0]);
  }
  CHECK(std::abs(testing_support::mean(sq) - 1.0) < 4 * testing_support::batch_se(sq));
}

TEST_CASE("LMC step without refresh is a Verlet step") {
  auto t = make_rosenbrock_product(1, 0.1);
  const auto s = make_state(*t, vec({0.3, 0.2}), vec({0.7, -0.1}));
  const auto a = lmc_step(s, *t, 0.1, 1e300, vec({5, 5}), vec({-5, 5}));
  const auto b = verlet_step(s, *t, 0.1);
  CHECK(a.state.x.isApprox(b.state.x, 1e-14));
  CHECK(a.state.u.isApprox(b.state.u, 1e-14));
  CHECK(a.delta_h == doctest::Approx(b.delta_h));
}

TEST_CASE("LMC stationary variance on a 1-d gaussian") {
  auto t = make_standard_gaussian(1);
  ChainConfig c;
  c.kind = SamplerKind::ulmc;
  c.step_size = 0.5;
  c.decoherence_length = 1.0;
  c.total_steps = 1'000'000;
  c.burn_in = 1000;
  c.seed = 21;
  std::vector<double> x2;
  x2.reserve(c.total_steps);
  run_chain(*t, c, 0.5, [&](const StepRecord& r) { x2.push_back(r.x()[0] * r.x()[0]); });
  const double expect = 1.0 / (1.0 - 0.25 / 4.0);
  CHECK(std::abs(testing_support::mean(x2) - expect) < 4 * testing_support::batch_se(x2));
}

TEST_CASE("energy") {
  auto t = make_standard_gaussian(2);
  CHECK(energy(make_state(*t, vec({0, 0}), vec({0, 0}))) == 0.0);
  const auto s = make_state(*t, vec({1, 0}), vec({0, 1}));
  CHECK(energy(s) == doctest::Approx(1.0));
  CHECK(energy(s, *t) == doctest::Approx(1.0));
  // exact flow on N(0,1) is a rotation of (x, u) and conserves H
  auto one = make_standard_gaussian(1);
  const double th = 0.83;
  const auto a = make_state(*one, vec({0.4}), vec({-1.3}));
  const auto b = make_state(*one, vec({0.4 * std::cos(th) - 1.3 * std::sin(th)}),
                            vec({-0.4 * std::sin(th) - 1.3 * std::cos(th)}));
  CHECK(energy(b) - energy(a) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("reversibility") {
  std::vector<TargetPtr> models = {make_ill_conditioned_gaussian(8, 20.0, 1, true), make_rosenbrock_product(4, 0.1),
                                   make_funnel(6, 2)};
  std::mt19937_64 gen(9);
  std::normal_distribution<double> n;
  for (const auto& m : models) {
    for (int k = 0; k < 10; ++k) {
      Vector x(m->dim()), u(m->dim());
      for (auto& v : x) v = 0.5 * n(gen);
      for (auto& v : u) v = n(gen);
      const auto s0 = make_state(*m, x, u);
      auto s1 = verlet_step(s0, *m, 0.01).state;
      s1.u = -s1.u;
      auto s2 = verlet_step(s1, *m, 0.01).state;
      s2.u = -s2.u;
      CHECK((s2.x - x).norm() <= 1e-10 * x.norm());
      CHECK((s2.u - u).norm() <= 1e-10 * u.norm());
    }
  }
}

TEST_CASE("one-step map has unit determinant") {
  for (double s2 : {0.1, 1.0, 10.0}) {
    auto t = std::make_shared<GaussTarget>(vec({s2}));
    for (double f = 0.05; f < 1.0; f += 0.1) {
      const double eps = f * 2.0 * std::sqrt(s2);
      // columns of the simulated map
      const auto c1 = verlet_step(make_state(*t, vec({1.0}), vec({0.0})), *t, eps).state;
      const auto c2 = verlet_step(make_state(*t, vec({0.0}), vec({1.0})), *t, eps).state;
      const double det = c1.x[0] * c2.u[0] - c2.x[0] * c1.u[0];
      CHECK(det == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(verlet_matrix_1d(s2, eps).A.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("energy error variance scales as eps^6") {
  auto t = make_standard_gaussian(10);
  auto eevpd_at = [&](double eps) {
    ChainConfig c;
    c.kind = SamplerKind::ulmc;
    c.step_size = eps;
    c.total_steps = 300000;
    c.burn_in = 2000;
    c.seed = 4;
    EevpdAccumulator acc(10);
    run_chain(*t, c, eps, [&](const StepRecord& r) { acc.update(r.delta_h); });
    return acc.estimate();
  };
  const double slope = std::log(eevpd_at(0.5) / eevpd_at(0.05)) / std::log(10.0);
  CHECK(slope == doctest::Approx(6.0).epsilon(0.3 / 6.0));
}

TEST_CASE("stability boundary at eps = 2 sigma") {
  auto t = make_standard_gaussian(1);
  auto run = [&](double eps) {
    double x = 1.0, u = 0.3, worst = 0.0;
    for (int i = 0; i < 10000 && std::isfinite(x); ++i) {
      verlet_1d(1.0, eps, x, u);
      worst = std::max(worst, std::abs(x));
    }
    return worst;
  };
  CHECK(run(1.99) < 100.0);
  CHECK(!(run(2.01) < 1e100));

  // the library flags the blow-up as a divergence
  auto s = make_state(*t, vec({1.0}), vec({0.3}));
  bool divergent = false;
  for (int i = 0; i < 2000 && !divergent; ++i) verlet_step_inplace(s, *t, 2.01, 1000.0, divergent);
  CHECK(divergent);
}

TEST_CASE("n steps from a fresh state cost n+1 gradients") {
  auto t = std::make_shared<testing_support::CountingTarget>(make_rosenbrock_product(3, 0.1));
  for (int n : {1, 7, 100}) {
    t->calls = 0;
    auto s = make_state(*t, Vector::Constant(6, 0.3), Vector::Constant(6, 0.1));
    for (int i = 0; i < n; ++i) s = verlet_step(s, *t, 0.01).state;
    CHECK(t->calls == n + 1);
  }
  // chains count the same way
  t->calls = 0;
  ChainConfig c;
  c.kind = SamplerKind::uhmc;
  c.step_size = 0.05;
  c.total_steps = 250;
  Chain chain(*t, c, Vector::Zero(6));
  for (int i = 0; i < 250; ++i) chain.step();
  CHECK(t->calls == 251);
  CHECK(chain.grad_calls() == 251);
}

TEST_CASE("bad configuration") {
  IntegratorConfig c;
  c.step_size = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.step_size = 0.1;
  c.refresh_scale = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

}  // TEST_SUITE
