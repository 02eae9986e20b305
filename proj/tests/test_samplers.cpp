#include <doctest.h>

#include <cmath>

#include "biasctl/samplers.hpp"
#include "support.hpp"

using namespace biasctl;
using testing_support::batch_se;
using testing_support::mean;

namespace {

ChainConfig config(SamplerKind kind, double eps, double L, std::size_t steps, std::uint64_t seed = 1) {
  ChainConfig c;
  c.kind = kind;
  c.step_size = eps;
  c.decoherence_length = L;
  c.total_steps = steps;
  c.burn_in = steps / 100;
  c.seed = seed;
  return c;
}

// x_i^2 per drawn sample, for one coordinate.
std::vector<double> squares(const TargetModel& t, const ChainConfig& c, int coord = 0) {
  std::vector<double> out;
  out.reserve(c.total_steps);
  auto sink = [&](const StepRecord& r) {
    if (r.sample) out.push_back(r.x()[coord] * r.x()[coord]);
  };
  run_chain(t, c, c.step_size, sink);
  return out;
}

}  // namespace

TEST_SUITE("samplers") {

TEST_CASE("trajectory length") {
  ChainConfig c;
  c.decoherence_length = 1.0;
  c.step_size = 0.3;
  CHECK(c.steps_per_trajectory() == 3);
  c.step_size = 2.5;
  CHECK(c.steps_per_trajectory() == 1);
  c.step_size = 0.4;
  CHECK(c.steps_per_trajectory() == 3);  // round(2.5) = 3
  c.total_steps = 10;
  c.burn_in = 10;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("unadjusted HMC stationary variance on a 1-d gaussian") {
  auto t = make_standard_gaussian(1);
  const auto x2 = squares(*t, config(SamplerKind::uhmc, 0.5, 1.0, 1'000'000, 3));
  CHECK(std::abs(mean(x2) - 16.0 / 15.0) < 4 * batch_se(x2));
}

TEST_CASE("unadjusted LMC stationary variance does not depend on L") {
  auto t = make_standard_gaussian(1);
  for (double L : {0.5, 5.0}) {
    const auto x2 = squares(*t, config(SamplerKind::ulmc, 0.5, L, 1'000'000, 5));
    CHECK(std::abs(mean(x2) - 16.0 / 15.0) < 4 * batch_se(x2));
  }
}

TEST_CASE("small step recovers the target") {
  auto t = make_standard_gaussian(1);
  const auto x2 = squares(*t, config(SamplerKind::uhmc, 0.02, 1.3, 600'000, 8));
  CHECK(std::abs(mean(x2) - 1.0) < 4 * batch_se(x2));
}

TEST_CASE("diagonal gaussian: per-direction stationary variance") {
  auto t = make_ill_conditioned_gaussian(4, 10.0, 0);
  const Vector& s2 = t->spectrum();
  for (auto kind : {SamplerKind::uhmc, SamplerKind::ulmc}) {
    const double eps = 1.2;
    for (int i = 0; i < 4; ++i) {
      const auto x2 = squares(*t, config(kind, eps, 2.0, 1'000'000, 10 + i), i);
      const double expect = s2[i] / (1.0 - eps * eps / (4.0 * s2[i]));
      CHECK_MESSAGE(std::abs(mean(x2) - expect) < 4 * batch_se(x2), to_string(kind), " direction ", i);
    }
  }
}

TEST_CASE("unadjusted momentum marginal stays at unit variance") {
  auto t = make_rosenbrock_product(2, 0.1);
  ChainConfig c = config(SamplerKind::ulmc, 0.05, 1.0, 400'000, 2);
  Chain chain(*t, c);
  std::vector<double> u2;
  for (std::size_t i = 0; i < c.total_steps; ++i) {
    chain.step();
    if (i > 1000) u2.push_back(chain.state().u[1] * chain.state().u[1]);
  }
  CHECK(std::abs(mean(u2) - 1.0) < 4 * batch_se(u2));
}

TEST_CASE("determinism") {
  auto t = make_rosenbrock_product(3, 0.1);
  for (auto kind : {SamplerKind::uhmc, SamplerKind::ulmc, SamplerKind::ahmc, SamplerKind::almc}) {
    auto trace = [&](std::uint64_t chain_id) {
      ChainConfig c = config(kind, 0.1, 0.7, 3000, 42);
      c.chain_id = chain_id;
      std::vector<double> out;
      run_chain(*t, c, 0.1, [&](const StepRecord& r) {
        out.push_back(r.delta_h);
        out.insert(out.end(), r.position.begin(), r.position.end());
      });
      return out;
    };
    CHECK(trace(0) == trace(0));
    CHECK(trace(0) != trace(1));
  }
}

TEST_CASE("step records") {
  auto t = make_standard_gaussian(3);
  ChainConfig c = config(SamplerKind::ahmc, 0.3, 0.9, 900, 1);
  c.burn_in = 0;
  std::uint64_t last = 0;
  std::size_t samples = 0, decided = 0;
  run_chain(*t, c, 0.3, [&](const StepRecord& r) {
    CHECK(r.grad_calls_cumulative >= last);
    last = r.grad_calls_cumulative;
    samples += r.sample;
    decided += r.accepted.has_value();
  });
  CHECK(samples == 300);
  CHECK(decided == 300);

  ChainConfig u = config(SamplerKind::ulmc, 0.3, 0.9, 900, 1);
  u.burn_in = 0;
  samples = 0;
  run_chain(*t, u, 0.3, [&](const StepRecord& r) { samples += r.sample; });
  CHECK(samples == 900);
}

TEST_CASE("unstable steps are counted and the chain continues") {
  auto t = make_standard_gaussian(1);
  for (auto kind : {SamplerKind::uhmc, SamplerKind::ulmc}) {
    ChainConfig c = config(kind, 2.3, 20.0, 20000, 1);
    Chain chain(*t, c);
    for (std::size_t i = 0; i < c.total_steps; ++i) chain.step();
    CHECK(chain.stats().divergences > 0);
    CHECK(chain.state().x.allFinite());
    CHECK(std::abs(chain.state().x[0]) < 1e3);
  }
}

TEST_CASE("adjusted kernels are unbiased on a 10-d gaussian") {
  auto t = make_standard_gaussian(10);
  for (auto kind : {SamplerKind::ahmc, SamplerKind::almc}) {
    for (double eps : {0.3, 0.9, 1.6}) {
      ChainConfig c = config(kind, eps, 1.5, 400'000, 17);
      std::vector<double> m;
      run_chain(*t, c, eps, [&](const StepRecord& r) {
        if (r.sample) m.push_back(r.x().squaredNorm() / 10.0);
      });
      CHECK_MESSAGE(std::abs(mean(m) - 1.0) < 4 * batch_se(m), to_string(kind), " eps ", eps);
    }
  }
}

TEST_CASE("adjusted HMC acceptance") {
  auto t = make_standard_gaussian(100);
  auto rate = [&](double eps) {
    ChainConfig c = config(SamplerKind::ahmc, eps, 1.0, 40000, 3);
    return run_ahmc(*t, c, [](const StepRecord&) {}).stats.acceptance_rate();
  };
  CHECK(rate(0.01) > 0.999);
  double prev = 1.0;
  for (double eps : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double r = rate(eps);
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("adjusted LMC with one step per trajectory") {
  auto t = make_standard_gaussian(2);
  ChainConfig c = config(SamplerKind::almc, 0.5, 0.5, 10000, 1);
  CHECK(c.steps_per_trajectory() == 1);
  c.burn_in = 0;
  std::size_t samples = 0;
  run_almc(*t, c, [&](const StepRecord& r) { samples += r.sample; });
  CHECK(samples == 10000);
}

TEST_CASE("adjusted kernels reject a step-size controller") {
  auto t = make_standard_gaussian(2);
  AdapterState a = AdapterState::initial(1e-3, 0.1);
  ChainConfig c = config(SamplerKind::ahmc, 0.1, 1.0, 100);
  CHECK_THROWS_AS(run_chain(*t, c, &a, [](const StepRecord&) {}), std::invalid_argument);
}

TEST_CASE("acceptance tuner") {
  auto d1 = make_standard_gaussian(1);
  ChainConfig c = config(SamplerKind::ahmc, 0.5, 1.0, 1000, 2);
  const auto high = tune_acceptance(*d1, c, 0.99);
  const auto mid = tune_acceptance(*d1, c, 0.5);
  CHECK(high.converged);
  CHECK(high.step_size <= 0.5);
  CHECK(high.step_size < mid.step_size);
  CHECK(std::abs(high.window_acceptance - 0.99) <= 0.03);

  ChainConfig m = config(SamplerKind::almc, 0.3, 1.0, 1000, 2);
  const auto r4 = tune_acceptance(*make_standard_gaussian(4), m, 0.8);
  const auto r1024 = tune_acceptance(*make_standard_gaussian(1024), m, 0.8);
  CHECK(r4.converged);
  CHECK(r1024.converged);
  CHECK(r1024.step_size < r4.step_size);

  CHECK_THROWS_AS(tune_acceptance(*d1, c, 1.0), std::invalid_argument);
  ChainConfig u = config(SamplerKind::ulmc, 0.3, 1.0, 1000);
  CHECK_THROWS_AS(tune_acceptance(*d1, u, 0.8), std::invalid_argument);
}

}  // TEST_SUITE
