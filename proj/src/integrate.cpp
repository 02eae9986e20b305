#include "biasctl/integrate.hpp"

#include <cmath>

namespace biasctl {

PhaseState make_state(const TargetModel& target, Vector x, Vector u) {
  if (x.size() != static_cast<Eigen::Index>(target.dim()) || u.size() != x.size())
    throw std::invalid_argument("make_state: dimension mismatch");
  PhaseState s;
  s.x = std::move(x);
  s.u = std::move(u);
  s.grad.resize(s.x.size());
  s.potential = target.value_and_gradient(s.x, s.grad);
  s.has_grad = true;
  return s;
}

double energy(const PhaseState& state) { return 0.5 * state.u.squaredNorm() + state.potential; }

double energy(const PhaseState& state, const TargetModel& target) {
  return 0.5 * state.u.squaredNorm() + target.neg_log_density(state.x);
}

double verlet_step_inplace(PhaseState& s, const TargetModel& target, double eps,
                           double divergence_threshold, bool& divergent) {
  if (!s.has_grad) throw std::logic_error("verlet_step: gradient cache not populated");
  const double half = 0.5 * eps;
  const double potential0 = s.potential;

  // Kinetic change accumulated as sum (u'-u)(u'+u)/2 to avoid subtracting
  // two large norms.
  Vector u0 = s.u;
  s.u.noalias() -= half * s.grad;
  s.x.noalias() += eps * s.u;
  s.potential = target.value_and_gradient(s.x, s.grad);
  s.u.noalias() -= half * s.grad;

  const double kinetic = 0.5 * (s.u - u0).dot(s.u + u0);
  const double dh = kinetic + (s.potential - potential0);
  divergent = !std::isfinite(dh) || std::abs(dh) > divergence_threshold ||
              !std::isfinite(s.potential);
  return dh;
}

StepOutcome verlet_step(const PhaseState& state, const TargetModel& target, double eps,
                        double divergence_threshold) {
  StepOutcome out;
  out.state = state;
  if (eps == 0.0) return out;  // identity map, no gradient needed
  out.delta_h = verlet_step_inplace(out.state, target, eps, divergence_threshold, out.divergent);
  out.grad_calls = 1;
  return out;
}

void ou_refresh_inplace(Vector& u, double eps, double L, ConstVectorRef noise) {
  if (!(L > 0.0)) throw std::invalid_argument("ou_refresh: L must be positive");
  const double c1 = std::exp(-eps / L);
  // sqrt(1 - c1^2) computed via expm1 to keep precision when eps/L is tiny.
  const double c2 = std::sqrt(-std::expm1(-2.0 * eps / L));
  u = c1 * u + c2 * noise;
}

PhaseState ou_refresh(const PhaseState& state, double eps, double L, ConstVectorRef noise) {
  PhaseState out = state;
  ou_refresh_inplace(out.u, eps, L, noise);
  return out;
}

StepOutcome lmc_step(const PhaseState& state, const TargetModel& target, double eps, double L,
                     ConstVectorRef noise_first, ConstVectorRef noise_second,
                     double divergence_threshold) {
  StepOutcome out;
  out.state = state;
  ou_refresh_inplace(out.state.u, 0.5 * eps, L, noise_first);
  out.delta_h = verlet_step_inplace(out.state, target, eps, divergence_threshold, out.divergent);
  out.grad_calls = 1;
  ou_refresh_inplace(out.state.u, 0.5 * eps, L, noise_second);
  return out;
}

}  // namespace biasctl
