#pragma once

#include <cstdint>
#include <stdexcept>

#include "biasctl/targets.hpp"

namespace biasctl {

/// Phase-space point z = (x, u) with a cache of L(x) and ∇L(x).
struct PhaseState {
  Vector x;
  Vector u;
  Vector grad;
  double potential = 0.0;
  bool has_grad = false;

  std::size_t dim() const { return static_cast<std::size_t>(x.size()); }
};

/// Builds a state at `x` with momentum `u`, evaluating the gradient once.
PhaseState make_state(const TargetModel& target, Vector x, Vector u);

/// Threshold on |ΔH| above which one Verlet step counts as divergent.
inline constexpr double kDefaultDivergenceThreshold = 1000.0;

struct StepOutcome {
  PhaseState state;
  double delta_h = 0.0;
  std::uint64_t grad_calls = 0;
  bool divergent = false;
};

struct IntegratorConfig {
  double step_size = 0.1;
  double refresh_scale = 1.0;
  double divergence_threshold = kDefaultDivergenceThreshold;

  void validate() const {
    if (!(step_size > 0.0)) throw std::invalid_argument("step size must be positive");
    if (!(refresh_scale > 0.0)) throw std::invalid_argument("decoherence length must be positive");
  }
};

/// H(z) = ||u||^2 / 2 + L(x), using the cached potential.
double energy(const PhaseState& state);

/// H(z) evaluated from scratch (does not rely on the cache).
double energy(const PhaseState& state, const TargetModel& target);

/// One velocity Verlet step: half kick, drift, half kick. Reuses the cached
/// gradient for the leading kick, so it costs exactly one gradient call.
StepOutcome verlet_step(const PhaseState& state, const TargetModel& target, double eps,
                        double divergence_threshold = kDefaultDivergenceThreshold);

/// In-place variant used by the chain drivers. Returns ΔH; sets `divergent`.
double verlet_step_inplace(PhaseState& state, const TargetModel& target, double eps,
                           double divergence_threshold, bool& divergent);

/// Partial momentum refresh u' = e^{-eps/L} u + sqrt(1 - e^{-2 eps/L}) n.
PhaseState ou_refresh(const PhaseState& state, double eps, double L, ConstVectorRef noise);
void ou_refresh_inplace(Vector& u, double eps, double L, ConstVectorRef noise);

/// O(eps/2) B A B O(eps/2). ΔH is taken over the Verlet part only.
StepOutcome lmc_step(const PhaseState& state, const TargetModel& target, double eps, double L,
                     ConstVectorRef noise_first, ConstVectorRef noise_second,
                     double divergence_threshold = kDefaultDivergenceThreshold);

}  // namespace biasctl
