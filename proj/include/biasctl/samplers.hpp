#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <variant>

#include "biasctl/adapt.hpp"
#include "biasctl/integrate.hpp"
#include "biasctl/rng.hpp"
#include "biasctl/sampler_kind.hpp"
#include "biasctl/targets.hpp"

namespace biasctl {

struct ChainConfig {
  SamplerKind kind = SamplerKind::ulmc;
  double step_size = 0.1;
  /// Trajectory length (HMC kinds) or OU refresh scale (LMC kinds).
  double decoherence_length = 1.0;
  /// Number of Verlet steps (gradient calls) a run performs.
  std::size_t total_steps = 1000;
  std::size_t burn_in = 0;
  std::uint64_t seed = 0;
  std::uint64_t chain_id = 0;
  double divergence_threshold = kDefaultDivergenceThreshold;

  /// max(1, round(L / eps)).
  std::size_t steps_per_trajectory() const { return trajectory_steps(step_size); }
  std::size_t trajectory_steps(double eps) const;
  void validate() const;
};

/// Emitted after every Verlet step. `position` points into the chain and is
/// valid until the next step.
struct StepRecord {
  std::span<const double> position;
  double delta_h = 0.0;
  double step_size = 0.0;
  std::uint64_t grad_calls_cumulative = 0;
  std::optional<bool> accepted;
  /// Metropolis acceptance probability of the finished trajectory.
  std::optional<double> accept_prob;
  bool divergent = false;
  /// The position is a draw of the chain: every step for uLMC, trajectory
  /// endpoints for the other kinds.
  bool sample = false;

  Eigen::Map<const Vector> x() const {
    return {position.data(), static_cast<Eigen::Index>(position.size())};
  }
};

struct ChainStats {
  std::uint64_t verlet_steps = 0;
  std::uint64_t divergences = 0;
  std::uint64_t trajectories = 0;
  std::uint64_t accepted = 0;
  double accept_prob_sum = 0.0;

  double divergent_fraction() const {
    return verlet_steps ? static_cast<double>(divergences) / static_cast<double>(verlet_steps) : 0.0;
  }
  double acceptance_rate() const {
    return trajectories ? accept_prob_sum / static_cast<double>(trajectories) : 0.0;
  }
};

/// Pull-based Markov chain. Each call to step() performs one Verlet step
/// (one gradient evaluation) and returns its record.
class Chain {
 public:
  /// Starts from x0 ~ N(0, I) drawn from the chain's own stream.
  Chain(const TargetModel& target, const ChainConfig& config);
  Chain(const TargetModel& target, const ChainConfig& config, Vector x0);
  /// Warm start from a state with a populated gradient cache.
  Chain(const TargetModel& target, const ChainConfig& config, PhaseState state);

  const StepRecord& step();

  /// Unadjusted kinds pick the new value up immediately; adjusted kinds at
  /// the start of the next trajectory.
  void set_step_size(double eps);
  double step_size() const { return eps_; }

  const PhaseState& state() const { return state_; }
  const ChainConfig& config() const { return config_; }
  const ChainStats& stats() const { return stats_; }
  std::uint64_t grad_calls() const { return grad_calls_; }
  bool at_trajectory_start() const { return pos_in_traj_ == 0; }

 private:
  void start_trajectory();
  void step_uhmc();
  void step_ulmc();
  void step_ahmc();
  void step_almc();
  void finish_adjusted(double delta_h_traj, bool divergent);
  void publish(double delta_h, bool divergent, bool sample);

  const TargetModel& target_;
  ChainConfig config_;
  ChainRng rng_;
  PhaseState state_;
  PhaseState backup_;
  PhaseState traj_start_;
  Vector noise_a_, noise_b_;
  double eps_;
  double pending_eps_;
  double traj_eps_ = 0.0;
  double traj_dh_ = 0.0;
  double traj_h0_ = 0.0;
  bool traj_divergent_ = false;
  std::size_t pos_in_traj_ = 0;
  std::size_t traj_len_ = 1;
  std::uint64_t grad_calls_ = 0;
  bool need_refresh_ = true;
  ChainStats stats_;
  StepRecord record_;
};

using StepSink = std::function<void(const StepRecord&)>;

/// Either a fixed step size or a live controller updated after every step.
using StepSizeSource = std::variant<double, AdapterState*>;

struct RunSummary {
  PhaseState final_state;
  ChainStats stats;
  double final_step_size = 0.0;
  std::uint64_t grad_calls = 0;
};

/// Runs `config.total_steps` Verlet steps of the configured kind, passing
/// every record past the burn-in to `sink`. With a controller source, ε is
/// updated after each step and divergences halve it.
RunSummary run_chain(const TargetModel& target, const ChainConfig& config,
                     StepSizeSource source, const StepSink& sink,
                     std::optional<PhaseState> init = {});

RunSummary run_uhmc(const TargetModel& target, const ChainConfig& config,
                    StepSizeSource source, const StepSink& sink,
                    std::optional<PhaseState> init = {});
RunSummary run_ulmc(const TargetModel& target, const ChainConfig& config,
                    StepSizeSource source, const StepSink& sink,
                    std::optional<PhaseState> init = {});
RunSummary run_ahmc(const TargetModel& target, const ChainConfig& config, const StepSink& sink,
                    std::optional<PhaseState> init = {});
RunSummary run_almc(const TargetModel& target, const ChainConfig& config, const StepSink& sink,
                    std::optional<PhaseState> init = {});

struct TuneOptions {
  std::size_t window = 200;
  double tolerance = 0.03;
  std::size_t min_trajectories = 400;
  std::size_t max_trajectories = 20000;
  std::optional<Vector> initial_position;
};

struct TuneResult {
  double step_size = 0.0;
  bool converged = false;
  double window_acceptance = 0.0;
  std::uint64_t trajectories = 0;
  std::uint64_t grad_calls = 0;
  PhaseState state;
};

/// Robbins-Monro search on log ε for an adjusted kernel until the mean
/// acceptance probability over the last `window` trajectories lies within
/// `tolerance` of the target. Without convergence the best window seen is
/// returned with `converged == false`.
TuneResult tune_acceptance(const TargetModel& target, const ChainConfig& config,
                           double target_rate, const TuneOptions& options = {});

}  // namespace biasctl
