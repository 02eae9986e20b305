#include "biasctl/samplers.hpp"

#include <cmath>
#include <deque>
#include <limits>

namespace biasctl {

std::size_t ChainConfig::trajectory_steps(double eps) const {
  const double n = std::round(decoherence_length / eps);
  if (!(n >= 1.0)) return 1;
  if (n > 1e9) return static_cast<std::size_t>(1e9);
  return static_cast<std::size_t>(n);
}

void ChainConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size))
    throw std::invalid_argument("step size must be positive and finite");
  if (!(decoherence_length > 0.0) || !std::isfinite(decoherence_length))
    throw std::invalid_argument("decoherence length must be positive and finite");
  if (!(divergence_threshold > 0.0)) throw std::invalid_argument("divergence threshold must be positive");
  if (burn_in > 0 && burn_in >= total_steps) throw std::invalid_argument("burn-in must be shorter than the run");
}

namespace {

Vector draw_start(const TargetModel& target, ChainRng& rng) {
  return rng.normal_vector(static_cast<Eigen::Index>(target.dim()));
}

}  // namespace

Chain::Chain(const TargetModel& target, const ChainConfig& config)
    : target_(target), config_(config), rng_(config.seed, config.chain_id) {
  config_.validate();
  Vector x0 = draw_start(target, rng_);
  Vector u0 = draw_start(target, rng_);
  state_ = make_state(target, std::move(x0), std::move(u0));
  grad_calls_ = 1;
  eps_ = pending_eps_ = config_.step_size;
  noise_a_.resize(state_.x.size());
  noise_b_.resize(state_.x.size());
}

Chain::Chain(const TargetModel& target, const ChainConfig& config, Vector x0)
    : target_(target), config_(config), rng_(config.seed, config.chain_id) {
  config_.validate();
  if (x0.size() != static_cast<Eigen::Index>(target.dim()))
    throw std::invalid_argument("Chain: initial position has wrong dimension");
  Vector u0 = draw_start(target, rng_);
  state_ = make_state(target, std::move(x0), std::move(u0));
  grad_calls_ = 1;
  eps_ = pending_eps_ = config_.step_size;
  noise_a_.resize(state_.x.size());
  noise_b_.resize(state_.x.size());
}

Chain::Chain(const TargetModel& target, const ChainConfig& config, PhaseState state)
    : target_(target), config_(config), rng_(config.seed, config.chain_id), state_(std::move(state)) {
  config_.validate();
  if (state_.dim() != target.dim()) throw std::invalid_argument("Chain: warm state has wrong dimension");
  if (!state_.has_grad) {
    state_.grad.resize(state_.x.size());
    state_.potential = target.value_and_gradient(state_.x, state_.grad);
    state_.has_grad = true;
    grad_calls_ = 1;
  }
  if (state_.u.size() != state_.x.size()) state_.u = draw_start(target, rng_);
  eps_ = pending_eps_ = config_.step_size;
  noise_a_.resize(state_.x.size());
  noise_b_.resize(state_.x.size());
}

void Chain::set_step_size(double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw std::invalid_argument("step size must be positive and finite");
  pending_eps_ = eps;
  if (!is_adjusted(config_.kind) || pos_in_traj_ == 0) eps_ = eps;
}

void Chain::publish(double delta_h, bool divergent, bool sample) {
  record_.position = std::span<const double>(state_.x.data(), static_cast<std::size_t>(state_.x.size()));
  record_.delta_h = delta_h;
  record_.step_size = eps_;
  record_.grad_calls_cumulative = grad_calls_;
  record_.divergent = divergent;
  record_.sample = sample;
}

void Chain::start_trajectory() {
  eps_ = pending_eps_;
  traj_eps_ = eps_;
  rng_.fill_normal(state_.u);
  traj_len_ = config_.trajectory_steps(eps_);
  pos_in_traj_ = 0;
  traj_dh_ = 0.0;
  traj_divergent_ = false;
  need_refresh_ = false;
  if (is_adjusted(config_.kind)) {
    traj_start_ = state_;
    traj_h0_ = energy(state_);
  }
}

const StepRecord& Chain::step() {
  record_.accepted.reset();
  record_.accept_prob.reset();
  switch (config_.kind) {
    case SamplerKind::uhmc: step_uhmc(); break;
    case SamplerKind::ulmc: step_ulmc(); break;
    case SamplerKind::ahmc: step_ahmc(); break;
    case SamplerKind::almc: step_almc(); break;
  }
  return record_;
}

void Chain::step_uhmc() {
  if (need_refresh_ || pos_in_traj_ == 0) start_trajectory();
  backup_ = state_;
  bool div = false;
  const double dh = verlet_step_inplace(state_, target_, eps_, config_.divergence_threshold, div);
  ++grad_calls_;
  ++stats_.verlet_steps;
  if (div) {
    state_ = backup_;
    ++stats_.divergences;
    pos_in_traj_ = 0;
    need_refresh_ = true;
    publish(dh, true, false);
    return;
  }
  ++pos_in_traj_;
  const bool end = pos_in_traj_ >= traj_len_;
  if (end) {
    pos_in_traj_ = 0;
    ++stats_.trajectories;
  }
  publish(dh, false, end);
}

void Chain::step_ulmc() {
  rng_.fill_normal(noise_a_);
  rng_.fill_normal(noise_b_);
  backup_ = state_;
  ou_refresh_inplace(state_.u, 0.5 * eps_, config_.decoherence_length, noise_a_);
  bool div = false;
  const double dh = verlet_step_inplace(state_, target_, eps_, config_.divergence_threshold, div);
  ++grad_calls_;
  ++stats_.verlet_steps;
  if (div) {
    state_ = backup_;
    rng_.fill_normal(state_.u);
    ++stats_.divergences;
    publish(dh, true, false);
    return;
  }
  ou_refresh_inplace(state_.u, 0.5 * eps_, config_.decoherence_length, noise_b_);
  publish(dh, false, true);
}

void Chain::finish_adjusted(double delta_h_traj, bool divergent) {
  double prob = 0.0;
  if (!divergent && std::isfinite(delta_h_traj)) prob = delta_h_traj <= 0.0 ? 1.0 : std::exp(-delta_h_traj);
  const bool accept = rng_.uniform() < prob;
  if (!accept) {
    state_ = traj_start_;
    state_.u = -state_.u;
  } else {
    ++stats_.accepted;
  }
  ++stats_.trajectories;
  stats_.accept_prob_sum += prob;
  pos_in_traj_ = 0;
  record_.accepted = accept;
  record_.accept_prob = prob;
}

void Chain::step_ahmc() {
  if (pos_in_traj_ == 0) start_trajectory();
  bool div = false;
  const double dh = verlet_step_inplace(state_, target_, eps_, config_.divergence_threshold, div);
  ++grad_calls_;
  ++stats_.verlet_steps;
  ++pos_in_traj_;
  if (div) ++stats_.divergences;
  const bool end = div || pos_in_traj_ >= traj_len_;
  if (end) finish_adjusted(div ? std::numeric_limits<double>::infinity() : energy(state_) - traj_h0_, div);
  publish(dh, div, end);
}

void Chain::step_almc() {
  if (pos_in_traj_ == 0) start_trajectory();
  rng_.fill_normal(noise_a_);
  rng_.fill_normal(noise_b_);
  ou_refresh_inplace(state_.u, 0.5 * eps_, config_.decoherence_length, noise_a_);
  bool div = false;
  const double dh = verlet_step_inplace(state_, target_, eps_, config_.divergence_threshold, div);
  ++grad_calls_;
  ++stats_.verlet_steps;
  ++pos_in_traj_;
  if (div) {
    ++stats_.divergences;
  } else {
    ou_refresh_inplace(state_.u, 0.5 * eps_, config_.decoherence_length, noise_b_);
    traj_dh_ += dh;
  }
  const bool end = div || pos_in_traj_ >= traj_len_;
  if (end) finish_adjusted(div ? std::numeric_limits<double>::infinity() : traj_dh_, div);
  publish(dh, div, end);
}

RunSummary run_chain(const TargetModel& target, const ChainConfig& config, StepSizeSource source,
                     const StepSink& sink, std::optional<PhaseState> init) {
  AdapterState* adapter = nullptr;
  ChainConfig cfg = config;
  if (auto* a = std::get_if<AdapterState*>(&source)) {
    adapter = *a;
    if (!adapter) throw std::invalid_argument("run_chain: null adapter");
    if (is_adjusted(cfg.kind))
      throw std::invalid_argument("run_chain: live step-size control is for unadjusted kinds only");
    cfg.step_size = adapter->eps;
  } else {
    cfg.step_size = std::get<double>(source);
  }
  Chain chain = init ? Chain(target, cfg, std::move(*init)) : Chain(target, cfg);
  const std::size_t d = target.dim();
  for (std::size_t i = 0; i < cfg.total_steps; ++i) {
    const StepRecord& rec = chain.step();
    if (adapter) {
      if (rec.divergent)
        adapter->on_divergence();
      else
        adapter->update(rec.delta_h, d);
      chain.set_step_size(adapter->eps);
    }
    if (sink && i >= cfg.burn_in) sink(rec);
  }
  RunSummary out;
  out.final_state = chain.state();
  out.stats = chain.stats();
  out.final_step_size = chain.step_size();
  out.grad_calls = chain.grad_calls();
  return out;
}

namespace {

ChainConfig with_kind(ChainConfig c, SamplerKind k) {
  c.kind = k;
  return c;
}

}  // namespace

RunSummary run_uhmc(const TargetModel& target, const ChainConfig& config, StepSizeSource source,
                    const StepSink& sink, std::optional<PhaseState> init) {
  return run_chain(target, with_kind(config, SamplerKind::uhmc), source, sink, std::move(init));
}

RunSummary run_ulmc(const TargetModel& target, const ChainConfig& config, StepSizeSource source,
                    const StepSink& sink, std::optional<PhaseState> init) {
  return run_chain(target, with_kind(config, SamplerKind::ulmc), source, sink, std::move(init));
}

RunSummary run_ahmc(const TargetModel& target, const ChainConfig& config, const StepSink& sink,
                    std::optional<PhaseState> init) {
  return run_chain(target, with_kind(config, SamplerKind::ahmc), config.step_size, sink, std::move(init));
}

RunSummary run_almc(const TargetModel& target, const ChainConfig& config, const StepSink& sink,
                    std::optional<PhaseState> init) {
  return run_chain(target, with_kind(config, SamplerKind::almc), config.step_size, sink, std::move(init));
}

TuneResult tune_acceptance(const TargetModel& target, const ChainConfig& config, double target_rate,
                           const TuneOptions& options) {
  if (!is_adjusted(config.kind)) throw std::invalid_argument("tune_acceptance: adjusted kind required");
  if (!(target_rate > 0.0 && target_rate < 1.0))
    throw std::invalid_argument("tune_acceptance: target rate must lie in (0, 1)");
  if (options.window == 0) throw std::invalid_argument("tune_acceptance: empty window");

  Chain chain = options.initial_position ? Chain(target, config, *options.initial_position)
                                         : Chain(target, config);
  double log_eps = std::log(config.step_size);
  std::deque<std::pair<double, double>> window;  // (accept prob, log eps used)
  double sum_a = 0.0, sum_le = 0.0;
  double best_gap = std::numeric_limits<double>::infinity();
  double best_eps = config.step_size, best_acc = 0.0;
  std::uint64_t t = 0;

  TuneResult out;
  while (t < options.max_trajectories) {
    const StepRecord& rec = chain.step();
    if (!rec.accept_prob) continue;
    ++t;
    const double a = *rec.accept_prob;
    const double used = std::log(rec.step_size);
    window.emplace_back(a, used);
    sum_a += a;
    sum_le += used;
    if (window.size() > options.window) {
      sum_a -= window.front().first;
      sum_le -= window.front().second;
      window.pop_front();
    }
    const double eta = std::pow(static_cast<double>(t) + 10.0, -0.6);
    log_eps += eta * (a - target_rate);
    log_eps = std::min(log_eps, std::log(1e6));
    chain.set_step_size(std::exp(log_eps));

    if (window.size() == options.window) {
      const double n = static_cast<double>(window.size());
      const double mean_a = sum_a / n;
      const double gap = std::abs(mean_a - target_rate);
      if (gap < best_gap) {
        best_gap = gap;
        best_eps = std::exp(sum_le / n);
        best_acc = mean_a;
      }
      if (t >= options.min_trajectories && gap <= options.tolerance) {
        out.converged = true;
        out.step_size = std::exp(sum_le / n);
        out.window_acceptance = mean_a;
        break;
      }
    }
  }
  if (!out.converged) {
    out.step_size = best_eps;
    out.window_acceptance = best_acc;
  }
  out.trajectories = t;
  out.grad_calls = chain.grad_calls();
  out.state = chain.state();
  return out;
}

}  // namespace biasctl
