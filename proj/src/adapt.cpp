#include "biasctl/adapt.hpp"

#include <cmath>
#include <string>

#include "biasctl/gauss_oracle.hpp"
#include "biasctl/samplers.hpp"

namespace biasctl {

EevpdAccumulator::EevpdAccumulator(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw std::invalid_argument("EevpdAccumulator: dimension must be positive");
}

void EevpdAccumulator::update(double delta_h) {
  if (!std::isfinite(delta_h)) throw std::invalid_argument("EevpdAccumulator: non-finite energy error");
  ++n_;
  const double delta = delta_h - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (delta_h - mean_);
}

void EevpdAccumulator::merge(const EevpdAccumulator& other) {
  if (other.dim_ != dim_) throw std::invalid_argument("EevpdAccumulator: dimension mismatch");
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(n_), nb = static_cast<double>(other.n_);
  const double delta = other.mean_ - mean_;
  const double n = na + nb;
  mean_ += delta * nb / n;
  m2_ += other.m2_ + delta * delta * na * nb / n;
  n_ += other.n_;
}

double EevpdAccumulator::variance() const {
  if (n_ == 0) return 0.0;
  return std::max(0.0, m2_ / static_cast<double>(n_));
}

double predictor_xi(double delta_h, double eps, double alpha, std::size_t d) {
  if (!(eps > 0.0)) throw std::invalid_argument("predictor_xi: step size must be positive");
  if (!(alpha > 0.0)) throw std::invalid_argument("predictor_xi: target EEVPD must be positive");
  if (d == 0) throw std::invalid_argument("predictor_xi: dimension must be positive");
  const double e3 = eps * eps * eps;
  return delta_h * delta_h / (static_cast<double>(d) * alpha * e3 * e3);
}

double weight(double xi, double sigma_xi) {
  if (!(sigma_xi > 0.0)) throw std::invalid_argument("weight: sigma must be positive");
  if (std::isnan(xi) || xi < 0.0) throw std::invalid_argument("weight: xi must be non-negative");
  if (xi == 0.0 || std::isinf(xi)) return 0.0;
  const double l = std::log(xi);
  return std::exp(-l * l / (2.0 * sigma_xi * sigma_xi));
}

AdapterState AdapterState::initial(double alpha, double eps0, double sigma_xi, double forget_n) {
  if (!(alpha > 0.0)) throw std::invalid_argument("adapter: target EEVPD must be positive");
  if (!(eps0 > 0.0) || !std::isfinite(eps0)) throw std::invalid_argument("adapter: initial step must be positive");
  if (!(sigma_xi > 0.0)) throw std::invalid_argument("adapter: sigma_xi must be positive");
  if (!(forget_n >= 1.0)) throw std::invalid_argument("adapter: forgetting length must be at least 1");
  AdapterState s;
  s.alpha = alpha;
  s.eps = eps0;
  s.sigma_xi = sigma_xi;
  s.gamma = forgetting_factor(forget_n);
  return s;
}

void AdapterState::update(double delta_h, std::size_t d) {
  if (!std::isfinite(delta_h)) {
    on_divergence();
    return;
  }
  const double xi = predictor_xi(delta_h, eps, alpha, d);
  // (xi eps^6)^{1/6} = current step over predicted step.
  const double ratio = delta_h * delta_h / (static_cast<double>(d) * alpha);
  const double w = ratio > 0.0 ? weight(std::pow(ratio, 1.0 / 6.0), sigma_xi) : 0.0;
  A = gamma * A + xi * w;
  B = gamma * B + w;
  if (A > 0.0 && B > 0.0 && std::isfinite(A)) eps = std::pow(A / B, -1.0 / 6.0);
  consecutive_halvings = 0;
  ++updates;
}

void AdapterState::on_divergence() {
  eps *= 0.5;
  A *= 64.0;
  ++consecutive_halvings;
  ++total_halvings;
}

AdapterState adapter_step(AdapterState state, double delta_h, std::size_t d) {
  state.update(delta_h, d);
  return state;
}

double default_initial_step_size(std::size_t d) {
  if (d == 0) throw std::invalid_argument("dimension must be positive");
  return 0.5 * std::pow(static_cast<double>(d), -0.25);
}

BiasBudget budget_from_bias(double bias_tol) {
  if (!(bias_tol > 0.0)) throw std::invalid_argument("bias tolerance must be positive");
  BiasBudget b;
  b.bias_tolerance = bias_tol;
  b.rmse_tolerance = bias_tol * std::sqrt(1.0 / optimal_bias_fraction());
  b.eevpd_target = phi(bias_tol * bias_tol);
  return b;
}

BiasBudget budget_from_rmse(double rmse_tol) {
  if (!(rmse_tol > 0.0)) throw std::invalid_argument("RMSE tolerance must be positive");
  BiasBudget b = budget_from_bias(rmse_tol * std::sqrt(optimal_bias_fraction()));
  b.rmse_tolerance = rmse_tol;
  return b;
}

BiasBudget budget_from_eevpd(double eevpd) {
  if (!(eevpd > 0.0)) throw std::invalid_argument("EEVPD target must be positive");
  BiasBudget b;
  b.eevpd_target = eevpd;
  b.bias_tolerance = std::sqrt(phi_inv(eevpd));
  b.rmse_tolerance = b.bias_tolerance * std::sqrt(1.0 / optimal_bias_fraction());
  return b;
}

AdaptationResult run_adaptation(const TargetModel& target, SamplerKind kind, double alpha,
                                double init_eps, std::size_t n_steps, const AdaptationOptions& options) {
  if (is_adjusted(kind)) throw std::invalid_argument("run_adaptation: unadjusted kind required");
  if (n_steps == 0) throw std::invalid_argument("run_adaptation: need at least one step");
  ChainConfig cfg;
  cfg.kind = kind;
  cfg.step_size = init_eps;
  cfg.decoherence_length = options.decoherence_length;
  cfg.total_steps = n_steps;
  cfg.seed = options.seed;
  cfg.chain_id = options.chain_id;
  cfg.divergence_threshold = options.divergence_threshold;

  AdaptationResult out;
  out.adapter = AdapterState::initial(alpha, init_eps, options.sigma_xi, options.forget_n);
  Chain chain = options.initial_position ? Chain(target, cfg, *options.initial_position)
                                         : Chain(target, cfg);
  const std::size_t d = target.dim();
  const std::size_t tail_start = n_steps - n_steps / 4;
  double log_eps_sum = 0.0;
  std::size_t tail = 0;
  auto finish = [&] {
    out.eps_last = out.adapter.eps;
    out.eps_final = tail ? std::exp(log_eps_sum / static_cast<double>(tail)) : out.adapter.eps;
    out.state = chain.state();
    out.grad_calls = chain.grad_calls();
    out.divergences = chain.stats().divergences;
  };
  if (options.record_trace) {
    out.eps_trace.reserve(n_steps);
    out.delta_h_trace.reserve(n_steps);
  }
  for (std::size_t i = 0; i < n_steps; ++i) {
    const StepRecord& rec = chain.step();
    if (options.record_trace) {
      out.eps_trace.push_back(rec.step_size);
      out.delta_h_trace.push_back(rec.delta_h);
    }
    if (i >= tail_start) {
      log_eps_sum += std::log(rec.step_size);
      ++tail;
    }
    if (rec.divergent) {
      out.adapter.on_divergence();
      if (out.adapter.consecutive_halvings > options.max_consecutive_halvings) {
        finish();
        throw AdaptationDiverged("step size halved " + std::to_string(out.adapter.consecutive_halvings) +
                                     " times in a row on " + target.name() + "; last eps " +
                                     std::to_string(out.adapter.eps),
                                 std::move(out));
      }
    } else {
      out.adapter.update(rec.delta_h, d);
    }
    chain.set_step_size(out.adapter.eps);
  }
  finish();
  return out;
}

}  // namespace biasctl
