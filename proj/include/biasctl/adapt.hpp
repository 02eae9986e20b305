#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "biasctl/integrate.hpp"
#include "biasctl/sampler_kind.hpp"

namespace biasctl {

/// Streaming estimate of the energy error variance per dimension,
/// Var[ΔH] / d, over one-step energy errors of a stationary chain.
class EevpdAccumulator {
 public:
  explicit EevpdAccumulator(std::size_t dim = 1);

  /// Throws std::invalid_argument on non-finite input; divergent steps are
  /// the caller's business.
  void update(double delta_h);
  void merge(const EevpdAccumulator& other);

  std::uint64_t count() const { return n_; }
  std::size_t dim() const { return dim_; }
  double mean() const { return mean_; }
  double mean_square() const { return n_ ? m2_ / static_cast<double>(n_) + mean_ * mean_ : 0.0; }
  /// Population variance of ΔH, clamped at zero.
  double variance() const;
  /// Var[ΔH] / d.
  double estimate() const { return variance() / static_cast<double>(dim_); }

 private:
  std::uint64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  std::size_t dim_;
};

/// Predicted optimal step size from a single observation is xi^{-1/6}, with
/// xi = ΔH^2 / (d alpha eps^6).
double predictor_xi(double delta_h, double eps, double alpha, std::size_t d);

/// Log-normal trust penalty exp(-(log xi)^2 / (2 sigma^2)); zero at xi = 0.
double weight(double xi, double sigma_xi);

/// Forgetting factor with effective memory n: (n - 1) / (n + 1).
constexpr double forgetting_factor(double n) { return (n - 1.0) / (n + 1.0); }

inline constexpr double kDefaultSigmaXi = 1.5;
inline constexpr double kDefaultForgetN = 50.0;

/// State of the EEVPD-targeting step-size controller.
///
/// A and B are the exponentially forgotten, trust-weighted sums of the
/// predictor and of the weights; the published step size is (A/B)^{-1/6}.
/// The trust weight is evaluated on the ratio between the current and the
/// predicted step size, (xi eps^6)^{1/6}, so that a step already on target
/// gets full weight whatever the absolute scale of the problem.
struct AdapterState {
  double A = 0.0;
  double B = 0.0;
  double gamma = forgetting_factor(kDefaultForgetN);
  double sigma_xi = kDefaultSigmaXi;
  double alpha = 1e-3;
  double eps = 0.1;
  std::uint64_t updates = 0;
  std::uint32_t consecutive_halvings = 0;
  std::uint32_t total_halvings = 0;

  static AdapterState initial(double alpha, double eps0, double sigma_xi = kDefaultSigmaXi,
                              double forget_n = kDefaultForgetN);

  /// One controller update with an observed one-step energy error.
  void update(double delta_h, std::size_t d);
  /// Divergent step: halve eps and rescale A so the running estimate agrees.
  void on_divergence();
};

/// Functional form of AdapterState::update. A non-finite ΔH takes the
/// divergence branch.
AdapterState adapter_step(AdapterState state, double delta_h, std::size_t d);

/// Default initial step size 0.5 d^{-1/4}.
double default_initial_step_size(std::size_t d);

/// Relative-RMSE tolerance, the matching bias tolerance and target EEVPD.
struct BiasBudget {
  double rmse_tolerance = 0.0;
  double bias_tolerance = 0.0;
  double eevpd_target = 0.0;
};

/// Bias gets one fifth of the squared error budget: b = rmse / sqrt(5),
/// EEVPD = phi(b^2).
BiasBudget budget_from_rmse(double rmse_tol);
BiasBudget budget_from_bias(double bias_tol);
BiasBudget budget_from_eevpd(double eevpd);

struct AdaptationOptions {
  double decoherence_length = 1.0;
  double sigma_xi = kDefaultSigmaXi;
  double forget_n = kDefaultForgetN;
  std::uint64_t seed = 0;
  std::uint64_t chain_id = 0;
  std::uint32_t max_consecutive_halvings = 20;
  double divergence_threshold = kDefaultDivergenceThreshold;
  bool record_trace = false;
  std::optional<Vector> initial_position;
};

struct AdaptationResult {
  /// Geometric mean of the step size over the final quarter of the run.
  /// The live value jitters by a few percent (about 50 steps of memory),
  /// which the sixth power in EEVPD amplifies.
  double eps_final = 0.0;
  /// Controller output after the last step.
  double eps_last = 0.0;
  PhaseState state;
  AdapterState adapter;
  std::uint64_t grad_calls = 0;
  std::uint64_t divergences = 0;
  /// Per-step (eps used, ΔH) when record_trace is set.
  std::vector<double> eps_trace;
  std::vector<double> delta_h_trace;
};

class AdaptationDiverged : public std::runtime_error {
 public:
  AdaptationDiverged(const std::string& what, AdaptationResult partial)
      : std::runtime_error(what), partial(std::move(partial)) {}
  /// State and traces up to the aborting step.
  AdaptationResult partial;
};

/// Runs an unadjusted chain for n_steps with the live controller and returns
/// the tuned step size together with the final chain state, which serves as
/// the warm start (and burn-in) for sampling.
AdaptationResult run_adaptation(const TargetModel& target, SamplerKind kind, double alpha,
                                double init_eps, std::size_t n_steps,
                                const AdaptationOptions& options = {});

}  // namespace biasctl
