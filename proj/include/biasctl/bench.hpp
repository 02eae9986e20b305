#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "biasctl/adapt.hpp"
#include "biasctl/gauss_oracle.hpp"
#include "biasctl/metrics.hpp"
#include "biasctl/samplers.hpp"

namespace biasctl {

/// 64-bit FNV-1a of a string, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// Runs f(0..n-1) on `threads` workers that pull indices from a shared
/// counter. Callers write results into slots keyed by index, so the outcome
/// does not depend on scheduling. The first exception is rethrown.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned count = std::min<std::size_t>(threads, n);
  pool.reserve(count);
  for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// How a chain is tuned before sampling.
struct SamplerSetup {
  SamplerKind kind = SamplerKind::ulmc;
  double decoherence_length = 1.0;
  /// Target EEVPD for unadjusted kinds.
  double eevpd = 3.28e-4;
  /// Target acceptance for adjusted kinds.
  double accept_rate = 0.8;
  std::size_t adapt_steps = 2000;
  double sigma_xi = kDefaultSigmaXi;
  double forget_n = kDefaultForgetN;
  /// Bypasses tuning when set.
  std::optional<double> fixed_step_size;
  std::optional<double> initial_step_size;

  std::string label() const;
};

/// Outcome of the tuning phase; its final state starts the sampling chain.
struct WarmStart {
  PhaseState state;
  double step_size = 0.0;
  std::uint64_t tuning_grad_calls = 0;
  bool tuned = true;
};

/// Tunes one chain. The tuning stream is distinct from the sampling stream
/// of the same (seed, chain_id).
WarmStart prepare_chain(const TargetModel& target, const SamplerSetup& setup, std::uint64_t seed,
                        std::uint64_t chain_id);

/// Covariance spectrum of a GaussTarget; empty for other models.
std::optional<GaussSpectrum> gaussian_spectrum(const TargetModel& target);

/// Stream id used by the sampling phase of chain `chain_id`.
constexpr std::uint64_t sampling_stream(std::uint64_t chain_id) { return 2 * chain_id + 1; }
constexpr std::uint64_t tuning_stream(std::uint64_t chain_id) { return 2 * chain_id; }

// Bias vs EEVPD ------------------------------------------------------------

struct BiasCurveOptions {
  SamplerKind kind = SamplerKind::uhmc;
  double decoherence_length = 1.0;
  std::vector<double> eps_grid;
  /// Gradient calls per chain and step size, burn-in included.
  std::uint64_t budget = 1'000'000;
  std::uint64_t burn_in = 10'000;
  std::size_t chains = 1;
  /// Moments are updated on every `thin`-th sample.
  std::size_t thin = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// Relative gap between last-quarter and last-half b2_cov below which a
  /// point counts as converged.
  double convergence_tolerance = 0.2;
  double divergence_flag = 1e-3;
};

struct BiasChainRow {
  std::uint64_t chain_id = 0;
  double eevpd = 0.0;
  ErrorReport report;
};

struct BiasCurvePoint {
  double eps = 0.0;
  double eevpd = 0.0;
  double b2_cov = 0.0;
  double b2_cov_half = 0.0;
  double b2_cov_quarter = 0.0;
  double b2_avg = 0.0;
  bool converged = false;
  double divergent_fraction = 0.0;
  bool divergence_flagged = false;
  std::uint64_t grad_calls = 0;
  /// phi^{-1}(eevpd) when eevpd < 0.397.
  std::optional<double> bound;
  /// Closed-form values for Gaussian targets.
  std::optional<double> eevpd_exact;
  std::optional<double> b2_exact;
  std::vector<BiasChainRow> chains;
};

std::vector<BiasCurvePoint> run_bias_curve(const TargetModel& target, const BiasCurveOptions& options);

// Scaling with dimension ---------------------------------------------------

struct ScalingOptions {
  std::vector<std::size_t> copies;
  std::vector<SamplerSetup> samplers;
  double rmse_tolerance = 0.1;
  std::size_t chains = 128;
  std::uint64_t budget = 20'000;
  std::size_t grid_points = 256;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct ScalingRow {
  std::size_t copies = 0;
  std::size_t dim = 0;
  std::string sampler;
  double mean_step_size = 0.0;
  Crossing crossing;
  double final_rmse = 0.0;
  std::uint64_t mean_tuning_grad_calls = 0;
};

struct ScalingFit {
  std::string sampler;
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  std::vector<ScalingFit> fits;
};

/// Gradient calls (sampling phase) until the relative RMSE across chains of
/// the running estimate of E[x_1^2] drops below the tolerance, for every
/// product size K and sampler.
ScalingResult run_scaling(TargetPtr block, const ScalingOptions& options);

/// Least-squares slope of log y against log x.
ScalingFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

// Grads to threshold -------------------------------------------------------

enum class ErrorMetric { b2_avg, b2_cov };

struct ThresholdOptions {
  std::vector<SamplerSetup> samplers;
  ErrorMetric metric = ErrorMetric::b2_avg;
  double threshold = 0.01;
  std::size_t chains = 128;
  std::uint64_t budget = 100'000;
  std::size_t grid_points = 256;
  std::size_t bootstrap_resamples = kDefaultBootstrapResamples;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct ThresholdEntry {
  SamplerSetup setup;
  double mean_step_size = 0.0;
  Crossing crossing;
  BootstrapResult bootstrap;
  Curve median;
  std::vector<ErrorReport> final_reports;
  std::size_t untuned_chains = 0;
};

struct ThresholdResult {
  std::vector<std::uint64_t> grid;
  std::vector<ThresholdEntry> entries;
  /// Index into entries of the cheapest setup per sampler kind.
  std::vector<std::size_t> best_per_kind() const;
};

ThresholdResult run_grads_to_threshold(const TargetModel& target, const ThresholdOptions& options);

// Adaptation trace ---------------------------------------------------------

struct AdaptTraceOptions {
  SamplerKind kind = SamplerKind::ulmc;
  double alpha = 1e-3;
  std::size_t steps = 10'000;
  double decoherence_length = 1.0;
  double sigma_xi = kDefaultSigmaXi;
  double forget_n = kDefaultForgetN;
  std::optional<double> initial_step_size;
  std::uint64_t seed = 0;
  std::uint64_t chain_id = 0;
};

struct AdaptTrace {
  std::vector<double> eps;
  std::vector<double> delta_h;
  double alpha = 0.0;
  double eps_final = 0.0;
  /// Var[ΔH]/d over the final quarter of the run.
  double final_quarter_eevpd = 0.0;
  std::uint64_t divergences = 0;
  std::size_t dim = 0;
  /// Set when the controller gave up after repeated halvings; the traces
  /// stop at that step.
  bool aborted = false;
  std::string abort_reason;
};

AdaptTrace run_adaptation_trace(const TargetModel& target, const AdaptTraceOptions& options);

}  // namespace biasctl
