#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "biasctl/targets.hpp"

namespace biasctl {

/// Streaming mean and covariance (Welford). In diagonal mode only the
/// per-coordinate variances are tracked, which keeps updates O(d).
class RunningMoments {
 public:
  RunningMoments() = default;
  explicit RunningMoments(std::size_t dim, bool diagonal = false);

  void update(ConstVectorRef x);
  void merge(const RunningMoments& other);
  void reset();

  std::uint64_t count() const { return n_; }
  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  bool diagonal() const { return diagonal_; }
  const Vector& mean() const { return mean_; }

  /// Population covariance (divides by n). Throws in diagonal mode.
  Matrix covariance() const;
  /// Per-coordinate population variances.
  Vector variance() const;
  /// E[x_i^2] estimates.
  Vector second_moment() const;
  /// Uncentered (1/n) sum x x^T. Throws in diagonal mode.
  Matrix second_moment_matrix() const;

 private:
  std::uint64_t n_ = 0;
  bool diagonal_ = false;
  Vector mean_;
  Matrix comoment_;   // lower triangle valid
  Vector codiag_;     // diagonal mode
};

/// Dimension above which b2_cov falls back to the diagonal form.
inline constexpr std::size_t kDiagonalThreshold = 512;

/// (1/d) Tr[(I - Sp^{-1} Sq)^2] via a Cholesky factor of the truth.
double b2_cov(const Matrix& truth, const Matrix& estimate);
/// (1/d) sum ((Sp_ii - Sq_ii) / Sp_ii)^2.
double b2_cov_diag(ConstVectorRef truth_var, ConstVectorRef estimate_var);
/// Scores a moment accumulator against a ground truth, using the full form
/// when both carry a dense matrix and d <= threshold.
double b2_cov(const GroundTruth& truth, const RunningMoments& moments,
              std::size_t diagonal_threshold = kDiagonalThreshold);

/// Per-dimension (E_est[x_i^2] - E[x_i^2])^2 / Var[x_i^2].
Vector b2_per_dim(const GroundTruth& truth, ConstVectorRef second_moment_estimate);
double b2_avg(const GroundTruth& truth, ConstVectorRef second_moment_estimate);
double b2_avg(const GroundTruth& truth, const RunningMoments& moments);

/// b2_cov before and after conjugating both matrices with A.
std::pair<double, double> basis_change_check(const Matrix& truth, const Matrix& estimate, const Matrix& A);

struct ErrorReport {
  double b2_cov = 0.0;
  double b2_avg = 0.0;
  Vector per_dim;
  std::uint64_t grad_calls = 0;
  double divergent_fraction = 0.0;
};

ErrorReport make_error_report(const GroundTruth& truth, const RunningMoments& moments,
                              std::uint64_t grad_calls, double divergent_fraction);

/// Finite-n integrated autocorrelation time for rho_k = rho^k.
double tau_int_gauss(double rho, std::uint64_t n);

/// Normalised autocorrelation rho_0..rho_max_lag (population estimator).
std::vector<double> autocorrelation(const std::vector<double>& x, std::size_t max_lag);
/// Integrated autocorrelation time with Geyer's initial positive sequence.
double integrated_autocorr_time(const std::vector<double>& x);
double effective_sample_size(const std::vector<double>& x);
/// Standard error of the mean from non-overlapping batch means.
double batch_means_se(const std::vector<double>& x, std::size_t n_batches = 50);

using Curve = std::vector<double>;

/// Pointwise median across chains; all curves must share a length.
Curve median_curve(const std::vector<Curve>& curves);

struct Crossing {
  std::uint64_t grad_calls = 0;
  bool censored = false;
};

/// First grid point where the curve drops strictly below `threshold`; the
/// last grid value with censored = true when it never does.
Crossing grads_to_threshold(const std::vector<std::uint64_t>& grid, const Curve& curve, double threshold);

struct BootstrapResult {
  Crossing point;
  double std_dev = 0.0;
  /// std_dev / point estimate.
  double relative_error = 0.0;
  std::size_t censored_resamples = 0;
  std::size_t resamples = 0;
};

inline constexpr std::size_t kDefaultBootstrapResamples = 100;

/// Resamples chains with replacement, recomputes the median-curve crossing
/// and reports the spread (population standard deviation).
BootstrapResult bootstrap_error(const std::vector<Curve>& curves, const std::vector<std::uint64_t>& grid,
                                double threshold, std::size_t resamples = kDefaultBootstrapResamples,
                                std::uint64_t seed = 0);

/// Same quantity over all n^n ordered resamples; for small chain counts.
BootstrapResult bootstrap_error_exhaustive(const std::vector<Curve>& curves,
                                           const std::vector<std::uint64_t>& grid, double threshold);

/// Checkpoint grid: `points` step counts, uniform (every ceil(total/points)
/// steps) or geometric from `first` to total.
std::vector<std::uint64_t> checkpoint_grid(std::uint64_t total, std::size_t points = 512,
                                           bool geometric = false, std::uint64_t first = 1);

}  // namespace biasctl
