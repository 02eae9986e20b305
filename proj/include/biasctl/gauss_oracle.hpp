#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace biasctl {

/// Eigenvalues {sigma_i^2} of a Gaussian target's covariance.
class GaussSpectrum {
 public:
  GaussSpectrum() = default;
  explicit GaussSpectrum(Eigen::VectorXd eigenvalues);

  const Eigen::VectorXd& eigenvalues() const { return values_; }
  std::size_t dim() const { return static_cast<std::size_t>(values_.size()); }
  double min() const { return values_.minCoeff(); }
  double max() const { return values_.maxCoeff(); }
  /// Velocity Verlet is stable iff eps < 2 min sigma_i.
  bool stable(double eps) const;
  double max_stable_step() const;

 private:
  Eigen::VectorXd values_;
};

/// Step size outside the Verlet stability region of some eigen-direction.
class UnstableStepError : public std::domain_error {
 public:
  UnstableStepError(double eps, double eigenvalue);
  double eps;
  double eigenvalue;
};

/// Argument outside the region where the bias bounds are established.
class OutOfRegionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Per-direction functions of y = eps^2 / sigma^2, all defined on 0 <= y < 4.

/// Energy error variance of one direction: y^3 / (16 (1 - y/4)).
double energy_error_fn(double y);
/// Squared relative variance error: y^2 / (16 (1 - y/4)^2).
double bias_fn(double y);
/// Per-direction squared W2 divided by eps^2:
/// 2 (1 - y/8 - sqrt(1 - y/4)) / (y (1 - y/4)), evaluated in a
/// cancellation-free form.
double wasserstein_fn(double y);

/// Stationary eigenvalues sigma_i^2 / (1 - eps^2 / (4 sigma_i^2)).
GaussSpectrum stationary_spectrum(const GaussSpectrum& spectrum, double eps);

/// Closed-form energy error variance per dimension.
double eevpd_exact(const GaussSpectrum& spectrum, double eps);
/// Step size whose exact EEVPD equals `eevpd` (bisection on the stable range).
double step_size_for_eevpd(const GaussSpectrum& spectrum, double eevpd);
/// Exact asymptotic covariance error b^2_cov(Sigma, Sigma~).
double b2_exact(const GaussSpectrum& spectrum, double eps);
/// Exact squared W2 distance between target and stationary law.
double wasserstein2_gauss(const GaussSpectrum& spectrum, double eps);

/// Upper end of the convexity region of phi: 11 - 4 sqrt(7).
double phi_domain_max();
/// EEVPD below which the covariance bound holds.
inline constexpr double kPhiInvMax = 0.397;
/// EEVPD below which the Wasserstein bound holds: E(3) = 27/4.
inline constexpr double kPhiWInvMax = 6.75;
/// W(3) = 1/3: the argument range of phi_w.
inline constexpr double kPhiWDomainMax = 1.0 / 3.0;

/// phi(x) = 4 x^{3/2} / (1 + x^{1/2})^2 on 0 <= x < 11 - 4 sqrt 7.
double phi(double x);
/// Bisection inverse of phi, 0 <= v < 0.397.
double phi_inv(double v);

/// phi_W = E ∘ W^{-1} on 0 <= x < 1/3.
double phi_w(double x);
/// phi_W^{-1} = W ∘ E^{-1}, 0 <= v < 6.75.
double phi_w_inv(double v);

/// Inverse of W on [0, 3] by bisection.
double wasserstein_fn_inv(double w);
/// Inverse of E on [0, 3] by bisection.
double energy_error_fn_inv(double v);

/// True when EEVPD < 0.397 and every direction has bias_fn(y_i) < 11 - 4 sqrt 7,
/// where phi is convex. EEVPD < 0.397 alone does not guarantee the covariance bound on
/// spread-out spectra near the stability edge.
bool covariance_bound_certified(const GaussSpectrum& spectrum, double eps);
/// True when EEVPD < 6.75 and every direction has y_i <= 3, where phi_W is convex.
bool wasserstein_bound_certified(const GaussSpectrum& spectrum, double eps);

struct BoundReport {
  double eevpd = 0.0;
  double b2_bound = 0.0;
  double w2_bound_per_dim = 0.0;
  double exact_b2 = 0.0;
  double exact_w2_per_dim = 0.0;
  /// The bound is defined (EEVPD below 0.397 / 6.75).
  bool b2_bound_valid = false;
  bool w2_bound_valid = false;
  /// The bound is also guaranteed to hold (per-direction convexity).
  bool b2_bound_certified = false;
  bool w2_bound_certified = false;
};

/// Exact errors and their EEVPD-based upper bounds at one step size.
BoundReport bound_report(const GaussSpectrum& spectrum, double eps);

/// One Verlet step on N(0, sigma2) written as a 2x2 map of (x, u).
struct VerletMatrix {
  Eigen::Matrix2d A;
  double alpha = 1.0;  // (1 - y/4)^{-1/2}
  double sin_h = 0.0;  // sqrt(y) / alpha
  double cos_h = 1.0;
};
VerletMatrix verlet_matrix_1d(double sigma2, double eps);

/// Squared bias share of the squared error at the optimal step size.
constexpr double optimal_bias_fraction() { return 0.2; }
/// Minimiser of c_b eps^4 + c_v / eps: (c_v / (4 c_b))^{1/5}.
double optimal_eps(double c_v, double c_b);

}  // namespace biasctl
