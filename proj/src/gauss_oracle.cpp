#include "biasctl/gauss_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace biasctl {

namespace {

constexpr int kBisectionIters = 200;

void check_y(double y) {
  if (!(y >= 0.0 && y < 4.0))
    throw OutOfRegionError("y = eps^2/sigma^2 must lie in [0, 4), got " + std::to_string(y));
}

// Bisection for an increasing f on [lo, hi]; stops at 1e-12 relative width.
template <class F>
double bisect_increasing(F f, double target, double lo, double hi) {
  for (int it = 0; it < kBisectionIters; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-12 * std::max(hi, 1e-300) * 1e-3) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

GaussSpectrum::GaussSpectrum(Eigen::VectorXd eigenvalues) : values_(std::move(eigenvalues)) {
  if (values_.size() == 0) throw std::invalid_argument("GaussSpectrum: empty");
  if ((values_.array() <= 0.0).any() || !values_.allFinite())
    throw std::invalid_argument("GaussSpectrum: eigenvalues must be positive and finite");
}

bool GaussSpectrum::stable(double eps) const { return eps >= 0.0 && eps < max_stable_step(); }

double GaussSpectrum::max_stable_step() const { return 2.0 * std::sqrt(min()); }

UnstableStepError::UnstableStepError(double e, double ev)
    : std::domain_error([&] {
        std::ostringstream os;
        os << "step size " << e << " is unstable for eigenvalue sigma^2 = " << ev
           << " (requires eps < 2 sigma = " << 2.0 * std::sqrt(ev) << ")";
        return os.str();
      }()),
      eps(e),
      eigenvalue(ev) {}

namespace {

void require_stable(const GaussSpectrum& spectrum, double eps) {
  if (!(eps >= 0.0)) throw std::invalid_argument("step size must be non-negative");
  const auto& v = spectrum.eigenvalues();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!(eps * eps < 4.0 * v[i])) throw UnstableStepError(eps, v[i]);
}

}  // namespace

double energy_error_fn(double y) {
  check_y(y);
  return y * y * y / (16.0 * (1.0 - 0.25 * y));
}

double bias_fn(double y) {
  check_y(y);
  const double s = 1.0 - 0.25 * y;
  return y * y / (16.0 * s * s);
}

double wasserstein_fn(double y) {
  check_y(y);
  // With s = sqrt(1 - y/4): 1 - y/8 - s = (1 - s)^2 / 2 and 1 - s = (y/4)/(1 + s).
  const double s = std::sqrt(1.0 - 0.25 * y);
  const double ps = 1.0 + s;
  return y / (16.0 * ps * ps * s * s);
}

GaussSpectrum stationary_spectrum(const GaussSpectrum& spectrum, double eps) {
  require_stable(spectrum, eps);
  const auto& v = spectrum.eigenvalues();
  Eigen::VectorXd out = v.array() / (1.0 - eps * eps / (4.0 * v.array()));
  return GaussSpectrum(std::move(out));
}

double eevpd_exact(const GaussSpectrum& spectrum, double eps) {
  require_stable(spectrum, eps);
  const auto& v = spectrum.eigenvalues();
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) total += energy_error_fn(eps * eps / v[i]);
  return total / static_cast<double>(v.size());
}

double b2_exact(const GaussSpectrum& spectrum, double eps) {
  require_stable(spectrum, eps);
  const auto& v = spectrum.eigenvalues();
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) total += bias_fn(eps * eps / v[i]);
  return total / static_cast<double>(v.size());
}

double wasserstein2_gauss(const GaussSpectrum& spectrum, double eps) {
  require_stable(spectrum, eps);
  const auto& v = spectrum.eigenvalues();
  double total = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) total += wasserstein_fn(eps * eps / v[i]);
  return eps * eps * total;
}

double phi_domain_max() { return 11.0 - 4.0 * std::sqrt(7.0); }

double phi(double x) {
  if (!(x >= 0.0 && x < phi_domain_max()))
    throw OutOfRegionError("phi: argument must lie in [0, 11 - 4 sqrt 7), got " + std::to_string(x));
  const double r = std::sqrt(x);
  return 4.0 * x * r / ((1.0 + r) * (1.0 + r));
}

double phi_inv(double v) {
  if (!(v >= 0.0 && v < kPhiInvMax))
    throw OutOfRegionError("phi_inv: EEVPD must lie in [0, 0.397) for the covariance bound, got " +
                           std::to_string(v));
  if (v == 0.0) return 0.0;
  // Small-argument approximation phi(x) ~ 4 x^{3/2} brackets the root from below.
  return bisect_increasing([](double x) { return phi(x); }, v, 0.0,
                           std::nextafter(phi_domain_max(), 0.0));
}

double energy_error_fn_inv(double v) {
  if (!(v >= 0.0 && v <= kPhiWInvMax))
    throw OutOfRegionError("E^{-1}: argument must lie in [0, 6.75], got " + std::to_string(v));
  if (v == 0.0) return 0.0;
  return bisect_increasing([](double y) { return energy_error_fn(y); }, v, 0.0, 3.0);
}

double wasserstein_fn_inv(double w) {
  if (!(w >= 0.0 && w <= kPhiWDomainMax))
    throw OutOfRegionError("W^{-1}: argument must lie in [0, 1/3], got " + std::to_string(w));
  if (w == 0.0) return 0.0;
  return bisect_increasing([](double y) { return wasserstein_fn(y); }, w, 0.0, 3.0);
}

double phi_w(double x) {
  if (!(x >= 0.0 && x < kPhiWDomainMax))
    throw OutOfRegionError("phi_w: argument must lie in [0, 1/3), got " + std::to_string(x));
  return energy_error_fn(wasserstein_fn_inv(x));
}

double phi_w_inv(double v) {
  if (!(v >= 0.0 && v < kPhiWInvMax))
    throw OutOfRegionError("phi_w_inv: EEVPD must lie in [0, 6.75) for the Wasserstein bound, got " +
                           std::to_string(v));
  return wasserstein_fn(energy_error_fn_inv(v));
}

double step_size_for_eevpd(const GaussSpectrum& spectrum, double eevpd) {
  if (!(eevpd > 0.0) || !std::isfinite(eevpd))
    throw std::invalid_argument("step_size_for_eevpd: EEVPD must be positive and finite");
  double lo = 0.0, hi = spectrum.max_stable_step();
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (eevpd_exact(spectrum, mid) < eevpd ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

bool covariance_bound_certified(const GaussSpectrum& spectrum, double eps) {
  return spectrum.stable(eps) && bias_fn(eps * eps / spectrum.min()) < phi_domain_max() &&
         eevpd_exact(spectrum, eps) < kPhiInvMax;
}

bool wasserstein_bound_certified(const GaussSpectrum& spectrum, double eps) {
  return spectrum.stable(eps) && eps * eps / spectrum.min() <= 3.0 && eevpd_exact(spectrum, eps) < kPhiWInvMax;
}

BoundReport bound_report(const GaussSpectrum& spectrum, double eps) {
  BoundReport r;
  r.eevpd = eevpd_exact(spectrum, eps);
  r.exact_b2 = b2_exact(spectrum, eps);
  r.exact_w2_per_dim = wasserstein2_gauss(spectrum, eps) / static_cast<double>(spectrum.dim());
  r.b2_bound_valid = r.eevpd < kPhiInvMax;
  r.w2_bound_valid = r.eevpd < kPhiWInvMax;
  r.b2_bound_certified = covariance_bound_certified(spectrum, eps);
  r.w2_bound_certified = wasserstein_bound_certified(spectrum, eps);
  r.b2_bound = r.b2_bound_valid ? phi_inv(r.eevpd) : std::numeric_limits<double>::quiet_NaN();
  r.w2_bound_per_dim =
      r.w2_bound_valid ? eps * eps * phi_w_inv(r.eevpd) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

VerletMatrix verlet_matrix_1d(double sigma2, double eps) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("verlet_matrix_1d: sigma2 must be positive");
  const double y = eps * eps / sigma2;
  if (!(y < 4.0)) throw UnstableStepError(eps, sigma2);
  const double sigma = std::sqrt(sigma2);
  VerletMatrix m;
  m.alpha = 1.0 / std::sqrt(1.0 - 0.25 * y);
  m.sin_h = std::sqrt(y) / m.alpha;
  // cos h = 1 - y/2 (negative for 2 < y < 4, where h exceeds pi/2).
  m.cos_h = 1.0 - 0.5 * y;
  m.A << m.cos_h, m.alpha * sigma * m.sin_h, -m.sin_h / (m.alpha * sigma), m.cos_h;
  return m;
}

double optimal_eps(double c_v, double c_b) {
  if (!(c_v > 0.0 && c_b > 0.0)) throw std::invalid_argument("optimal_eps: constants must be positive");
  return std::pow(c_v / (4.0 * c_b), 0.2);
}

}  // namespace biasctl
