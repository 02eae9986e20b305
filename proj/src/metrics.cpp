#include "biasctl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "biasctl/rng.hpp"

namespace biasctl {

RunningMoments::RunningMoments(std::size_t dim, bool diagonal) : diagonal_(diagonal) {
  if (dim == 0) throw std::invalid_argument("RunningMoments: dimension must be positive");
  const auto d = static_cast<Eigen::Index>(dim);
  mean_ = Vector::Zero(d);
  if (diagonal_)
    codiag_ = Vector::Zero(d);
  else
    comoment_ = Matrix::Zero(d, d);
}

void RunningMoments::reset() {
  n_ = 0;
  mean_.setZero();
  if (diagonal_)
    codiag_.setZero();
  else
    comoment_.setZero();
}

void RunningMoments::update(ConstVectorRef x) {
  if (x.size() != mean_.size()) throw std::invalid_argument("RunningMoments: dimension mismatch");
  ++n_;
  const double n = static_cast<double>(n_);
  if (diagonal_) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double delta = x[i] - mean_[i];
      mean_[i] += delta / n;
      codiag_[i] += delta * (x[i] - mean_[i]);
    }
    return;
  }
  const Vector delta = x - mean_;
  mean_ += delta / n;
  // (x - m_old)(x - m_new)^T = ((n-1)/n) delta delta^T
  comoment_.selfadjointView<Eigen::Lower>().rankUpdate(delta, (n - 1.0) / n);
}

void RunningMoments::merge(const RunningMoments& other) {
  if (other.n_ == 0) return;
  if (other.dim() != dim() || other.diagonal_ != diagonal_)
    throw std::invalid_argument("RunningMoments: incompatible merge");
  if (n_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(n_), nb = static_cast<double>(other.n_);
  const double n = na + nb;
  const Vector delta = other.mean_ - mean_;
  if (diagonal_) {
    codiag_ += other.codiag_ + delta.cwiseAbs2() * (na * nb / n);
  } else {
    comoment_.triangularView<Eigen::Lower>() += other.comoment_;
    comoment_.selfadjointView<Eigen::Lower>().rankUpdate(delta, na * nb / n);
  }
  mean_ += delta * (nb / n);
  n_ += other.n_;
}

Matrix RunningMoments::covariance() const {
  if (diagonal_) throw std::logic_error("RunningMoments: covariance() unavailable in diagonal mode");
  if (n_ == 0) throw std::logic_error("RunningMoments: no samples");
  Matrix c = comoment_.selfadjointView<Eigen::Lower>();
  return c / static_cast<double>(n_);
}

Vector RunningMoments::variance() const {
  if (n_ == 0) throw std::logic_error("RunningMoments: no samples");
  const Vector v = diagonal_ ? codiag_ : Vector(comoment_.diagonal());
  return (v / static_cast<double>(n_)).cwiseMax(0.0);
}

Vector RunningMoments::second_moment() const { return variance() + mean_.cwiseAbs2(); }

Matrix RunningMoments::second_moment_matrix() const {
  return covariance() + mean_ * mean_.transpose();
}

double b2_cov(const Matrix& truth, const Matrix& estimate) {
  const Eigen::Index d = truth.rows();
  if (truth.cols() != d || estimate.rows() != d || estimate.cols() != d || d == 0)
    throw std::invalid_argument("b2_cov: shape mismatch");
  Eigen::LLT<Matrix> llt(truth);
  if (llt.info() != Eigen::Success || !truth.isApprox(truth.transpose(), 1e-10))
    throw std::invalid_argument("b2_cov: truth covariance is not symmetric positive definite");
  // M = L^{-1} Sq L^{-T} is similar to Sp^{-1} Sq and symmetric, so the trace
  // of (I - M)^2 is a Frobenius norm.
  Matrix m = llt.matrixL().solve(estimate);
  m = llt.matrixL().solve(m.transpose()).transpose();
  m.diagonal().array() -= 1.0;
  return m.squaredNorm() / static_cast<double>(d);
}

double b2_cov_diag(ConstVectorRef truth_var, ConstVectorRef estimate_var) {
  if (truth_var.size() != estimate_var.size() || truth_var.size() == 0)
    throw std::invalid_argument("b2_cov_diag: shape mismatch");
  if ((truth_var.array() <= 0.0).any()) throw std::invalid_argument("b2_cov_diag: truth variance must be positive");
  return ((truth_var - estimate_var).array() / truth_var.array()).square().mean();
}

double b2_cov(const GroundTruth& truth, const RunningMoments& moments, std::size_t diagonal_threshold) {
  if (truth.dim() != moments.dim()) throw std::invalid_argument("b2_cov: dimension mismatch");
  if (truth.cov && !moments.diagonal() && truth.dim() <= diagonal_threshold)
    return b2_cov(*truth.cov, moments.covariance());
  return b2_cov_diag(truth.variance, moments.variance());
}

Vector b2_per_dim(const GroundTruth& truth, ConstVectorRef second_moment_estimate) {
  if (second_moment_estimate.size() != static_cast<Eigen::Index>(truth.dim()))
    throw std::invalid_argument("b2_avg: dimension mismatch");
  if (truth.second_moment_variance.size() != second_moment_estimate.size())
    throw std::invalid_argument("b2_avg: Var[x_i^2] unavailable");
  if ((truth.second_moment_variance.array() <= 0.0).any())
    throw std::invalid_argument("b2_avg: Var[x_i^2] must be positive");
  return (second_moment_estimate - truth.second_moment()).cwiseAbs2().cwiseQuotient(truth.second_moment_variance);
}

double b2_avg(const GroundTruth& truth, ConstVectorRef second_moment_estimate) {
  return b2_per_dim(truth, second_moment_estimate).mean();
}

double b2_avg(const GroundTruth& truth, const RunningMoments& moments) {
  return b2_avg(truth, moments.second_moment());
}

std::pair<double, double> basis_change_check(const Matrix& truth, const Matrix& estimate, const Matrix& A) {
  Eigen::FullPivLU<Matrix> lu(A);
  if (A.rows() != A.cols() || !lu.isInvertible()) throw std::invalid_argument("basis_change_check: A is singular");
  const double before = b2_cov(truth, estimate);
  const Matrix tp = A * truth * A.transpose();
  const Matrix tq = A * estimate * A.transpose();
  const double after = b2_cov(0.5 * (tp + tp.transpose()), 0.5 * (tq + tq.transpose()));
  return {before, after};
}

ErrorReport make_error_report(const GroundTruth& truth, const RunningMoments& moments,
                              std::uint64_t grad_calls, double divergent_fraction) {
  ErrorReport r;
  r.per_dim = b2_per_dim(truth, moments.second_moment());
  r.b2_avg = r.per_dim.mean();
  r.b2_cov = b2_cov(truth, moments);
  r.grad_calls = grad_calls;
  r.divergent_fraction = divergent_fraction;
  return r;
}

double tau_int_gauss(double rho, std::uint64_t n) {
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("tau_int_gauss: |rho| must be < 1");
  if (n == 0) throw std::invalid_argument("tau_int_gauss: n must be positive");
  const double nn = static_cast<double>(n);
  return (1.0 + rho) / (1.0 - rho) * (1.0 - (2.0 * rho / nn) * (1.0 - std::pow(rho, nn)) / (1.0 - rho * rho));
}

std::vector<double> autocorrelation(const std::vector<double>& x, std::size_t max_lag) {
  const std::size_t n = x.size();
  if (n < 2) throw std::invalid_argument("autocorrelation: need at least two values");
  max_lag = std::min(max_lag, n - 1);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::vector<double> c(max_lag + 1, 0.0);
  for (std::size_t k = 0; k <= max_lag; ++k) {
    double s = 0.0;
    for (std::size_t i = 0; i + k < n; ++i) s += (x[i] - mean) * (x[i + k] - mean);
    c[k] = s / static_cast<double>(n);
  }
  if (c[0] <= 0.0) {
    std::vector<double> out(max_lag + 1, 0.0);
    out[0] = 1.0;
    return out;
  }
  for (std::size_t k = max_lag + 1; k-- > 0;) c[k] /= c[0];
  return c;
}

double integrated_autocorr_time(const std::vector<double>& x) {
  const std::size_t max_lag = std::min<std::size_t>(x.size() - 1, 10000);
  const auto rho = autocorrelation(x, max_lag);
  // Geyer: sum consecutive pairs while positive, enforce monotone decrease.
  double tau = -1.0;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < rho.size(); k += 2) {
    double pair = rho[k] + rho[k + 1];
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    prev = pair;
    tau += 2.0 * pair;
  }
  return std::max(tau, 1.0 / static_cast<double>(x.size()));
}

double effective_sample_size(const std::vector<double>& x) {
  return static_cast<double>(x.size()) / integrated_autocorr_time(x);
}

double batch_means_se(const std::vector<double>& x, std::size_t n_batches) {
  if (n_batches < 2 || x.size() < 2 * n_batches) throw std::invalid_argument("batch_means_se: too few values");
  const std::size_t b = x.size() / n_batches;
  std::vector<double> means(n_batches);
  for (std::size_t j = 0; j < n_batches; ++j)
    means[j] = std::accumulate(x.begin() + j * b, x.begin() + (j + 1) * b, 0.0) / static_cast<double>(b);
  const double m = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(n_batches);
  double ss = 0.0;
  for (double v : means) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(n_batches - 1) / static_cast<double>(n_batches));
}

namespace {

double median_of(std::vector<double>& v) {
  const std::size_t n = v.size();
  auto mid = v.begin() + n / 2;
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

Curve median_of_selection(const std::vector<Curve>& curves, const std::vector<std::size_t>& pick) {
  const std::size_t len = curves.front().size();
  Curve out(len);
  std::vector<double> column(pick.size());
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < pick.size(); ++j) column[j] = curves[pick[j]][t];
    out[t] = median_of(column);
  }
  return out;
}

void check_curves(const std::vector<Curve>& curves) {
  if (curves.size() < 2) throw std::invalid_argument("median_curve: need at least two chains");
  const std::size_t len = curves.front().size();
  for (const auto& c : curves)
    if (c.size() != len) throw std::invalid_argument("median_curve: misaligned step grids");
}

BootstrapResult summarise(const Crossing& point, const std::vector<double>& values, std::size_t censored) {
  BootstrapResult r;
  r.point = point;
  r.resamples = values.size();
  r.censored_resamples = censored;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  r.std_dev = std::sqrt(ss / n);
  r.relative_error = point.grad_calls > 0 ? r.std_dev / static_cast<double>(point.grad_calls) : 0.0;
  return r;
}

}  // namespace

Curve median_curve(const std::vector<Curve>& curves) {
  check_curves(curves);
  std::vector<std::size_t> all(curves.size());
  std::iota(all.begin(), all.end(), 0);
  return median_of_selection(curves, all);
}

Crossing grads_to_threshold(const std::vector<std::uint64_t>& grid, const Curve& curve, double threshold) {
  if (grid.size() != curve.size() || grid.empty())
    throw std::invalid_argument("grads_to_threshold: grid and curve lengths differ");
  for (std::size_t i = 0; i < curve.size(); ++i)
    if (curve[i] < threshold) return {grid[i], false};
  return {grid.back(), true};
}

BootstrapResult bootstrap_error(const std::vector<Curve>& curves, const std::vector<std::uint64_t>& grid,
                                double threshold, std::size_t resamples, std::uint64_t seed) {
  check_curves(curves);
  if (resamples < 2) throw std::invalid_argument("bootstrap_error: need at least two resamples");
  const Crossing point = grads_to_threshold(grid, median_curve(curves), threshold);
  ChainRng rng(seed, 0xb0075);
  std::uniform_int_distribution<std::size_t> pick_dist(0, curves.size() - 1);
  std::vector<std::size_t> pick(curves.size());
  std::vector<double> values;
  values.reserve(resamples);
  std::size_t censored = 0;
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& p : pick) p = pick_dist(rng.engine());
    const Crossing c = grads_to_threshold(grid, median_of_selection(curves, pick), threshold);
    censored += c.censored;
    values.push_back(static_cast<double>(c.grad_calls));
  }
  return summarise(point, values, censored);
}

BootstrapResult bootstrap_error_exhaustive(const std::vector<Curve>& curves,
                                           const std::vector<std::uint64_t>& grid, double threshold) {
  check_curves(curves);
  const std::size_t n = curves.size();
  if (n > 8) throw std::invalid_argument("bootstrap_error_exhaustive: too many chains");
  const Crossing point = grads_to_threshold(grid, median_curve(curves), threshold);
  std::vector<std::size_t> pick(n, 0);
  std::vector<double> values;
  std::size_t censored = 0;
  while (true) {
    const Crossing c = grads_to_threshold(grid, median_of_selection(curves, pick), threshold);
    censored += c.censored;
    values.push_back(static_cast<double>(c.grad_calls));
    std::size_t i = 0;
    while (i < n && ++pick[i] == n) pick[i++] = 0;
    if (i == n) break;
  }
  return summarise(point, values, censored);
}

std::vector<std::uint64_t> checkpoint_grid(std::uint64_t total, std::size_t points, bool geometric,
                                           std::uint64_t first) {
  if (total == 0 || points == 0) throw std::invalid_argument("checkpoint_grid: empty grid");
  std::vector<std::uint64_t> grid;
  if (!geometric) {
    const std::uint64_t stride = (total + points - 1) / points;
    for (std::uint64_t s = stride; s < total; s += stride) grid.push_back(s);
    grid.push_back(total);
    return grid;
  }
  first = std::clamp<std::uint64_t>(first, 1, total);
  const double ratio = points > 1 ? std::pow(static_cast<double>(total) / static_cast<double>(first),
                                             1.0 / static_cast<double>(points - 1))
                                  : 1.0;
  double v = static_cast<double>(first);
  for (std::size_t i = 0; i < points; ++i, v *= ratio) {
    auto s = static_cast<std::uint64_t>(std::llround(v));
    s = std::clamp<std::uint64_t>(s, 1, total);
    if (grid.empty() || s > grid.back()) grid.push_back(s);
  }
  if (grid.back() != total) grid.push_back(total);
  return grid;
}

}  // namespace biasctl
