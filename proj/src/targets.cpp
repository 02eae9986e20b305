#include "biasctl/targets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "biasctl/rng.hpp"

namespace biasctl {

void GroundTruth::validate() const {
  const auto d = mean.size();
  if (variance.size() != d || second_moment_variance.size() != d)
    throw std::invalid_argument("GroundTruth: inconsistent dimensions");
  if ((second_moment_variance.array() <= 0.0).any())
    throw std::invalid_argument("GroundTruth: Var[x_i^2] must be strictly positive");
  if ((variance.array() <= 0.0).any())
    throw std::invalid_argument("GroundTruth: variances must be positive");
  if (cov) {
    if (cov->rows() != d || cov->cols() != d)
      throw std::invalid_argument("GroundTruth: covariance has wrong shape");
    if (!cov->isApprox(cov->transpose(), 1e-12))
      throw std::invalid_argument("GroundTruth: covariance is not symmetric");
    Eigen::LLT<Matrix> llt(*cov);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("GroundTruth: covariance is not positive definite");
  }
}

double TargetModel::neg_log_density(ConstVectorRef x) const {
  Vector g(static_cast<Eigen::Index>(dim()));
  return value_and_gradient(x, g);
}

Vector TargetModel::gradient(ConstVectorRef x) const {
  Vector g(static_cast<Eigen::Index>(dim()));
  value_and_gradient(x, g);
  return g;
}

// GaussTarget ---------------------------------------------------------------

GaussTarget::GaussTarget(Vector spectrum, std::optional<Matrix> rotation, std::string name)
    : spectrum_(std::move(spectrum)), rotation_(std::move(rotation)), name_(std::move(name)) {
  if (spectrum_.size() == 0) throw std::invalid_argument("GaussTarget: empty spectrum");
  if ((spectrum_.array() <= 0.0).any())
    throw std::invalid_argument("GaussTarget: eigenvalues must be strictly positive");
  const auto d = spectrum_.size();
  if (rotation_) {
    if (rotation_->rows() != d || rotation_->cols() != d)
      throw std::invalid_argument("GaussTarget: rotation has wrong shape");
    const double err = (rotation_->transpose() * *rotation_ - Matrix::Identity(d, d))
                           .cwiseAbs()
                           .maxCoeff();
    if (err > 1e-12) throw std::invalid_argument("GaussTarget: rotation is not orthogonal");
  }
  precision_ = spectrum_.cwiseInverse();

  GroundTruth t;
  t.mean = Vector::Zero(d);
  if (rotation_) {
    Matrix cov = *rotation_ * spectrum_.asDiagonal() * rotation_->transpose();
    cov = 0.5 * (cov + cov.transpose());
    t.variance = cov.diagonal();
    t.cov = std::move(cov);
  } else {
    t.variance = spectrum_;
    t.cov = Matrix(spectrum_.asDiagonal());
  }
  // Var[x^2] = 2 sigma^4 for a centred Gaussian.
  t.second_moment_variance = 2.0 * t.variance.cwiseAbs2();
  t.provenance = Provenance::analytic;
  truth_ = std::move(t);
}

double GaussTarget::value_and_gradient(ConstVectorRef x, VectorRef grad) const {
  if (!rotation_) {
    grad = precision_.cwiseProduct(x);
    return 0.5 * x.dot(grad);
  }
  const Vector y = rotation_->transpose() * x;
  const Vector gy = precision_.cwiseProduct(y);
  grad = *rotation_ * gy;
  return 0.5 * y.dot(gy);
}

double GaussTarget::neg_log_density(ConstVectorRef x) const {
  if (!rotation_) return 0.5 * x.cwiseAbs2().dot(precision_);
  const Vector y = rotation_->transpose() * x;
  return 0.5 * y.cwiseAbs2().dot(precision_);
}

// ProductTarget -------------------------------------------------------------

namespace {

constexpr std::size_t kDenseCovLimit = 4096;

GroundTruth replicate_truth(const GroundTruth& b, std::size_t copies) {
  const auto bd = b.mean.size();
  const auto d = bd * static_cast<Eigen::Index>(copies);
  GroundTruth t;
  t.mean = b.mean.replicate(static_cast<Eigen::Index>(copies), 1);
  t.variance = b.variance.replicate(static_cast<Eigen::Index>(copies), 1);
  t.second_moment_variance = b.second_moment_variance.replicate(static_cast<Eigen::Index>(copies), 1);
  t.provenance = b.provenance;
  if (b.cov && static_cast<std::size_t>(d) <= kDenseCovLimit) {
    Matrix cov = Matrix::Zero(d, d);
    for (std::size_t k = 0; k < copies; ++k) {
      const auto off = static_cast<Eigen::Index>(k) * bd;
      cov.block(off, off, bd, bd) = *b.cov;
    }
    t.cov = std::move(cov);
  }
  return t;
}

}  // namespace

ProductTarget::ProductTarget(TargetPtr block, std::size_t copies)
    : block_(std::move(block)), copies_(copies) {
  if (!block_) throw std::invalid_argument("ProductTarget: null block");
  if (copies_ == 0) throw std::invalid_argument("ProductTarget: copies must be >= 1");
  if (block_->truth()) truth_ = replicate_truth(*block_->truth(), copies_);
}

std::string ProductTarget::name() const {
  return "product(" + block_->name() + "," + std::to_string(copies_) + ")";
}

double ProductTarget::value_and_gradient(ConstVectorRef x, VectorRef grad) const {
  const auto bd = static_cast<Eigen::Index>(block_->dim());
  double total = 0.0;
  for (std::size_t k = 0; k < copies_; ++k) {
    const auto off = static_cast<Eigen::Index>(k) * bd;
    total += block_->value_and_gradient(x.segment(off, bd), grad.segment(off, bd));
  }
  return total;
}

double ProductTarget::neg_log_density(ConstVectorRef x) const {
  const auto bd = static_cast<Eigen::Index>(block_->dim());
  double total = 0.0;
  for (std::size_t k = 0; k < copies_; ++k)
    total += block_->neg_log_density(x.segment(static_cast<Eigen::Index>(k) * bd, bd));
  return total;
}

// Rosenbrock ----------------------------------------------------------------

namespace {

// E[(1+z)^n] for z ~ N(0,1).
double shifted_gaussian_moment(int n) {
  double total = 0.0;
  double binom = 1.0;
  double odd_fact = 1.0;  // (k-1)!! for even k
  for (int k = 0; k <= n; ++k) {
    if (k > 0) binom = binom * (n - k + 1) / k;
    if (k % 2 == 0) {
      if (k > 0) odd_fact *= (k - 1);
      total += binom * odd_fact;
    }
  }
  return total;
}

}  // namespace

RosenbrockBlock::RosenbrockBlock(double q) : q_(q) {
  if (!(q > 0.0)) throw std::invalid_argument("RosenbrockBlock: q must be positive");
  truth_ = rosenbrock_block_truth(q);
}

double RosenbrockBlock::value_and_gradient(ConstVectorRef x, VectorRef grad) const {
  const double a = x[0] - 1.0;
  const double r = x[1] - x[0] * x[0];
  grad[0] = a - 2.0 * x[0] * r / q_;
  grad[1] = r / q_;
  return 0.5 * a * a + 0.5 * r * r / q_;
}

GroundTruth rosenbrock_block_truth(double q) {
  const double m2 = shifted_gaussian_moment(2);  // 2
  const double m3 = shifted_gaussian_moment(3);  // 4
  const double m4 = shifted_gaussian_moment(4);  // 10
  const double m8 = shifted_gaussian_moment(8);  // 764
  // y = x^2 + sqrt(q) e
  const double ey = m2;
  const double ey2 = m4 + q;
  const double ey4 = m8 + 6.0 * q * m4 + 3.0 * q * q;
  GroundTruth t;
  t.mean = Eigen::Vector2d(1.0, ey);
  t.variance = Eigen::Vector2d(1.0, ey2 - ey * ey);
  Matrix cov(2, 2);
  cov << 1.0, m3 - ey, m3 - ey, ey2 - ey * ey;
  t.cov = cov;
  t.second_moment_variance = Eigen::Vector2d(m4 - m2 * m2, ey4 - ey2 * ey2);
  t.provenance = Provenance::analytic;
  return t;
}

// Funnel --------------------------------------------------------------------

FunnelTarget::FunnelTarget(std::size_t latent_dim, std::uint64_t seed) : seed_(seed) {
  if (latent_dim == 0) throw std::invalid_argument("FunnelTarget: latent_dim must be >= 1");
  ChainRng rng(seed, 0xf0001ull);
  data_.resize(static_cast<Eigen::Index>(latent_dim));
  // theta_true = 0: z_i ~ N(0, 1), y_i ~ N(z_i, 1).
  for (Eigen::Index i = 0; i < data_.size(); ++i) {
    const double z = rng.normal();
    data_[i] = z + rng.normal();
  }
  truth_ = funnel_truth(data_);
}

std::string FunnelTarget::name() const {
  return "funnel(d=" + std::to_string(data_.size()) + ",seed=" + std::to_string(seed_) + ")";
}

double FunnelTarget::value_and_gradient(ConstVectorRef x, VectorRef grad) const {
  const double theta = x[0];
  const auto n = data_.size();
  const auto z = x.tail(n);
  const double inv_var = std::exp(-theta);
  const double zz = z.squaredNorm();
  const Vector resid = z - data_;
  constexpr double s2 = kThetaScale * kThetaScale;
  grad[0] = theta / s2 + 0.5 * static_cast<double>(n) - 0.5 * inv_var * zz;
  grad.tail(n) = inv_var * z + resid;
  return 0.5 * theta * theta / s2 + 0.5 * static_cast<double>(n) * theta + 0.5 * inv_var * zz +
         0.5 * resid.squaredNorm();
}

GroundTruth funnel_truth(const Vector& data) {
  const auto n = data.size();
  const double yy = data.squaredNorm();
  constexpr double s2 = FunnelTarget::kThetaScale * FunnelTarget::kThetaScale;
  auto log_post = [&](double th) {
    // log N(theta; 0, 9) + sum_i log N(y_i; 0, 1 + e^theta), up to constants.
    const double log1pe = th > 0 ? th + std::log1p(std::exp(-th)) : std::log1p(std::exp(th));
    const double var = std::exp(log1pe);
    return -0.5 * th * th / s2 - 0.5 * static_cast<double>(n) * log1pe - 0.5 * yy / var;
  };
  // Trapezoid rule on a wide uniform grid; the integrand is smooth and decays
  // faster than Gaussian, so this converges spectrally.
  constexpr int kPoints = 40001;
  constexpr double lo = -40.0, hi = 40.0;
  const double h = (hi - lo) / (kPoints - 1);
  double lmax = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kPoints; ++k) lmax = std::max(lmax, log_post(lo + h * k));

  double z0 = 0, e_th = 0, e_th2 = 0, e_th3 = 0, e_th4 = 0;
  double e_v = 0, e_v2 = 0, e_v3 = 0, e_v4 = 0, e_thv = 0;
  for (int k = 0; k < kPoints; ++k) {
    const double th = lo + h * k;
    const double w = std::exp(log_post(th) - lmax) * ((k == 0 || k == kPoints - 1) ? 0.5 : 1.0);
    const double v = 1.0 / (1.0 + std::exp(-th));  // posterior variance of z_i given theta
    z0 += w;
    e_th += w * th;
    e_th2 += w * th * th;
    e_th3 += w * th * th * th;
    e_th4 += w * th * th * th * th;
    e_v += w * v;
    e_v2 += w * v * v;
    e_v3 += w * v * v * v;
    e_v4 += w * v * v * v * v;
    e_thv += w * th * v;
  }
  for (double* p : {&e_th, &e_th2, &e_th3, &e_th4, &e_v, &e_v2, &e_v3, &e_v4, &e_thv}) *p /= z0;

  GroundTruth t;
  t.mean.resize(n + 1);
  t.variance.resize(n + 1);
  t.second_moment_variance.resize(n + 1);
  Matrix cov(n + 1, n + 1);

  t.mean[0] = e_th;
  t.variance[0] = e_th2 - e_th * e_th;
  t.second_moment_variance[0] = e_th4 - e_th2 * e_th2;
  const double var_v = e_v2 - e_v * e_v;
  const double cov_th_v = e_thv - e_th * e_v;
  cov(0, 0) = t.variance[0];
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = data[i];
    // z | theta ~ N(v y, v)
    const double ez = e_v * y;
    const double ez2 = e_v + e_v2 * y * y;
    // E[z^4 | theta] = m^4 + 6 m^2 v + 3 v^2 with m = v y
    const double ez4 = e_v4 * y * y * y * y + 6.0 * e_v3 * y * y + 3.0 * e_v2;
    t.mean[i + 1] = ez;
    t.variance[i + 1] = ez2 - ez * ez;
    t.second_moment_variance[i + 1] = ez4 - ez2 * ez2;
    cov(0, i + 1) = cov(i + 1, 0) = cov_th_v * y;
    for (Eigen::Index j = 0; j < n; ++j)
      cov(i + 1, j + 1) = (i == j) ? t.variance[i + 1] : var_v * y * data[j];
  }
  t.cov = std::move(cov);
  t.provenance = Provenance::analytic;
  return t;
}

// Preconditioning -----------------------------------------------------------

PreconditionedTarget::PreconditionedTarget(TargetPtr base, Vector scales)
    : base_(std::move(base)), scales_(std::move(scales)) {
  if (!base_) throw std::invalid_argument("PreconditionedTarget: null base");
  if (scales_.size() != static_cast<Eigen::Index>(base_->dim()))
    throw std::invalid_argument("PreconditionedTarget: scale vector has wrong length");
  if ((scales_.array() <= 0.0).any())
    throw std::invalid_argument("PreconditionedTarget: scales must be positive");
  if (const auto& bt = base_->truth()) {
    GroundTruth t;
    const Vector inv = scales_.cwiseInverse();
    t.mean = bt->mean.cwiseProduct(inv);
    t.variance = bt->variance.cwiseProduct(inv.cwiseAbs2());
    t.second_moment_variance = bt->second_moment_variance.cwiseProduct(inv.array().pow(4).matrix());
    if (bt->cov) t.cov = inv.asDiagonal() * *bt->cov * inv.asDiagonal();
    t.provenance = bt->provenance;
    truth_ = std::move(t);
  }
}

double PreconditionedTarget::value_and_gradient(ConstVectorRef x, VectorRef grad) const {
  const Vector y = scales_.cwiseProduct(x);
  const double v = base_->value_and_gradient(y, grad);
  grad.array() *= scales_.array();
  return v;
}

// Factories -----------------------------------------------------------------

std::shared_ptr<GaussTarget> make_standard_gaussian(std::size_t d) {
  if (d == 0) throw std::invalid_argument("make_standard_gaussian: d must be >= 1");
  return std::make_shared<GaussTarget>(Vector::Ones(static_cast<Eigen::Index>(d)), std::nullopt,
                                       "gauss-std(d=" + std::to_string(d) + ")");
}

Matrix random_orthogonal(std::size_t d, std::uint64_t seed) {
  ChainRng rng(seed, 0x07770ull);
  const auto n = static_cast<Eigen::Index>(d);
  Matrix g(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  // Re-orthogonalise once to push ||Q^T Q - I|| to rounding level.
  Eigen::HouseholderQR<Matrix> qr2(q);
  Matrix q2 = qr2.householderQ();
  const Matrix r2 = qr2.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r2(j, j) < 0) q2.col(j) *= -1.0;
  return q2;
}

std::shared_ptr<GaussTarget> make_ill_conditioned_gaussian(std::size_t d, double kappa,
                                                           std::uint64_t seed, bool rotate) {
  if (d < 2) throw std::invalid_argument("make_ill_conditioned_gaussian: d must be >= 2");
  if (!(kappa >= 1.0)) throw std::invalid_argument("make_ill_conditioned_gaussian: kappa must be >= 1");
  Vector spectrum(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i)
    spectrum[static_cast<Eigen::Index>(i)] = std::pow(kappa, static_cast<double>(i) / static_cast<double>(d - 1));
  std::ostringstream nm;
  nm << "gauss-ill(d=" << d << ",kappa=" << kappa;
  if (rotate) nm << ",seed=" << seed << ",rotate=1";
  nm << ")";
  std::optional<Matrix> rot;
  if (rotate) rot = random_orthogonal(d, seed);
  return std::make_shared<GaussTarget>(std::move(spectrum), std::move(rot), nm.str());
}

std::shared_ptr<ProductTarget> make_rosenbrock_product(std::size_t copies, double q) {
  return std::make_shared<ProductTarget>(std::make_shared<RosenbrockBlock>(q), copies);
}

std::shared_ptr<FunnelTarget> make_funnel(std::size_t latent_dim, std::uint64_t seed) {
  return std::make_shared<FunnelTarget>(latent_dim, seed);
}

std::shared_ptr<ProductTarget> make_product(TargetPtr block, std::size_t copies) {
  if (!block || !block->truth())
    throw std::invalid_argument("make_product: block must carry ground truth");
  return std::make_shared<ProductTarget>(std::move(block), copies);
}

double gradient_check(const TargetModel& target, ConstVectorRef x, double rel_step) {
  const Vector g = target.gradient(x);
  Vector xp = x;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    xp[i] = x[i] + h;
    const double fp = target.neg_log_density(xp);
    xp[i] = x[i] - h;
    const double fm = target.neg_log_density(xp);
    xp[i] = x[i];
    const double fd = (fp - fm) / (2.0 * h);
    const double scale = std::max({1.0, std::abs(g[i]), std::abs(fd)});
    worst = std::max(worst, std::abs(fd - g[i]) / scale);
  }
  return worst;
}

// Model identifier parsing ----------------------------------------------------

namespace {

struct ModelExpr {
  std::string name;
  std::map<std::string, std::string> kwargs;
  std::vector<std::string> positional;
};

std::string trim(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

ModelExpr parse_expr(const std::string& text) {
  ModelExpr e;
  const std::string s = trim(text);
  const auto open = s.find('(');
  if (open == std::string::npos) {
    e.name = s;
    return e;
  }
  if (s.back() != ')') throw ModelSyntaxError("model id: unbalanced parentheses in '" + s + "'");
  e.name = trim(s.substr(0, open));
  const std::string body = s.substr(open + 1, s.size() - open - 2);
  int depth = 0;
  std::string cur;
  auto flush = [&] {
    const std::string arg = trim(cur);
    cur.clear();
    if (arg.empty()) return;
    const auto eq = arg.find('=');
    const auto par = arg.find('(');
    if (eq != std::string::npos && (par == std::string::npos || eq < par))
      e.kwargs[trim(arg.substr(0, eq))] = trim(arg.substr(eq + 1));
    else
      e.positional.push_back(arg);
  };
  for (char c : body) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth < 0) throw ModelSyntaxError("model id: unbalanced parentheses in '" + s + "'");
    if (c == ',' && depth == 0)
      flush();
    else
      cur.push_back(c);
  }
  if (depth != 0) throw ModelSyntaxError("model id: unbalanced parentheses in '" + s + "'");
  flush();
  return e;
}

double kw_double(const ModelExpr& e, const std::string& key, double fallback) {
  const auto it = e.kwargs.find(key);
  if (it == e.kwargs.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ModelSyntaxError("model id: bad value for '" + key + "': " + it->second);
  }
}

std::size_t kw_size(const ModelExpr& e, const std::string& key, std::size_t fallback) {
  const double v = kw_double(e, key, static_cast<double>(fallback));
  if (v < 0 || v != std::floor(v))
    throw ModelSyntaxError("model id: '" + key + "' must be a non-negative integer");
  return static_cast<std::size_t>(v);
}

void check_keys(const ModelExpr& e, std::initializer_list<const char*> allowed) {
  for (const auto& [k, v] : e.kwargs) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ModelSyntaxError("model id: unknown parameter '" + k + "' for " + e.name);
  }
}

}  // namespace

TargetPtr make_model(const std::string& id) {
  const ModelExpr e = parse_expr(id);
  if (e.name == "gauss-std") {
    check_keys(e, {"d"});
    return make_standard_gaussian(kw_size(e, "d", 100));
  }
  if (e.name == "gauss-ill") {
    check_keys(e, {"d", "kappa", "seed", "rotate"});
    return make_ill_conditioned_gaussian(kw_size(e, "d", 100), kw_double(e, "kappa", 1000.0),
                                         kw_size(e, "seed", 0), kw_size(e, "rotate", 0) != 0);
  }
  if (e.name == "rosenbrock") {
    check_keys(e, {"copies", "q"});
    return make_rosenbrock_product(kw_size(e, "copies", 18), kw_double(e, "q", 0.1));
  }
  if (e.name == "rosenbrock-block") {
    check_keys(e, {"q"});
    return std::make_shared<RosenbrockBlock>(kw_double(e, "q", 0.1));
  }
  if (e.name == "funnel") {
    check_keys(e, {"d", "seed"});
    return make_funnel(kw_size(e, "d", 100), kw_size(e, "seed", 0));
  }
  if (e.name == "product") {
    check_keys(e, {"copies"});
    if (e.positional.empty()) throw ModelSyntaxError("product(<block>,<K>): missing block");
    TargetPtr block = make_model(e.positional[0]);
    std::size_t copies = kw_size(e, "copies", 0);
    if (e.positional.size() >= 2) {
      try {
        copies = static_cast<std::size_t>(std::stoull(e.positional[1]));
      } catch (const std::exception&) {
        throw ModelSyntaxError("product(<block>,<K>): K must be an integer");
      }
    }
    if (copies == 0) throw ModelSyntaxError("product(<block>,<K>): K must be >= 1");
    return make_product(std::move(block), copies);
  }
  throw ModelSyntaxError("unknown model '" + e.name + "'");
}

}  // namespace biasctl
