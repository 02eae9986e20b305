#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace biasctl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorRef = Eigen::Ref<Vector>;
using ConstVectorRef = Eigen::Ref<const Vector>;

enum class Provenance { analytic, exact_sampler, long_chain };

/// Reference moments used to score samplers.
///
/// `cov` holds the dense covariance when it is cheap enough to store;
/// `variance` (its diagonal) is always present. `second_moment_variance`
/// holds Var[x_i^2], the normaliser of the per-coordinate second-moment
/// error.
struct GroundTruth {
  Vector mean;
  Vector variance;
  std::optional<Matrix> cov;
  Vector second_moment_variance;
  Provenance provenance = Provenance::analytic;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  /// E[x_i^2] = Var[x_i] + E[x_i]^2.
  Vector second_moment() const { return variance + mean.cwiseAbs2(); }
  /// Throws std::invalid_argument unless cov is SPD and Var[x_i^2] > 0.
  void validate() const;
};

/// Differentiable unnormalised target p(x) ∝ exp(-L(x)).
///
/// Implementations must be pure: evaluation from many threads at once is
/// allowed and must not touch shared mutable state.
class TargetModel {
 public:
  virtual ~TargetModel() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;

  /// Returns L(x) and writes ∇L(x) into `grad`. One call is one gradient
  /// evaluation in the cost accounting.
  virtual double value_and_gradient(ConstVectorRef x, VectorRef grad) const = 0;

  virtual double neg_log_density(ConstVectorRef x) const;
  Vector gradient(ConstVectorRef x) const;

  const std::optional<GroundTruth>& truth() const { return truth_; }

 protected:
  std::optional<GroundTruth> truth_;
};

using TargetPtr = std::shared_ptr<const TargetModel>;

/// Zero-mean Gaussian with covariance R diag(spectrum) R^T.
class GaussTarget final : public TargetModel {
 public:
  explicit GaussTarget(Vector spectrum, std::optional<Matrix> rotation = {},
                       std::string name = "gauss");

  std::size_t dim() const override { return static_cast<std::size_t>(spectrum_.size()); }
  std::string name() const override { return name_; }
  double value_and_gradient(ConstVectorRef x, VectorRef grad) const override;
  double neg_log_density(ConstVectorRef x) const override;

  const Vector& spectrum() const { return spectrum_; }
  const std::optional<Matrix>& rotation() const { return rotation_; }

 private:
  Vector spectrum_;
  Vector precision_;
  std::optional<Matrix> rotation_;
  std::string name_;
};

/// K independent copies of a D-dimensional block.
class ProductTarget final : public TargetModel {
 public:
  ProductTarget(TargetPtr block, std::size_t copies);

  std::size_t dim() const override { return block_->dim() * copies_; }
  std::string name() const override;
  double value_and_gradient(ConstVectorRef x, VectorRef grad) const override;
  double neg_log_density(ConstVectorRef x) const override;

  const TargetModel& block() const { return *block_; }
  std::size_t copies() const { return copies_; }

 private:
  TargetPtr block_;
  std::size_t copies_;
};

/// Banana-shaped block: x ~ N(1, 1), y | x ~ N(x^2, q).
class RosenbrockBlock final : public TargetModel {
 public:
  explicit RosenbrockBlock(double q);

  std::size_t dim() const override { return 2; }
  std::string name() const override { return "rosenbrock-block"; }
  double value_and_gradient(ConstVectorRef x, VectorRef grad) const override;

  double q() const { return q_; }
  /// Exact draw of one block, used by the ground-truth oracle.
  template <class Rng>
  Eigen::Vector2d sample(Rng& rng) const {
    const double x = 1.0 + rng.normal();
    return {x, x * x + std::sqrt(q_) * rng.normal()};
  }

 private:
  double q_;
};

/// Hierarchical funnel posterior over (theta, z_1..z_n):
///   theta ~ N(0, 3^2), z_i | theta ~ N(0, e^theta), y_i | z_i ~ N(z_i, 1).
/// Observations are generated once from the seed at theta = 0.
class FunnelTarget final : public TargetModel {
 public:
  FunnelTarget(std::size_t latent_dim, std::uint64_t seed);

  std::size_t dim() const override { return data_.size() + 1; }
  std::string name() const override;
  double value_and_gradient(ConstVectorRef x, VectorRef grad) const override;

  const Vector& data() const { return data_; }

  static constexpr double kThetaScale = 3.0;

 private:
  Vector data_;
  std::uint64_t seed_;
};

/// Diagonal rescaling x = s ⊙ x̃: the sampler works in x̃ coordinates.
class PreconditionedTarget final : public TargetModel {
 public:
  PreconditionedTarget(TargetPtr base, Vector scales);

  std::size_t dim() const override { return base_->dim(); }
  std::string name() const override { return base_->name(); }
  double value_and_gradient(ConstVectorRef x, VectorRef grad) const override;

  const Vector& scales() const { return scales_; }

 private:
  TargetPtr base_;
  Vector scales_;
};

std::shared_ptr<GaussTarget> make_standard_gaussian(std::size_t d);

/// Eigenvalues log-spaced from 1 to kappa. With `rotate` set, a random
/// orthogonal basis drawn from `seed` is applied.
std::shared_ptr<GaussTarget> make_ill_conditioned_gaussian(std::size_t d, double kappa,
                                                           std::uint64_t seed,
                                                           bool rotate = false);

std::shared_ptr<ProductTarget> make_rosenbrock_product(std::size_t copies, double q);

std::shared_ptr<FunnelTarget> make_funnel(std::size_t latent_dim, std::uint64_t seed);

std::shared_ptr<ProductTarget> make_product(TargetPtr block, std::size_t copies);

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign convention fixed so the diagonal of R is positive).
Matrix random_orthogonal(std::size_t d, std::uint64_t seed);

/// Ground truth of the banana block in closed form: moments of polynomials
/// of a Gaussian.
GroundTruth rosenbrock_block_truth(double q);

/// Funnel posterior moments by one-dimensional quadrature over theta; the
/// latents are conditionally Gaussian given theta.
GroundTruth funnel_truth(const Vector& data);

/// Maximum entry-wise relative discrepancy between the analytic gradient
/// and central finite differences at x.
double gradient_check(const TargetModel& target, ConstVectorRef x, double rel_step = 1e-5);

// Model identifiers ----------------------------------------------------------

/// Parses identifiers such as `gauss-std(d=100)`, `gauss-ill(d=100,kappa=1000)`,
/// `rosenbrock(copies=18,q=0.1)`, `funnel(d=100,seed=1)` and
/// `product(gauss-std(d=1),64)`.
TargetPtr make_model(const std::string& id);

class ModelSyntaxError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace biasctl
