#pragma once

#include <atomic>
#include <cmath>
#include <numeric>
#include <vector>

#include "biasctl/targets.hpp"

namespace testing_support {

using biasctl::ConstVectorRef;
using biasctl::VectorRef;

inline double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Standard error of the mean from non-overlapping batches.
inline double batch_se(const std::vector<double>& x, std::size_t batches = 100) {
  const std::size_t len = x.size() / batches;
  std::vector<double> m(batches, 0.0);
  for (std::size_t b = 0; b < batches; ++b) {
    for (std::size_t i = 0; i < len; ++i) m[b] += x[b * len + i];
    m[b] /= static_cast<double>(len);
  }
  const double mu = mean(m);
  double ss = 0.0;
  for (double v : m) ss += (v - mu) * (v - mu);
  return std::sqrt(ss / static_cast<double>(batches - 1) / static_cast<double>(batches));
}

// Forwards to a target and counts gradient evaluations.
class CountingTarget final : public biasctl::TargetModel {
 public:
  explicit CountingTarget(biasctl::TargetPtr base) : base_(std::move(base)) { truth_ = base_->truth(); }
  std::size_t dim() const override { return base_->dim(); }
  std::string name() const override { return base_->name(); }
  double value_and_gradient(ConstVectorRef x, VectorRef g) const override {
    ++calls;
    return base_->value_and_gradient(x, g);
  }
  double neg_log_density(ConstVectorRef x) const override { return base_->neg_log_density(x); }
  mutable std::atomic<long> calls{0};

 private:
  biasctl::TargetPtr base_;
};

// One velocity Verlet step on N(0, s2) in closed form: kick, drift, kick.
inline void verlet_1d(double s2, double eps, double& x, double& u) {
  const double uh = u - 0.5 * eps * x / s2;
  x = x + eps * uh;
  u = uh - 0.5 * eps * x / s2;
}

}  // namespace testing_support
