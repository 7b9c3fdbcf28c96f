#pragma once

// Data-prediction model contract x_theta(x, level) and analytic Gaussian /
// Gaussian-mixture oracles with closed-form posterior means.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ersde/errors.hpp"

namespace ersde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Where the model is evaluated: level is sigma (VE) or lambda (VP); alpha is
/// 1 for VE.
struct NodeLevel {
  double alpha = 1.0;
  double level = 0.0;
};

/// x_theta contract. predict() is pure given (x, level); the evaluation
/// counter is the only mutable state and is safe to bump from many chains.
class DataPredictor {
 public:
  explicit DataPredictor(std::size_t dim) : dim_(dim) {}
  DataPredictor(const DataPredictor&) = delete;
  DataPredictor& operator=(const DataPredictor&) = delete;
  virtual ~DataPredictor() = default;

  std::size_t dim() const { return dim_; }

  Vector predict(const Vector& x, NodeLevel at) const {
    count_.fetch_add(1, std::memory_order_relaxed);
    return evaluate(x, at);
  }

  std::uint64_t eval_count() const { return count_.load(std::memory_order_relaxed); }
  void reset_count() { count_.store(0, std::memory_order_relaxed); }

 protected:
  virtual Vector evaluate(const Vector& x, NodeLevel at) const = 0;

 private:
  std::size_t dim_;
  mutable std::atomic<std::uint64_t> count_{0};
};

/// Adapts any callable (x, level) -> x_theta.
class FunctionPredictor final : public DataPredictor {
 public:
  using Fn = std::function<Vector(const Vector&, NodeLevel)>;
  FunctionPredictor(std::size_t dim, Fn fn) : DataPredictor(dim), fn_(std::move(fn)) {}

 protected:
  Vector evaluate(const Vector& x, NodeLevel at) const override { return fn_(x, at); }

 private:
  Fn fn_;
};

struct MixtureComponent {
  double weight = 1.0;
  Vector mean;
  double stddev = 1.0;  // isotropic per-component standard deviation; 0 is a point mass
};

/// Toy data distribution p_0 = sum_j w_j N(mu_j, s_j^2 I).
struct GaussianMixtureOracle {
  std::vector<MixtureComponent> components;

  std::size_t dim() const { return components.empty() ? 0 : static_cast<std::size_t>(components.front().mean.size()); }
  bool single() const { return components.size() == 1; }

  void validate() const {
    if (components.empty()) throw ParameterError("oracle: no components");
    double total = 0.0;
    for (const auto& c : components) {
      if (!(c.weight > 0.0)) throw ParameterError("oracle: weights must be positive");
      if (!(c.stddev >= 0.0)) throw ParameterError("oracle: component stddev must be non-negative");
      if (static_cast<std::size_t>(c.mean.size()) != dim() || dim() == 0)
        throw ParameterError("oracle: component means must share a positive dimension");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ParameterError("oracle: weights must sum to 1");
  }

  /// Rescales weights to sum to one.
  void normalize() {
    double total = 0.0;
    for (const auto& c : components) total += c.weight;
    if (!(total > 0.0)) throw ParameterError("oracle: weights must be positive");
    for (auto& c : components) c.weight /= total;
  }

  static GaussianMixtureOracle standard_normal(std::size_t dim = 1) {
    return gaussian(Vector::Zero(static_cast<Eigen::Index>(dim)), 1.0);
  }

  static GaussianMixtureOracle gaussian(Vector mean, double stddev) {
    GaussianMixtureOracle o;
    o.components.push_back({1.0, std::move(mean), stddev});
    return o;
  }

  /// 2-D, w = (0.5, 0.5), mu = (+-2, 0), s = 0.25.
  static GaussianMixtureOracle default_toy() {
    GaussianMixtureOracle o;
    Vector a(2), b(2);
    a << 2.0, 0.0;
    b << -2.0, 0.0;
    o.components.push_back({0.5, a, 0.25});
    o.components.push_back({0.5, b, 0.25});
    return o;
  }
};

/// E[x_0 | x_0 + sigma z = x] under the mixture.
inline Vector gaussian_posterior_mean(const GaussianMixtureOracle& oracle, const Vector& x, double sigma) {
  if (!(sigma >= 0.0)) throw ParameterError("posterior mean: sigma must be non-negative");
  if (sigma == 0.0) return x;
  const double s2 = sigma * sigma;
  const auto& comps = oracle.components;
  const double d = static_cast<double>(x.size());
  if (comps.size() == 1) {
    const auto& c = comps.front();
    const double v = c.stddev * c.stddev;
    return (v * x + s2 * c.mean) / (v + s2);
  }
  // Responsibilities in log space with max subtraction.
  std::vector<double> logw(comps.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const double var = comps[j].stddev * comps[j].stddev + s2;
    logw[j] = std::log(comps[j].weight) - 0.5 * (x - comps[j].mean).squaredNorm() / var - 0.5 * d * std::log(var);
    top = std::max(top, logw[j]);
  }
  double norm = 0.0;
  for (double& l : logw) {
    l = std::exp(l - top);
    norm += l;
  }
  Vector out = Vector::Zero(x.size());
  for (std::size_t j = 0; j < comps.size(); ++j) {
    const double v = comps[j].stddev * comps[j].stddev;
    out += (logw[j] / norm) * ((v * x + s2 * comps[j].mean) / (v + s2));
  }
  return out;
}

/// x_theta for x_t = alpha x_0 + sigma z: the posterior mean of x / alpha at
/// lambda = sigma / alpha.
inline Vector vp_predict(const GaussianMixtureOracle& oracle, const Vector& x, double alpha, double sigma) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ParameterError("vp_predict: alpha must lie in (0, 1]");
  if (!(sigma >= 0.0)) throw ParameterError("vp_predict: sigma must be non-negative");
  return gaussian_posterior_mean(oracle, x / alpha, sigma / alpha);
}

/// Predictor backed by an analytic mixture. The level passed in is sigma for
/// VE and lambda for VP, so both reduce to gaussian_posterior_mean(x / alpha, level).
class MixturePredictor final : public DataPredictor {
 public:
  explicit MixturePredictor(GaussianMixtureOracle oracle)
      : DataPredictor((oracle.validate(), oracle.dim())), oracle_(std::move(oracle)) {}

  const GaussianMixtureOracle& oracle() const { return oracle_; }

 protected:
  Vector evaluate(const Vector& x, NodeLevel at) const override {
    if (at.alpha == 1.0) return gaussian_posterior_mean(oracle_, x, at.level);
    return gaussian_posterior_mean(oracle_, x / at.alpha, at.level);
  }

 private:
  GaussianMixtureOracle oracle_;
};

enum class PredictionKind { Noise, Score, Data };

/// Converts a noise / score / data prediction at (x, alpha, sigma) into a
/// data prediction. alpha = 1 is the VE relation.
inline Vector convert_prediction(PredictionKind kind, const Vector& value, const Vector& x, double alpha, double sigma) {
  if (!(alpha > 0.0)) throw ParameterError("convert_prediction: alpha must be positive");
  switch (kind) {
    case PredictionKind::Data: return value;
    case PredictionKind::Score:
      if (!(sigma > 0.0)) throw ParameterError("convert_prediction: score conversion is singular at sigma = 0");
      return (x + (sigma * sigma) * value) / alpha;
    case PredictionKind::Noise:
      if (!(sigma > 0.0)) throw ParameterError("convert_prediction: noise conversion is singular at sigma = 0");
      return (x - sigma * value) / alpha;
  }
  throw ParameterError("convert_prediction: unknown kind");
}

/// Inverse of convert_prediction: expresses a data prediction as `kind`.
inline Vector data_prediction_as(PredictionKind kind, const Vector& x_theta, const Vector& x, double alpha,
                                 double sigma) {
  switch (kind) {
    case PredictionKind::Data: return x_theta;
    case PredictionKind::Score:
      if (!(sigma > 0.0)) throw ParameterError("data_prediction_as: singular at sigma = 0");
      return -(x - alpha * x_theta) / (sigma * sigma);
    case PredictionKind::Noise:
      if (!(sigma > 0.0)) throw ParameterError("data_prediction_as: singular at sigma = 0");
      return (x - alpha * x_theta) / sigma;
  }
  throw ParameterError("data_prediction_as: unknown kind");
}

}  // namespace ersde
