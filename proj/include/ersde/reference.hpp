#pragma once

// Independent references for the solvers: exact Gaussian marginals, exact
// moment propagation of the (affine) solver recursion for single-Gaussian
// data, a high-resolution quadrature step, a fine RK4 probability-flow
// integrator, and two-sample metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "ersde/errors.hpp"
#include "ersde/noise_scale.hpp"
#include "ersde/parallel.hpp"
#include "ersde/predictors.hpp"
#include "ersde/rng.hpp"
#include "ersde/schedules.hpp"
#include "ersde/solvers.hpp"

namespace ersde {

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

/// Moments of x_t = alpha x_0 + sigma z for single-Gaussian data.
inline GaussianMoments exact_gaussian_marginal(const GaussianMixtureOracle& oracle, double alpha, double sigma) {
  oracle.validate();
  if (!oracle.single()) throw ParameterError("exact_gaussian_marginal: mixture oracles are unsupported");
  const auto& c = oracle.components.front();
  const auto d = static_cast<Eigen::Index>(oracle.dim());
  const double var = alpha * alpha * c.stddev * c.stddev + sigma * sigma;
  return {alpha * c.mean, var * Matrix::Identity(d, d)};
}

/// Moments of the mixture marginal alpha x_0 + sigma z.
inline GaussianMoments mixture_moments(const GaussianMixtureOracle& oracle, double alpha, double sigma) {
  oracle.validate();
  const auto d = static_cast<Eigen::Index>(oracle.dim());
  Vector mean = Vector::Zero(d);
  for (const auto& c : oracle.components) mean += c.weight * c.mean;
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& c : oracle.components) {
    const Vector dm = c.mean - mean;
    cov += c.weight * (c.stddev * c.stddev * Matrix::Identity(d, d) + dm * dm.transpose());
  }
  return {alpha * mean, alpha * alpha * cov + sigma * sigma * Matrix::Identity(d, d)};
}

/// Exact draws from alpha x_0 + sigma z.
inline std::vector<Vector> sample_marginal(const GaussianMixtureOracle& oracle, double alpha, double sigma,
                                           std::size_t n, std::uint64_t seed) {
  oracle.validate();
  const auto d = static_cast<Eigen::Index>(oracle.dim());
  std::vector<Vector> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    ChainRng rng(seed, i, StreamKind::Reference);
    const double u = rng.uniform();
    std::size_t j = 0;
    double acc = oracle.components[0].weight;
    while (u >= acc && j + 1 < oracle.components.size()) acc += oracle.components[++j].weight;
    const auto& c = oracle.components[j];
    const Vector x0 = c.mean + c.stddev * rng.normal_vector(d);
    out[i] = alpha * x0 + sigma * rng.normal_vector(d);
  }
  return out;
}

namespace detail {

// Per-dimension affine form m + sum_j coef_j xi_j over independent standard
// normals xi (index 0: prior, index i: step i noise). Isotropy makes the
// coefficients shared by every dimension.
struct AffineForm {
  Vector mean;
  std::vector<double> coef;

  AffineForm scaled(double s) const {
    AffineForm out{s * mean, coef};
    for (double& c : out.coef) c *= s;
    return out;
  }
  AffineForm& add(const AffineForm& o, double s = 1.0) {
    mean += s * o.mean;
    for (std::size_t j = 0; j < coef.size(); ++j) coef[j] += s * o.coef[j];
    return *this;
  }
  double variance() const {
    return std::inner_product(coef.begin(), coef.end(), coef.begin(), 0.0);
  }
};

}  // namespace detail

/// Exact per-node mean and covariance of the solver's sampling distribution
/// for single-Gaussian data, starting from N(prior_mean, prior_std^2 I).
/// x_theta is affine in x here, so composing the step maps needs no Monte
/// Carlo. Covers orders 1-3 including the multistep buffers.
inline std::vector<GaussianMoments> propagate_affine(const SamplerConfig& cfg, const GaussianMixtureOracle& oracle,
                                                     const Vector& prior_mean, double prior_std) {
  cfg.validate();
  oracle.validate();
  if (!oracle.single()) throw ParameterError("propagate_affine: mixture oracles are unsupported");
  const auto& comp = oracle.components.front();
  const auto d = static_cast<Eigen::Index>(oracle.dim());
  if (prior_mean.size() != d) throw ParameterError("propagate_affine: prior dimension mismatch");
  const double v = comp.stddev * comp.stddev;
  const std::size_t m = cfg.grid.steps();
  const auto coeffs = precompute_coefficients(cfg);

  using detail::AffineForm;
  auto zero = [&] { return AffineForm{Vector::Zero(d), std::vector<double>(m + 1, 0.0)}; };
  auto moments = [&](const AffineForm& f) {
    return GaussianMoments{f.mean, f.variance() * Matrix::Identity(d, d)};
  };

  AffineForm x = zero();
  x.mean = prior_mean;
  x.coef[0] = prior_std;
  std::vector<GaussianMoments> out;
  out.reserve(m + 1);
  out.push_back(moments(x));

  std::optional<AffineForm> q;  // buffered prediction
  double q_level = 0.0;
  std::optional<AffineForm> qd;  // buffered divided difference
  double qd_far = 0.0;

  for (std::size_t i = 1; i <= m; ++i) {
    const NodeLevel s = cfg.node(i - 1);
    const NodeLevel t = cfg.node(i);
    const auto& c = coeffs[i - 1];
    // x_theta(x, l) = a x / alpha + b mu
    const double l2 = s.level * s.level;
    const double a = v / (v + l2);
    const double b = l2 / (v + l2);
    AffineForm x0 = x.scaled(a / s.alpha);
    x0.mean += b * comp.mean;

    AffineForm next = x.scaled(c.r_alpha * c.r);
    next.add(x0, t.alpha * (1.0 - c.r));
    if (cfg.order >= 2 && q) {
      AffineForm diff = x0;
      diff.add(*q, -1.0);
      diff = diff.scaled(1.0 / (s.level - q_level));
      next.add(diff, t.alpha * c.delta1_coeff);
      if (cfg.order >= 3) {
        if (qd) {
          AffineForm u = diff;
          u.add(*qd, -1.0);
          u = u.scaled(2.0 / (s.level - qd_far));
          next.add(u, t.alpha * c.delta2_coeff);
        }
        qd = diff;
        qd_far = q_level;
      }
    }
    next.coef[i] += t.alpha * c.noise_std;
    q = x0;
    q_level = s.level;
    x = std::move(next);
    out.push_back(moments(x));
  }
  return out;
}

/// Integral term phi(l_t) int_{l_t}^{l_s} phi'(l)/phi(l)^2 x_theta(x(l), l) dl
/// by an n-point midpoint rule. x(l) interpolates linearly between x_prev at
/// l_s and x_next at l_t (x_prev throughout when x_next is absent); for VP the
/// interior alpha follows 1/sqrt(1 + lambda^2).
inline Vector reference_nonlinear_term(const Vector& x_prev, NodeLevel prev, NodeLevel next, const NoiseScaleFn& phi,
                                       const DataPredictor& model, const std::optional<Vector>& x_next = std::nullopt,
                                       std::size_t points = 10000) {
  const double ls = prev.level;
  const double lt = next.level;
  if (!(lt > 0.0 && lt < ls)) throw ParameterError("reference step: need 0 < level_next < level_prev");
  if (points < 1) throw ParameterError("reference step: need at least one point");
  const bool vp = prev.alpha != 1.0 || next.alpha != 1.0;
  const Vector& end = x_next ? *x_next : x_prev;
  const double h = (ls - lt) / static_cast<double>(points);
  Vector acc = Vector::Zero(x_prev.size());
  for (std::size_t k = 0; k < points; ++k) {
    const double l = lt + (static_cast<double>(k) + 0.5) * h;
    const double w = (ls - l) / (ls - lt);  // 0 at l_s, 1 at l_t
    const Vector xl = (1.0 - w) * x_prev + w * end;
    const double a = vp ? 1.0 / std::sqrt(1.0 + l * l) : 1.0;
    const double f = phi(l);
    acc += (phi.derivative(l) / (f * f) * h) * model.predict(xl, {a, l});
  }
  return phi(lt) * acc;
}

/// Noise-free part of the exact step: linear term plus the quadrature
/// nonlinear term, scaled by alpha_t for VP.
inline Vector reference_step(const Vector& x_prev, NodeLevel prev, NodeLevel next, const NoiseScaleFn& phi,
                             const DataPredictor& model, const std::optional<Vector>& x_next = std::nullopt,
                             std::size_t points = 10000) {
  const double r = phi(next.level) / phi(prev.level);
  return (next.alpha / prev.alpha * r) * x_prev +
         next.alpha * reference_nonlinear_term(x_prev, prev, next, phi, model, x_next, points);
}

/// Probability-flow ODE dy/dl = (y - x_theta(alpha y, l)) / l with y = x / alpha,
/// integrated by classical RK4 in log(l). A level_end of zero stops at
/// 1e-9 * level_start and returns the state there.
inline Vector reference_flow(const Vector& x_start, NodeLevel start, NodeLevel end, const DataPredictor& model,
                             std::size_t steps = 20000) {
  if (!(start.level > 0.0 && end.level < start.level && end.level >= 0.0))
    throw ParameterError("reference_flow: need 0 <= level_end < level_start");
  const bool vp = start.alpha != 1.0 || end.alpha != 1.0;
  const double l_end = end.level > 0.0 ? end.level : 1e-9 * start.level;
  const double s0 = std::log(start.level);
  const double s1 = std::log(l_end);
  const double h = (s1 - s0) / static_cast<double>(steps);
  auto rhs = [&](const Vector& y, double s) -> Vector {
    const double l = std::exp(s);
    const double a = vp ? 1.0 / std::sqrt(1.0 + l * l) : 1.0;
    return y - model.predict(a * y, {a, l});
  };
  Vector y = x_start / start.alpha;
  for (std::size_t k = 0; k < steps; ++k) {
    const double s = s0 + static_cast<double>(k) * h;
    const Vector k1 = rhs(y, s);
    const Vector k2 = rhs(y + 0.5 * h * k1, s + 0.5 * h);
    const Vector k3 = rhs(y + 0.5 * h * k2, s + 0.5 * h);
    const Vector k4 = rhs(y + h * k3, s + h);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return end.alpha * y;
}

/// Closed-form probability-flow map for single-Gaussian data:
/// y_end = mu + sqrt((s^2 + l_end^2) / (s^2 + l_start^2)) (y_start - mu).
inline Vector exact_gaussian_flow(const GaussianMixtureOracle& oracle, const Vector& x_start, NodeLevel start,
                                  NodeLevel end) {
  if (!oracle.single()) throw ParameterError("exact_gaussian_flow: mixture oracles are unsupported");
  const auto& c = oracle.components.front();
  const double v = c.stddev * c.stddev;
  const double k = std::sqrt((v + end.level * end.level) / (v + start.level * start.level));
  const Vector y = x_start / start.alpha;
  return end.alpha * (c.mean + k * (y - c.mean));
}

namespace detail {

inline Matrix pack_columns(const std::vector<Vector>& v) {
  Matrix m(v.front().size(), static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

// Mean Euclidean distance over all (i, j) pairs; `same` exploits symmetry.
inline double mean_pair_distance(const Matrix& a, const Matrix& b, bool same) {
  const Eigen::Index na = a.cols();
  const Eigen::Index nb = b.cols();
  const Eigen::Index dim = a.rows();
  std::vector<double> row_sums(static_cast<std::size_t>(na), 0.0);
  parallel_blocks(static_cast<std::size_t>(na), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      // Kahan-compensated row sum.
      double s = 0.0;
      double comp = 0.0;
      const double* ai = a.data() + ii * dim;
      for (Eigen::Index j = same ? ii + 1 : 0; j < nb; ++j) {
        const double* bj = b.data() + j * dim;
        double sq = 0.0;
        for (Eigen::Index k = 0; k < dim; ++k) {
          const double diff = ai[k] - bj[k];
          sq += diff * diff;
        }
        const double y = std::sqrt(sq) - comp;
        const double t = s + y;
        comp = (t - s) - y;
        s = t;
      }
      row_sums[i] = s;
    }
  });
  double total = 0.0;
  for (double s : row_sums) total += s;
  if (same) total *= 2.0;
  return total / (static_cast<double>(na) * static_cast<double>(nb));
}

inline std::vector<Vector> subsample(const std::vector<Vector>& v, std::size_t cap, std::uint64_t seed) {
  if (v.size() <= cap) return v;
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  ChainRng rng(seed, 0, StreamKind::Subsample);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<Vector> out;
  out.reserve(cap);
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace detail

/// Energy statistic 2 E|A - B| - E|A - A'| - E|B - B'| over all pairs
/// (V-statistic form, zero iff the empirical distributions coincide). Batches
/// above `max_points` are subsampled deterministically.
inline double energy_distance(const std::vector<Vector>& a, const std::vector<Vector>& b,
                              std::size_t max_points = 10000, std::uint64_t seed = 0) {
  if (a.empty() || b.empty()) throw ParameterError("energy_distance: empty batch");
  if (a.front().size() != b.front().size()) throw ParameterError("energy_distance: dimension mismatch");
  const Matrix ma = detail::pack_columns(detail::subsample(a, max_points, seed));
  const Matrix mb = detail::pack_columns(detail::subsample(b, max_points, seed + 1));
  const double ab = detail::mean_pair_distance(ma, mb, false);
  const double aa = detail::mean_pair_distance(ma, ma, true);
  const double bb = detail::mean_pair_distance(mb, mb, true);
  const double stat = 2.0 * ab - aa - bb;
  // Below the summation noise floor the batches are equal as multisets.
  return stat <= 1e-12 * ab ? 0.0 : stat;
}

struct MetricReport {
  double mean_error = 0.0;       // |sample mean - target mean|
  double cov_error = 0.0;        // max |sample cov - target cov|
  double energy_distance = 0.0;  // against the reference batch
  std::size_t samples = 0;
  std::size_t reference_samples = 0;
};

inline GaussianMoments empirical_moments(const std::vector<Vector>& xs) {
  if (xs.empty()) throw ParameterError("empirical_moments: empty batch");
  const auto d = xs.front().size();
  Vector mean = Vector::Zero(d);
  for (const auto& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& x : xs) {
    const Vector dx = x - mean;
    cov += dx * dx.transpose();
  }
  cov /= static_cast<double>(xs.size() > 1 ? xs.size() - 1 : 1);
  return {mean, cov};
}

inline MetricReport compute_metrics(const std::vector<Vector>& samples, const std::vector<Vector>& reference,
                                     const GaussianMoments& target, std::size_t max_points = 10000) {
  const auto emp = empirical_moments(samples);
  MetricReport rep;
  rep.mean_error = (emp.mean - target.mean).norm();
  rep.cov_error = (emp.cov - target.cov).cwiseAbs().maxCoeff();
  rep.energy_distance = energy_distance(samples, reference, max_points);
  rep.samples = samples.size();
  rep.reference_samples = reference.size();
  return rep;
}

}  // namespace ersde
