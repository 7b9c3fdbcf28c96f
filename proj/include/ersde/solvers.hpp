#pragma once

// ER-SDE solvers of orders 1-3 for VE (integration variable sigma) and VP
// (integration variable lambda = sigma / alpha) parameterizations.
//
// One step from level l_s to level l_t (l_t < l_s) computes
//
//   x_t = (a_t / a_s) r x_s + a_t (1 - r) x0
//       + a_t [l_t - l_s + S phi(l_t)] D                      (order >= 2)
//       + a_t [(l_t - l_s)^2 / 2 + S_d phi(l_t)] U            (order 3)
//       + a_t sqrt(l_t^2 - r^2 l_s^2) z
//
// with r = phi(l_t) / phi(l_s), x0 = x_theta(x_s, l_s), D and U the first and
// second divided differences of buffered predictions, and S, S_d left-endpoint
// N-point sums of 1/phi and (l - l_s)/phi over [l_t, l_s]. VE is the case
// a = 1. Multistep buffers start empty, so the first steps fall back to lower
// orders; every step costs exactly one model evaluation.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ersde/errors.hpp"
#include "ersde/noise_scale.hpp"
#include "ersde/parallel.hpp"
#include "ersde/predictors.hpp"
#include "ersde/rng.hpp"
#include "ersde/schedules.hpp"

namespace ersde {

struct StepCoefficients {
  double r = 0.0;          // phi(l_t) / phi(l_s)
  double r_alpha = 1.0;    // a_t / a_s
  double noise_std = 0.0;  // sqrt(l_t^2 - r^2 l_s^2), before the a_t factor
  double S = 0.0;          // sum_k dl / phi(l_t + k dl)
  double S_d = 0.0;        // sum_k (l_t + k dl - l_s) / phi(l_t + k dl) dl
  double delta1_coeff = 0.0;
  double delta2_coeff = 0.0;
};

namespace detail {

// Radicand jitter tolerated at the ODE boundary, relative to l_t^2.
inline constexpr double kRadicandSlack = 1e-12;

inline double noise_std(const NoiseScaleFn& phi, double l_s, double l_t) {
  if (l_t == 0.0) return 0.0;
  // l_t^2 - r^2 l_s^2 = l_t^2 (1 - q^2) with q = (phi(l_t)/l_t) / (phi(l_s)/l_s);
  // q is exactly 1 for phi(x) = x.
  const double q = phi.slope_ratio(l_t) / phi.slope_ratio(l_s);
  const double rad = (1.0 - q) * (1.0 + q);
  if (rad < 0.0) {
    if (rad < -kRadicandSlack) {
      throw AdmissibilityError(phi.name() + ": negative noise variance between levels " + std::to_string(l_s) +
                               " and " + std::to_string(l_t));
    }
    return 0.0;
  }
  return l_t * std::sqrt(rad);
}

// S * phi(l_t) with the l_t -> 0 limit phi(0+) = 0.
inline double times_phi(double sum, double phi_t) { return phi_t == 0.0 ? 0.0 : sum * phi_t; }

}  // namespace detail

/// Left-endpoint sum approximating the integral of 1/phi over [l_t, l_s].
inline double quadrature_S(const NoiseScaleFn& phi, double l_s, double l_t, std::size_t n) {
  if (n < 1) throw ParameterError("quadrature: need N >= 1");
  const double dl = (l_s - l_t) / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) sum += dl / phi(l_t + static_cast<double>(k) * dl);
  return sum;
}

/// Left-endpoint sum approximating the integral of (l - l_s)/phi over [l_t, l_s].
inline double quadrature_S_d(const NoiseScaleFn& phi, double l_s, double l_t, std::size_t n) {
  if (n < 1) throw ParameterError("quadrature: need N >= 1");
  const double dl = (l_s - l_t) / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double l = l_t + static_cast<double>(k) * dl;
    sum += (l - l_s) / phi(l) * dl;
  }
  return sum;
}

/// Coefficients of one step. The quadratures are skipped (left at 0) when
/// `order` does not need them.
inline StepCoefficients step_coefficients(const NoiseScaleFn& phi, NodeLevel prev, NodeLevel next,
                                          std::size_t quadrature_points, int order = 3) {
  const double ls = prev.level;
  const double lt = next.level;
  StepCoefficients c;
  const double phi_s = phi(ls);
  const double phi_t = phi(lt);
  c.r = phi_t / phi_s;
  c.r_alpha = next.alpha / prev.alpha;
  c.noise_std = detail::noise_std(phi, ls, lt);
  if (order >= 2 && lt < ls) {
    c.S = quadrature_S(phi, ls, lt, quadrature_points);
    c.delta1_coeff = (lt - ls) + detail::times_phi(c.S, phi_t);
  }
  if (order >= 3 && lt < ls) {
    c.S_d = quadrature_S_d(phi, ls, lt, quadrature_points);
    const double h = lt - ls;
    c.delta2_coeff = h * h / 2.0 + detail::times_phi(c.S_d, phi_t);
  }
  return c;
}

/// Q / Q_d buffers carried between steps of one chain.
struct MultistepBuffer {
  std::optional<Vector> prediction;  // x_theta at the node before the current one
  double prediction_level = 0.0;
  std::optional<Vector> difference;  // previous first divided difference
  double difference_far_level = 0.0; // older of the two levels it spans

  bool empty() const { return !prediction && !difference; }
  void clear() { *this = MultistepBuffer{}; }
};

/// Generic step of order `order` (1..3). Returns the new state; the effective
/// order after warm-up degradation is written to `used_order` when given.
inline Vector er_sde_step(const Vector& x_prev, NodeLevel prev, NodeLevel next, const NoiseScaleFn& phi,
                          const DataPredictor& model, const Vector& z, MultistepBuffer& buffer, int order,
                          std::size_t quadrature_points, const StepCoefficients* precomputed = nullptr,
                          int* used_order = nullptr) {
  if (order < 1 || order > 3) throw ParameterError("solver order must be 1, 2 or 3");
  if (!(next.level <= prev.level)) throw ParameterError("step: levels must not increase");
  if (z.size() != x_prev.size()) throw ParameterError("step: noise dimension mismatch");

  StepCoefficients local;
  if (!precomputed) local = step_coefficients(phi, prev, next, quadrature_points, order);
  const StepCoefficients& c = precomputed ? *precomputed : local;

  const Vector x0 = model.predict(x_prev, prev);
  if (x0.size() != x_prev.size()) throw SolverError("model output dimension mismatch");

  const double a_t = next.alpha;
  Vector x = (c.r_alpha * c.r) * x_prev + (a_t * (1.0 - c.r)) * x0;
  int eff = 1;

  if (order >= 2 && buffer.prediction) {
    const double gap = prev.level - buffer.prediction_level;
    if (gap == 0.0) throw SolverError("divided difference: repeated level " + std::to_string(prev.level));
    Vector d = (x0 - *buffer.prediction) / gap;
    x = x + (a_t * c.delta1_coeff) * d;
    eff = 2;
    if (order >= 3) {
      if (buffer.difference) {
        const double span = (prev.level - buffer.difference_far_level) / 2.0;
        if (span == 0.0) throw SolverError("second divided difference: repeated level " + std::to_string(prev.level));
        const Vector u = (d - *buffer.difference) / span;
        x = x + (a_t * c.delta2_coeff) * u;
        eff = 3;
      }
      buffer.difference = std::move(d);
      buffer.difference_far_level = buffer.prediction_level;
    }
  }

  if (c.noise_std != 0.0) x = x + (a_t * c.noise_std) * z;
  buffer.prediction = x0;
  buffer.prediction_level = prev.level;
  if (used_order) *used_order = eff;
  if (!x.allFinite()) throw SolverError("non-finite state");
  return x;
}

// Named entry points for the VE and VP families.

inline Vector ve_step_order1(const Vector& x_prev, double sigma_prev, double sigma_next, const NoiseScaleFn& phi,
                             const DataPredictor& model, const Vector& z) {
  MultistepBuffer none;
  return er_sde_step(x_prev, {1.0, sigma_prev}, {1.0, sigma_next}, phi, model, z, none, 1, 1);
}

inline Vector ve_step_order2(const Vector& x_prev, double sigma_prev, double sigma_next, const NoiseScaleFn& phi,
                             const DataPredictor& model, const Vector& z, MultistepBuffer& buffer,
                             std::size_t quadrature_points = 100) {
  return er_sde_step(x_prev, {1.0, sigma_prev}, {1.0, sigma_next}, phi, model, z, buffer, 2, quadrature_points);
}

inline Vector ve_step_order3(const Vector& x_prev, double sigma_prev, double sigma_next, const NoiseScaleFn& phi,
                             const DataPredictor& model, const Vector& z, MultistepBuffer& buffer,
                             std::size_t quadrature_points = 100) {
  return er_sde_step(x_prev, {1.0, sigma_prev}, {1.0, sigma_next}, phi, model, z, buffer, 3, quadrature_points);
}

/// VP step; nodes carry (alpha, lambda).
inline Vector vp_step_orderk(const Vector& x_prev, NodeLevel node_prev, NodeLevel node_next, const NoiseScaleFn& phi,
                             const DataPredictor& model, const Vector& z, MultistepBuffer& buffer, int order,
                             std::size_t quadrature_points = 100) {
  return er_sde_step(x_prev, node_prev, node_next, phi, model, z, buffer, order, quadrature_points);
}

struct SamplerConfig {
  int order = 3;
  Parameterization param = Parameterization::VE;
  std::size_t quadrature_points = 100;
  NoiseScaleFn phi = default_phi();
  TimeGrid grid;
  std::uint64_t seed = 0;
  bool keep_trajectory = true;

  void validate() const {
    if (order < 1 || order > 3) throw ParameterError("order must be 1, 2 or 3");
    if (quadrature_points < 1) throw ParameterError("quadrature_points must be >= 1");
    grid.validate();
  }

  NodeLevel node(std::size_t i) const {
    if (param == Parameterization::VE) return {1.0, grid.sigma[i]};
    return {grid.alpha[i], grid.lambda[i]};
  }
};

struct Trajectory {
  std::vector<Vector> states;  // every node, or {x_T, x_final} without keep_trajectory
  const Vector& terminal() const { return states.back(); }
};

struct RunRecord {
  std::size_t steps = 0;
  std::size_t chains = 0;
  std::uint64_t nfe = 0;              // model calls made by this run
  std::vector<int> step_orders;       // effective order per step (warm-up ladder)
  std::vector<StepCoefficients> coefficients;
  std::optional<std::size_t> first_full_order_step;  // 1-based
  std::vector<std::string> warnings;
};

struct SampleResult {
  std::vector<Trajectory> trajectories;
  RunRecord record;
};

/// Coefficients for every step of the configured grid, shared by all chains.
inline std::vector<StepCoefficients> precompute_coefficients(const SamplerConfig& cfg) {
  std::vector<StepCoefficients> out;
  const std::size_t m = cfg.grid.steps();
  out.reserve(m);
  for (std::size_t i = 1; i <= m; ++i) {
    // The first step never uses the quadratures; the second needs only S.
    const int need = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.order), i));
    out.push_back(step_coefficients(cfg.phi, cfg.node(i - 1), cfg.node(i), cfg.quadrature_points, need));
  }
  return out;
}

/// Effective order of each step after warm-up degradation.
inline std::vector<int> warmup_ladder(int order, std::size_t steps) {
  std::vector<int> out(steps);
  for (std::size_t i = 0; i < steps; ++i) out[i] = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(order), i + 1));
  return out;
}

/// Prior draws at t_0: N(0, sigma_0^2 I) for VE, N(0, I) for VP.
inline std::vector<Vector> draw_prior(const SamplerConfig& cfg, std::size_t dim, std::size_t chains) {
  const double scale = cfg.param == Parameterization::VE ? cfg.grid.sigma.front() : 1.0;
  std::vector<Vector> out(chains);
  for (std::size_t c = 0; c < chains; ++c) {
    ChainRng rng(cfg.seed, c, StreamKind::Prior);
    out[c] = scale * rng.normal_vector(static_cast<Eigen::Index>(dim));
  }
  return out;
}

/// Runs one chain in place. `rng` supplies one z per step, in step order.
inline Trajectory run_chain(const SamplerConfig& cfg, const std::vector<StepCoefficients>& coeffs,
                            const DataPredictor& model, const Vector& x_T, ChainRng& rng) {
  Trajectory traj;
  const std::size_t m = cfg.grid.steps();
  traj.states.reserve(cfg.keep_trajectory ? m + 1 : 2);
  traj.states.push_back(x_T);
  Vector x = x_T;
  MultistepBuffer buffer;
  for (std::size_t i = 1; i <= m; ++i) {
    const Vector z = rng.normal_vector(x.size());
    try {
      x = er_sde_step(x, cfg.node(i - 1), cfg.node(i), cfg.phi, model, z, buffer, cfg.order, cfg.quadrature_points,
                      &coeffs[i - 1]);
    } catch (const AdmissibilityError& e) {
      throw AdmissibilityError("step " + std::to_string(i) + ": " + e.what());
    } catch (const SolverError& e) {
      throw SolverError("step " + std::to_string(i) + ": " + e.what());
    }
    if (cfg.keep_trajectory) traj.states.push_back(x);
  }
  if (!cfg.keep_trajectory) traj.states.push_back(x);
  return traj;
}

/// Samples every chain of x_T. Chain c draws its step noise from
/// ChainRng(seed, c), so results do not depend on the worker count.
inline SampleResult sample(const SamplerConfig& cfg, const DataPredictor& model, const std::vector<Vector>& x_T) {
  cfg.validate();
  for (const auto& x : x_T)
    if (static_cast<std::size_t>(x.size()) != model.dim()) throw ParameterError("sample: x_T dimension mismatch");

  SampleResult res;
  const std::size_t m = cfg.grid.steps();
  auto& rec = res.record;
  rec.steps = m;
  rec.chains = x_T.size();
  rec.coefficients = precompute_coefficients(cfg);
  rec.step_orders = warmup_ladder(cfg.order, m);
  if (m >= static_cast<std::size_t>(cfg.order)) {
    rec.first_full_order_step = static_cast<std::size_t>(cfg.order);
  } else {
    rec.warnings.push_back("order " + std::to_string(cfg.order) + " needs at least " + std::to_string(cfg.order) +
                           " steps; every step ran at reduced order (warm-up)");
  }

  const std::uint64_t before = model.eval_count();
  res.trajectories.resize(x_T.size());
  parallel_blocks(x_T.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      ChainRng rng(cfg.seed, c, StreamKind::StepNoise);
      res.trajectories[c] = run_chain(cfg, rec.coefficients, model, x_T[c], rng);
    }
  });
  rec.nfe = model.eval_count() - before;
  return res;
}

}  // namespace ersde
