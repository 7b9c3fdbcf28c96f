#pragma once

// Forward-diffusion noise schedules (alpha_t, sigma_t), the induced
// lambda_t = sigma_t / alpha_t, and the solver time grids built on them.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "ersde/errors.hpp"

namespace ersde {

enum class ScheduleKind {
  VE,         // EDM identification: alpha = 1, sigma(t) = t
  VPLinear,   // alpha_t = exp(-t^2 (b_max - b_min) / 4 - t b_min / 2)
  VPCosine,   // alpha_t = f(t) / f(0), f(t) = cos^2((t + s) / (1 + s) * pi / 2)
  VPFromEDM,  // alpha_t = s(t), sigma_t = s(t) sigma(t), sigma(t)^2 = exp(b_d t^2 / 2 + b_min t) - 1
};

enum class Parameterization { VE, VP };

/// How a grid ends: appended sigma = 0 node, or stopping at the small
/// positive endpoint (sigma_min / epsilon).
enum class Terminal { Zero, Epsilon };

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::VE: return "ve-edm";
    case ScheduleKind::VPLinear: return "vp-linear";
    case ScheduleKind::VPCosine: return "vp-cosine";
    case ScheduleKind::VPFromEDM: return "vp-from-edm";
  }
  return "?";
}

struct ScheduleParams {
  double beta_min = 0.1;   // linear / from-EDM
  double beta_max = 20.0;  // linear
  double beta_d = 19.9;    // from-EDM
  double cosine_s = 0.008;
  double sigma_min = 0.002;  // EDM
  double sigma_max = 80.0;   // EDM
  double rho = 7.0;          // EDM
};

/// alpha_t of the linear VP schedule.
inline double linear_vp_alpha(double t, double beta_min = 0.1, double beta_max = 20.0) {
  if (!(t >= 0.0 && t <= 1.0)) throw ParameterError("linear_vp_alpha: t must lie in [0, 1]");
  return std::exp(-0.25 * t * t * (beta_max - beta_min) - 0.5 * t * beta_min);
}

/// Immutable forward-diffusion schedule. Times live in [t_min(), t_max()].
class NoiseSchedule {
 public:
  static NoiseSchedule ve(double sigma_max = 80.0) {
    if (!(sigma_max > 0.0)) throw ParameterError("ve schedule: sigma_max must be positive");
    ScheduleParams p;
    p.sigma_max = sigma_max;
    return NoiseSchedule(ScheduleKind::VE, p, 0.0, sigma_max);
  }

  static NoiseSchedule vp_linear(double beta_min = 0.1, double beta_max = 20.0) {
    if (!(beta_min >= 0.0 && beta_max >= beta_min))
      throw ParameterError("vp-linear schedule: need 0 <= beta_min <= beta_max");
    ScheduleParams p;
    p.beta_min = beta_min;
    p.beta_max = beta_max;
    p.beta_d = beta_max - beta_min;
    return NoiseSchedule(ScheduleKind::VPLinear, p, 0.0, 1.0);
  }

  /// Cosine schedule. t_max stays below 1 where alpha vanishes.
  static NoiseSchedule vp_cosine(double s = 0.008, double t_max = 0.9946) {
    if (!(s > 0.0)) throw ParameterError("vp-cosine schedule: s must be positive");
    if (!(t_max > 0.0 && t_max < 1.0)) throw ParameterError("vp-cosine schedule: t_max must lie in (0, 1)");
    ScheduleParams p;
    p.cosine_s = s;
    return NoiseSchedule(ScheduleKind::VPCosine, p, 0.0, t_max);
  }

  /// EDM's VP form with explicit (beta_d, beta_min).
  static NoiseSchedule vp_from_edm_constants(double beta_d, double beta_min) {
    if (!(beta_d > 0.0)) throw ParameterError("vp-from-edm schedule: beta_d must be positive");
    ScheduleParams p;
    p.beta_d = beta_d;
    p.beta_min = beta_min;
    NoiseSchedule s(ScheduleKind::VPFromEDM, p, 0.0, 1.0);
    // L(t) = beta_d t^2 / 2 + beta_min t must be non-negative on the domain.
    s.t_min_ = s.quadratic_root(0.0);
    if (!(s.t_min_ < 1.0)) throw ParameterError("vp-from-edm schedule: empty domain");
    return s;
  }

  ScheduleKind kind() const { return kind_; }
  const ScheduleParams& params() const { return params_; }
  bool is_vp() const { return kind_ != ScheduleKind::VE; }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }

  double alpha(double t) const {
    switch (kind_) {
      case ScheduleKind::VE: return 1.0;
      case ScheduleKind::VPLinear:
      case ScheduleKind::VPFromEDM: return std::exp(-0.5 * log_snr_quadratic(t));
      case ScheduleKind::VPCosine: return cosine_f(t) / cosine_f(0.0);
    }
    return 1.0;
  }

  double sigma(double t) const {
    switch (kind_) {
      case ScheduleKind::VE: return t;
      case ScheduleKind::VPLinear:
      case ScheduleKind::VPFromEDM: return std::sqrt(-std::expm1(-log_snr_quadratic(t)));
      case ScheduleKind::VPCosine: {
        const double a = alpha(t);
        return std::sqrt((1.0 - a) * (1.0 + a));
      }
    }
    return 0.0;
  }

  /// lambda_t = sigma_t / alpha_t; equals sigma_t for VE.
  double lambda(double t) const {
    switch (kind_) {
      case ScheduleKind::VE: return t;
      case ScheduleKind::VPLinear:
      case ScheduleKind::VPFromEDM: return std::sqrt(std::expm1(log_snr_quadratic(t)));
      case ScheduleKind::VPCosine: return sigma(t) / alpha(t);
    }
    return 0.0;
  }

  /// alpha as a function of lambda. Uses alpha^2 + sigma^2 = 1 for VP kinds.
  double alpha_of_level(double level) const {
    if (!is_vp()) return 1.0;
    return 1.0 / std::sqrt(1.0 + level * level);
  }

  /// Closed-form inverse of lambda(t) (sigma(t) for VE).
  double time_of_level(double level) const {
    if (!(level >= 0.0)) throw ParameterError("time_of_level: level must be non-negative");
    switch (kind_) {
      case ScheduleKind::VE: return level;
      case ScheduleKind::VPLinear:
      case ScheduleKind::VPFromEDM: return quadratic_root(std::log1p(level * level));
      case ScheduleKind::VPCosine: {
        const double a = alpha_of_level(level);
        const double s = params_.cosine_s;
        const double theta = std::acos(std::sqrt(a * cosine_f(0.0)));
        return 2.0 * (1.0 + s) * theta / std::numbers::pi - s;
      }
    }
    return 0.0;
  }

 private:
  NoiseSchedule(ScheduleKind kind, ScheduleParams params, double t_min, double t_max)
      : kind_(kind), params_(params), t_min_(t_min), t_max_(t_max) {}

  // log(1 + lambda^2) for the quadratic families.
  double log_snr_quadratic(double t) const {
    return 0.5 * params_.beta_d * t * t + params_.beta_min * t;
  }

  // Positive root of beta_d t^2 / 2 + beta_min t = value. Falls back to the
  // linear solution when beta_d is zero.
  double quadratic_root(double value) const {
    const double bd = params_.beta_d;
    const double bm = params_.beta_min;
    if (bd == 0.0) {
      if (bm <= 0.0) throw ParameterError("degenerate schedule: beta_d = beta_min = 0");
      return value / bm;
    }
    const double disc = bm * bm + 2.0 * bd * value;
    if (disc < 0.0) throw ParameterError("schedule inverse: no real root");
    const double root = std::sqrt(disc);
    // Stable form of (-bm + root) / bd.
    if (bm <= 0.0) return (-bm + root) / bd;
    return 2.0 * value / (bm + root);
  }

  double cosine_f(double t) const {
    const double s = params_.cosine_s;
    const double c = std::cos((t + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  }

  ScheduleKind kind_;
  ScheduleParams params_;
  double t_min_;
  double t_max_;
};

/// Solves sigma(epsilon) = sigma_min and sigma(1) = sigma_max for the
/// (beta_d, beta_min) of EDM's VP form. lambda(t) of the result reproduces
/// the EDM sigma, so EDM sigma grids map onto it through time_of_level.
inline NoiseSchedule edm_to_vp(double sigma_min = 0.002, double sigma_max = 80.0, double epsilon = 1e-3) {
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) throw ParameterError("edm_to_vp: need 0 < sigma_min < sigma_max");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ParameterError("edm_to_vp: epsilon must lie in (0, 1)");
  // beta_d / 2 + beta_min = L1,  beta_d eps^2 / 2 + beta_min eps = Le.
  const double l1 = std::log1p(sigma_max * sigma_max);
  const double le = std::log1p(sigma_min * sigma_min);
  const double half_bd = (le - l1 * epsilon) / (epsilon * epsilon - epsilon);
  const double beta_d = 2.0 * half_bd;
  const double beta_min = l1 - half_bd;
  // sigma must increase on [epsilon, 1]: dL/dt = beta_d t + beta_min > 0.
  if (!(beta_d > 0.0) || !(beta_d * epsilon + beta_min > 0.0))
    throw ParameterError("edm_to_vp: no monotone real solution for the given range");
  auto s = NoiseSchedule::vp_from_edm_constants(beta_d, beta_min);
  return s;
}

/// Decreasing solver nodes t_0 > ... > t_M with their alpha/sigma/lambda.
struct TimeGrid {
  std::vector<double> times;
  std::vector<double> alpha;
  std::vector<double> sigma;
  std::vector<double> lambda;
  Terminal terminal = Terminal::Zero;
  double terminal_epsilon = 0.0;

  std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }

  /// Integration variable for the given parameterization: sigma for VE,
  /// lambda for VP.
  const std::vector<double>& levels(Parameterization p) const {
    return p == Parameterization::VE ? sigma : lambda;
  }

  void validate() const {
    const std::size_t n = times.size();
    if (n < 2) throw ParameterError("time grid needs at least one step (M >= 1)");
    if (alpha.size() != n || sigma.size() != n || lambda.size() != n)
      throw ParameterError("time grid: inconsistent node arrays");
    for (std::size_t i = 1; i < n; ++i) {
      if (!(times[i] < times[i - 1])) throw ParameterError("time grid: times must strictly decrease");
      if (!(sigma[i] < sigma[i - 1])) throw ParameterError("time grid: sigma nodes must strictly decrease");
      if (!(lambda[i] < lambda[i - 1])) throw ParameterError("time grid: lambda nodes must strictly decrease");
    }
    if (!(sigma.back() >= 0.0)) throw ParameterError("time grid: negative sigma");
  }
};

/// Karras et al. sigma sequence. With Terminal::Zero the M nodes
/// sigma_{i<M} = [smax^(1/rho) + i/(M-1) (smin^(1/rho) - smax^(1/rho))]^rho are
/// followed by sigma = 0; with Terminal::Epsilon the M+1 nodes end at sigma_min.
inline std::vector<double> edm_sigmas(std::size_t steps, double sigma_min = 0.002, double sigma_max = 80.0,
                                      double rho = 7.0, Terminal terminal = Terminal::Zero) {
  if (steps < 1) throw ParameterError("edm grid: need M >= 1");
  if (!(sigma_min > 0.0 && sigma_min < sigma_max)) throw ParameterError("edm grid: need 0 < sigma_min < sigma_max");
  if (!(rho > 0.0)) throw ParameterError("edm grid: rho must be positive");
  const double hi = std::pow(sigma_max, 1.0 / rho);
  const double lo = std::pow(sigma_min, 1.0 / rho);
  std::vector<double> out;
  if (terminal == Terminal::Zero) {
    out.reserve(steps + 1);
    if (steps == 1) {
      out.push_back(sigma_max);
    } else {
      const double denom = static_cast<double>(steps - 1);
      for (std::size_t i = 0; i < steps; ++i) {
        // Endpoints are pinned so they reproduce the bounds exactly.
        if (i == 0) out.push_back(sigma_max);
        else if (i + 1 == steps) out.push_back(sigma_min);
        else out.push_back(std::pow(hi + static_cast<double>(i) / denom * (lo - hi), rho));
      }
    }
    out.push_back(0.0);
  } else {
    out.reserve(steps + 1);
    const double denom = static_cast<double>(steps);
    for (std::size_t i = 0; i <= steps; ++i) {
      if (i == 0) out.push_back(sigma_max);
      else if (i == steps) out.push_back(sigma_min);
      else out.push_back(std::pow(hi + static_cast<double>(i) / denom * (lo - hi), rho));
    }
  }
  return out;
}

/// Uniform times t_{i<M} = T + i/(M-1) (eps - T) followed by t = 0, or
/// (Terminal::Epsilon) M+1 uniform nodes from T to eps.
inline std::vector<double> uniform_times(std::size_t steps, double epsilon = 1e-3, Terminal terminal = Terminal::Zero,
                                         double t_start = 1.0) {
  if (steps < 1) throw ParameterError("uniform grid: need M >= 1");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ParameterError("uniform grid: epsilon must lie in (0, 1)");
  if (!(epsilon < t_start)) throw ParameterError("uniform grid: epsilon must be below the start time");
  std::vector<double> out;
  out.reserve(steps + 1);
  if (terminal == Terminal::Zero) {
    if (steps == 1) {
      out.push_back(t_start);
    } else {
      const double denom = static_cast<double>(steps - 1);
      for (std::size_t i = 0; i < steps; ++i) {
        if (i + 1 == steps) out.push_back(epsilon);
        else out.push_back(t_start + static_cast<double>(i) / denom * (epsilon - t_start));
      }
    }
    out.push_back(0.0);
  } else {
    const double denom = static_cast<double>(steps);
    for (std::size_t i = 0; i <= steps; ++i) {
      if (i == steps) out.push_back(epsilon);
      else out.push_back(t_start + static_cast<double>(i) / denom * (epsilon - t_start));
    }
  }
  return out;
}

/// Grid at explicit times of a schedule.
inline TimeGrid grid_from_times(const NoiseSchedule& schedule, const std::vector<double>& times,
                                Terminal terminal = Terminal::Zero, double terminal_epsilon = 0.0) {
  TimeGrid g;
  g.times = times;
  g.terminal = terminal;
  g.terminal_epsilon = terminal_epsilon;
  for (double t : times) {
    if (t < schedule.t_min() - 1e-15 || t > schedule.t_max() + 1e-15)
      throw ParameterError("time grid: node outside the schedule domain");
    g.alpha.push_back(schedule.alpha(t));
    g.sigma.push_back(schedule.sigma(t));
    g.lambda.push_back(schedule.lambda(t));
  }
  g.validate();
  return g;
}

/// Grid whose integration levels (sigma for VE, lambda for VP) are given
/// exactly; times come from the closed-form inverse.
inline TimeGrid grid_from_levels(const NoiseSchedule& schedule, const std::vector<double>& levels,
                                 Terminal terminal = Terminal::Zero, double terminal_epsilon = 0.0) {
  TimeGrid g;
  g.terminal = terminal;
  g.terminal_epsilon = terminal_epsilon;
  for (double level : levels) {
    const double a = schedule.alpha_of_level(level);
    g.times.push_back(schedule.time_of_level(level));
    g.alpha.push_back(a);
    g.lambda.push_back(level);
    g.sigma.push_back(schedule.is_vp() ? a * level : level);
  }
  g.validate();
  return g;
}

/// EDM step grid under the VE identification sigma(t) = t.
inline TimeGrid edm_step_grid(std::size_t steps, double sigma_min = 0.002, double sigma_max = 80.0, double rho = 7.0,
                              Terminal terminal = Terminal::Zero) {
  const auto sig = edm_sigmas(steps, sigma_min, sigma_max, rho, terminal);
  return grid_from_levels(NoiseSchedule::ve(sigma_max), sig, terminal, terminal == Terminal::Epsilon ? sigma_min : 0.0);
}

inline TimeGrid uniform_time_grid(const NoiseSchedule& schedule, std::size_t steps, double epsilon = 1e-3,
                                  Terminal terminal = Terminal::Zero) {
  const auto t = uniform_times(steps, epsilon, terminal, schedule.t_max() < 1.0 ? schedule.t_max() : 1.0);
  return grid_from_times(schedule, t, terminal, epsilon);
}

}  // namespace ersde
