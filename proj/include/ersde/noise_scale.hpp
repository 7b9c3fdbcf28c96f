#pragma once

// Reverse-process noise scale functions phi(x). A phi picks one member of the
// extended reverse-time SDE family: phi(x) = x is the probability-flow ODE,
// phi(x) = x^2 the classic reverse SDE.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ersde/errors.hpp"
#include "ersde/schedules.hpp"

namespace ersde {

class NoiseScaleFn {
 public:
  using Fn = std::function<double(double)>;

  NoiseScaleFn(std::string name, Fn eval, Fn derivative = {}, double eval_at_zero = 0.0)
      : name_(std::move(name)), eval_(std::move(eval)), derivative_(std::move(derivative)),
        at_zero_(eval_at_zero) {}

  const std::string& name() const { return name_; }

  /// phi(x); x == 0 returns the registered limit phi(0+).
  double operator()(double x) const { return x == 0.0 ? at_zero_ : eval_(x); }

  double at_zero() const { return at_zero_; }
  bool has_derivative() const { return static_cast<bool>(derivative_); }

  /// phi'(x), analytic when registered, otherwise a central difference with
  /// relative step 1e-6.
  double derivative(double x) const {
    if (derivative_) return derivative_(x);
    const double h = 1e-6 * std::max(std::abs(x), 1e-300);
    return (eval_(x + h) - eval_(x - h)) / (2.0 * h);
  }

  /// xi(x) = 2x (x phi'(x) / phi(x) - 1), the drift/diffusion split implied
  /// by d/dx ln phi = 1/x + xi / (2 x^2).
  double implied_xi(double x) const {
    return 2.0 * x * (x * derivative(x) / eval_(x) - 1.0);
  }

  /// phi(x)/x, the quantity admissibility requires to be non-decreasing.
  double slope_ratio(double x) const { return eval_(x) / x; }

  /// c * phi; leaves every ratio phi(a)/phi(b) unchanged.
  NoiseScaleFn scaled(double c) const {
    auto e = eval_;
    Fn d;
    if (derivative_) {
      auto dd = derivative_;
      d = [dd, c](double x) { return c * dd(x); };
    }
    return NoiseScaleFn(name_, [e, c](double x) { return c * e(x); }, d, c * at_zero_);
  }

 private:
  std::string name_;
  Fn eval_;
  Fn derivative_;
  double at_zero_;
};

enum class PhiName { ODE, SDE, ER1, ER2, ER3, ER4, ER5 };

inline NoiseScaleFn power_phi(double p) {
  if (!(p > 0.0)) throw ParameterError("pow phi: exponent must be positive");
  std::ostringstream name;
  name << "pow:" << p;
  return NoiseScaleFn(
      name.str(), [p](double x) { return std::pow(x, p); },
      [p](double x) { return p * std::pow(x, p - 1.0); });
}

inline NoiseScaleFn catalogue(PhiName which) {
  switch (which) {
    case PhiName::ODE:
      return NoiseScaleFn("ode", [](double x) { return x; }, [](double) { return 1.0; });
    case PhiName::SDE:
      return NoiseScaleFn("sde", [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
    case PhiName::ER1:
      return NoiseScaleFn(
          "er1", [](double x) { return std::pow(x, 1.5); }, [](double x) { return 1.5 * std::sqrt(x); });
    case PhiName::ER2:
      return NoiseScaleFn(
          "er2", [](double x) { return std::pow(x, 2.5); }, [](double x) { return 2.5 * std::pow(x, 1.5); });
    case PhiName::ER3:
      return NoiseScaleFn(
          "er3", [](double x) { return std::pow(x, 0.9) * std::log10(1.0 + 100.0 * std::pow(x, 1.5)); },
          [](double x) {
            const double inner = 1.0 + 100.0 * std::pow(x, 1.5);
            return 0.9 * std::pow(x, -0.1) * std::log10(inner) +
                   std::pow(x, 0.9) * 150.0 * std::sqrt(x) / (inner * std::numbers::ln10);
          });
    case PhiName::ER4:
      return NoiseScaleFn(
          "er4", [](double x) { return x * (std::exp(-1.0 / x) + 10.0); },
          [](double x) { return std::exp(-1.0 / x) * (1.0 + 1.0 / x) + 10.0; });
    case PhiName::ER5:
      return NoiseScaleFn(
          "er5", [](double x) { return x * (std::exp(std::pow(x, 0.3)) + 10.0); },
          [](double x) {
            const double p = std::pow(x, 0.3);
            return std::exp(p) * (1.0 + 0.3 * p) + 10.0;
          });
  }
  throw ParameterError("unknown noise scale function");
}

inline const std::vector<std::pair<std::string, PhiName>>& phi_names() {
  static const std::vector<std::pair<std::string, PhiName>> names = {
      {"ode", PhiName::ODE}, {"sde", PhiName::SDE}, {"er1", PhiName::ER1}, {"er2", PhiName::ER2},
      {"er3", PhiName::ER3}, {"er4", PhiName::ER4}, {"er5", PhiName::ER5}};
  return names;
}

/// Resolves a CLI name: ode, sde, er1..er5, or pow:<p>.
inline NoiseScaleFn phi_from_name(const std::string& name) {
  for (const auto& [key, value] : phi_names())
    if (key == name) return catalogue(value);
  if (name.rfind("pow:", 0) == 0) {
    const std::string tail = name.substr(4);
    std::size_t used = 0;
    double p = 0.0;
    try {
      p = std::stod(tail, &used);
    } catch (const std::exception&) {
      throw ParameterError("bad phi exponent in '" + name + "'");
    }
    if (used != tail.size()) throw ParameterError("bad phi exponent in '" + name + "'");
    return power_phi(p);
  }
  throw ParameterError("unknown noise scale function '" + name + "'");
}

inline NoiseScaleFn default_phi() { return catalogue(PhiName::ER5); }

/// First-order Euler integral coefficient 1 - phi(x_t)/phi(x_s).
inline double fei(const NoiseScaleFn& phi, double x_t, double x_s) {
  if (!(x_t > 0.0 && x_s > 0.0)) throw ParameterError("fei: arguments must be positive");
  if (!(x_t < x_s)) throw ParameterError("fei: need x_t < x_s");
  return 1.0 - phi(x_t) / phi(x_s);
}

struct AdmissibilityReport {
  bool pass = true;
  // First violating pair, when !pass.
  double x_t = 0.0;
  double x_s = 0.0;
  double ratio = 0.0;  // phi(x_t)/phi(x_s)
  double bound = 0.0;  // x_t/x_s
  std::size_t pairs_checked = 0;
  // max over pairs of ratio/bound; 1 means the ODE equality case.
  double worst_ratio_to_bound = 0.0;

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    if (pass) {
      os << "admissible (" << pairs_checked << " pairs)";
    } else {
      os << "inadmissible at sigma pair (" << x_t << ", " << x_s << "): phi ratio " << ratio << " > bound " << bound;
    }
    return os.str();
  }
};

namespace detail {

// Relative slack for floating-point jitter at the ODE boundary.
inline constexpr double kAdmissibleSlack = 1e-12;

inline bool admissible_pair(const NoiseScaleFn& phi, double x_t, double x_s, AdmissibilityReport& rep) {
  ++rep.pairs_checked;
  if (x_t == 0.0) return true;  // phi(0+)/phi(x_s) = 0
  const double ratio = phi(x_t) / phi(x_s);
  const double bound = x_t / x_s;
  rep.worst_ratio_to_bound = std::max(rep.worst_ratio_to_bound, ratio / bound);
  if (!(phi(x_t) > 0.0) || ratio > bound * (1.0 + kAdmissibleSlack)) {
    if (rep.pass) {
      rep.pass = false;
      rep.x_t = x_t;
      rep.x_s = x_s;
      rep.ratio = ratio;
      rep.bound = bound;
    }
    return false;
  }
  return true;
}

}  // namespace detail

/// Checks phi(x_t)/phi(x_s) <= x_t/x_s on every adjacent pair of a decreasing
/// level sequence and on `dense_pairs` log-spaced sub-pairs covering its range.
inline AdmissibilityReport check_admissible(const NoiseScaleFn& phi, const std::vector<double>& levels,
                                            std::size_t dense_pairs = 1000) {
  AdmissibilityReport rep;
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (std::size_t i = 1; i < levels.size(); ++i) {
    detail::admissible_pair(phi, levels[i], levels[i - 1], rep);
    if (levels[i] > 0.0) lo = std::min(lo, levels[i]);
    hi = std::max(hi, levels[i - 1]);
  }
  if (dense_pairs > 0 && lo < hi) {
    const double log_lo = std::log(lo);
    const double log_hi = std::log(hi);
    double prev = lo;
    for (std::size_t k = 1; k <= dense_pairs; ++k) {
      const double x = (k == dense_pairs) ? hi
                                          : std::exp(log_lo + (log_hi - log_lo) * static_cast<double>(k) /
                                                                  static_cast<double>(dense_pairs));
      if (x > prev) detail::admissible_pair(phi, prev, x, rep);
      prev = x;
    }
  }
  return rep;
}

inline AdmissibilityReport check_admissible(const NoiseScaleFn& phi, const TimeGrid& grid,
                                            Parameterization param = Parameterization::VE) {
  return check_admissible(phi, grid.levels(param));
}

struct FeiPoint {
  std::size_t step = 0;  // 1-based, step i goes from node i-1 to node i
  double value = 0.0;
};

/// Per-step FEI coefficients along a grid. The terminal sigma = 0 step has
/// coefficient 1 (phi(0+) = 0).
inline std::vector<FeiPoint> fei_curve(const NoiseScaleFn& phi, const TimeGrid& grid,
                                       Parameterization param = Parameterization::VE) {
  const auto rep = check_admissible(phi, grid, param);
  if (!rep.pass) throw AdmissibilityError(phi.name() + ": " + rep.describe());
  const auto& lv = grid.levels(param);
  std::vector<FeiPoint> out;
  out.reserve(lv.size() - 1);
  for (std::size_t i = 1; i < lv.size(); ++i) {
    const double value = lv[i] == 0.0 ? 1.0 - phi.at_zero() / phi(lv[i - 1]) : fei(phi, lv[i], lv[i - 1]);
    out.push_back({i, value});
  }
  return out;
}

}  // namespace ersde
