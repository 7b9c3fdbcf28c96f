#pragma once

// Run configuration (flat key=value text) and the subcommands behind the
// ersde command-line tool. Every command writes CSV to a std::ostream and is
// reproducible from (config, seed) except for timing columns.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "ersde/errors.hpp"
#include "ersde/noise_scale.hpp"
#include "ersde/predictors.hpp"
#include "ersde/reference.hpp"
#include "ersde/schedules.hpp"
#include "ersde/solvers.hpp"

namespace ersde::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kAdmissibilityError = 3, kNumericError = 4 };

/// Locale-free float formatting with 17 significant digits.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

/// Shortest round-trip form, used for config serialization.
inline std::string format_shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

struct ComponentSpec {
  double weight = 1.0;
  std::vector<double> mean;
  double stddev = 1.0;
  bool operator==(const ComponentSpec&) const = default;
};

struct RunConfig {
  std::string subcommand = "sample";
  std::string schedule = "ve-edm";
  std::size_t steps = 20;
  std::string phi = "er5";
  int order = 3;
  std::string param = "auto";  // ve | vp | auto (follows the schedule)
  std::size_t quad_points = 100;
  std::size_t chains = 1000;
  std::uint64_t seed = 0;
  std::string oracle_file;
  std::string out = "-";
  std::string terminal = "zero";  // zero | epsilon

  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  double epsilon = 1e-3;
  double beta_min = 0.1;
  double beta_max = 20.0;
  double cosine_s = 0.008;

  std::vector<std::size_t> nfe_list = {10, 20, 30, 50};
  std::vector<int> orders;          // sweep; empty means {order}
  std::vector<std::string> phis;    // fei / sweep; empty means a command default
  std::vector<std::size_t> conv_steps = {10, 20, 40, 80, 160};
  std::size_t reference_samples = 0;  // sweep; 0 means `chains`

  std::vector<ComponentSpec> components;  // empty means the default toy model

  bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto t = trim(v);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size() || t.empty())
    throw ParameterError("config field '" + key + "': not a number: '" + v + "'");
  return out;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto t = trim(v);
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size() || t.empty())
    throw ParameterError("config field '" + key + "': not an integer: '" + v + "'");
  return out;
}

template <class Int>
std::vector<Int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<Int> out;
  for (const auto& part : split(v, ','))
    if (!part.empty()) out.push_back(parse_int<Int>(key, part));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

}  // namespace detail

/// "w | m0,m1,... | s"
inline ComponentSpec parse_component(const std::string& text) {
  const auto parts = detail::split(text, '|');
  if (parts.size() != 3) throw ParameterError("config field 'component': expected 'weight | mean,... | stddev'");
  ComponentSpec c;
  c.weight = detail::parse_double("component.weight", parts[0]);
  for (const auto& m : detail::split(parts[1], ','))
    if (!m.empty()) c.mean.push_back(detail::parse_double("component.mean", m));
  c.stddev = detail::parse_double("component.stddev", parts[2]);
  return c;
}

inline std::string format_component(const ComponentSpec& c) {
  std::ostringstream os;
  os << format_shortest(c.weight) << " | ";
  for (std::size_t i = 0; i < c.mean.size(); ++i) os << (i ? "," : "") << format_shortest(c.mean[i]);
  os << " | " << format_shortest(c.stddev);
  return os.str();
}

/// Applies one key=value pair. Unknown keys are configuration errors.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  const std::string v = trim(value);
  if (key == "subcommand") cfg.subcommand = v;
  else if (key == "schedule") cfg.schedule = v;
  else if (key == "steps") cfg.steps = parse_int<std::size_t>(key, v);
  else if (key == "phi") cfg.phi = v;
  else if (key == "order") cfg.order = parse_int<int>(key, v);
  else if (key == "param") cfg.param = v;
  else if (key == "quad_points") cfg.quad_points = parse_int<std::size_t>(key, v);
  else if (key == "chains") cfg.chains = parse_int<std::size_t>(key, v);
  else if (key == "seed") cfg.seed = parse_int<std::uint64_t>(key, v);
  else if (key == "oracle") cfg.oracle_file = v;
  else if (key == "out") cfg.out = v;
  else if (key == "terminal") cfg.terminal = v;
  else if (key == "sigma_min") cfg.sigma_min = parse_double(key, v);
  else if (key == "sigma_max") cfg.sigma_max = parse_double(key, v);
  else if (key == "rho") cfg.rho = parse_double(key, v);
  else if (key == "epsilon") cfg.epsilon = parse_double(key, v);
  else if (key == "beta_min") cfg.beta_min = parse_double(key, v);
  else if (key == "beta_max") cfg.beta_max = parse_double(key, v);
  else if (key == "cosine_s") cfg.cosine_s = parse_double(key, v);
  else if (key == "nfe_list") cfg.nfe_list = parse_int_list<std::size_t>(key, v);
  else if (key == "orders") cfg.orders = parse_int_list<int>(key, v);
  else if (key == "phis") {
    cfg.phis.clear();
    for (const auto& p : split(v, ','))
      if (!p.empty()) cfg.phis.push_back(p);
  } else if (key == "conv_steps") cfg.conv_steps = parse_int_list<std::size_t>(key, v);
  else if (key == "reference_samples") cfg.reference_samples = parse_int<std::size_t>(key, v);
  else if (key == "component") cfg.components.push_back(parse_component(v));
  else throw ParameterError("unknown config field '" + key + "'");
}

/// Parses flat key=value text; '#' starts a comment.
inline void parse_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParameterError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(cfg, detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot read file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  parse_config_text(cfg, text);
  return cfg;
}

inline std::string serialize_config(const RunConfig& cfg) {
  using detail::join;
  std::ostringstream os;
  os << "subcommand = " << cfg.subcommand << "\n"
     << "schedule = " << cfg.schedule << "\n"
     << "steps = " << cfg.steps << "\n"
     << "phi = " << cfg.phi << "\n"
     << "order = " << cfg.order << "\n"
     << "param = " << cfg.param << "\n"
     << "quad_points = " << cfg.quad_points << "\n"
     << "chains = " << cfg.chains << "\n"
     << "seed = " << cfg.seed << "\n";
  if (!cfg.oracle_file.empty()) os << "oracle = " << cfg.oracle_file << "\n";
  os << "out = " << cfg.out << "\n"
     << "terminal = " << cfg.terminal << "\n"
     << "sigma_min = " << format_shortest(cfg.sigma_min) << "\n"
     << "sigma_max = " << format_shortest(cfg.sigma_max) << "\n"
     << "rho = " << format_shortest(cfg.rho) << "\n"
     << "epsilon = " << format_shortest(cfg.epsilon) << "\n"
     << "beta_min = " << format_shortest(cfg.beta_min) << "\n"
     << "beta_max = " << format_shortest(cfg.beta_max) << "\n"
     << "cosine_s = " << format_shortest(cfg.cosine_s) << "\n"
     << "nfe_list = " << join(cfg.nfe_list) << "\n"
     << "orders = " << join(cfg.orders) << "\n"
     << "phis = " << join(cfg.phis) << "\n"
     << "conv_steps = " << join(cfg.conv_steps) << "\n"
     << "reference_samples = " << cfg.reference_samples << "\n";
  for (const auto& c : cfg.components) os << "component = " << format_component(c) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Building blocks resolved from a RunConfig.

inline Terminal terminal_of(const RunConfig& cfg) {
  if (cfg.terminal == "zero") return Terminal::Zero;
  if (cfg.terminal == "epsilon") return Terminal::Epsilon;
  throw ParameterError("config field 'terminal': expected zero or epsilon, got '" + cfg.terminal + "'");
}

inline NoiseSchedule schedule_of(const RunConfig& cfg) {
  if (cfg.schedule == "ve-edm") return NoiseSchedule::ve(cfg.sigma_max);
  if (cfg.schedule == "vp-linear") return NoiseSchedule::vp_linear(cfg.beta_min, cfg.beta_max);
  if (cfg.schedule == "vp-cosine") return NoiseSchedule::vp_cosine(cfg.cosine_s);
  if (cfg.schedule == "vp-from-edm") return edm_to_vp(cfg.sigma_min, cfg.sigma_max, cfg.epsilon);
  throw ParameterError("config field 'schedule': unknown schedule '" + cfg.schedule + "'");
}

inline Parameterization param_of(const RunConfig& cfg) {
  const bool vp_schedule = cfg.schedule != "ve-edm";
  if (cfg.param == "auto") return vp_schedule ? Parameterization::VP : Parameterization::VE;
  if (cfg.param == "ve") {
    if (vp_schedule) throw ParameterError("config field 'param': the VE solver needs the ve-edm schedule");
    return Parameterization::VE;
  }
  if (cfg.param == "vp") {
    if (!vp_schedule) throw ParameterError("config field 'param': the VP solver needs a VP schedule");
    return Parameterization::VP;
  }
  throw ParameterError("config field 'param': expected ve, vp or auto, got '" + cfg.param + "'");
}

/// EDM sigma grids for ve-edm / vp-from-edm, uniform time grids otherwise.
inline TimeGrid grid_of(const RunConfig& cfg, std::size_t steps) {
  if (steps < 1) throw ParameterError("config field 'steps': need at least one step");
  const auto sched = schedule_of(cfg);
  const auto term = terminal_of(cfg);
  if (cfg.schedule == "ve-edm") return edm_step_grid(steps, cfg.sigma_min, cfg.sigma_max, cfg.rho, term);
  if (cfg.schedule == "vp-from-edm") {
    const auto levels = edm_sigmas(steps, cfg.sigma_min, cfg.sigma_max, cfg.rho, term);
    return grid_from_levels(sched, levels, term, term == Terminal::Epsilon ? cfg.epsilon : 0.0);
  }
  return uniform_time_grid(sched, steps, cfg.epsilon, term);
}

inline GaussianMixtureOracle oracle_of(const RunConfig& cfg) {
  std::vector<ComponentSpec> specs = cfg.components;
  if (!cfg.oracle_file.empty()) {
    RunConfig from_file;
    parse_config_text(from_file, read_file(cfg.oracle_file));
    specs = from_file.components;
    if (specs.empty()) throw ParameterError("oracle file '" + cfg.oracle_file + "' has no component lines");
  }
  if (specs.empty()) return GaussianMixtureOracle::default_toy();
  GaussianMixtureOracle o;
  for (const auto& s : specs) {
    Vector m(static_cast<Eigen::Index>(s.mean.size()));
    for (std::size_t i = 0; i < s.mean.size(); ++i) m[static_cast<Eigen::Index>(i)] = s.mean[i];
    o.components.push_back({s.weight, m, s.stddev});
  }
  o.normalize();
  o.validate();
  return o;
}

inline SamplerConfig sampler_of(const RunConfig& cfg, std::size_t steps, int order, const std::string& phi_name) {
  if (order < 1 || order > 3) throw ParameterError("config field 'order': must be 1, 2 or 3");
  if (cfg.quad_points < 1) throw ParameterError("config field 'quad_points': must be >= 1");
  SamplerConfig s;
  s.order = order;
  s.param = param_of(cfg);
  s.quadrature_points = cfg.quad_points;
  s.phi = phi_from_name(phi_name);
  s.grid = grid_of(cfg, steps);
  s.seed = cfg.seed;
  s.keep_trajectory = false;
  return s;
}

/// Fails with AdmissibilityError naming the first violating level pair.
inline void require_admissible(const SamplerConfig& s) {
  const auto rep = check_admissible(s.phi, s.grid, s.param);
  if (!rep.pass) throw AdmissibilityError(s.phi.name() + ": " + rep.describe());
}

// ---------------------------------------------------------------------------
// Subcommands.

/// Terminal samples: chain,dim_0..dim_{D-1}.
inline void cmd_sample(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  const auto oracle = oracle_of(cfg);
  const auto s = sampler_of(cfg, cfg.steps, cfg.order, cfg.phi);
  require_admissible(s);
  if (cfg.chains < 1) throw ParameterError("config field 'chains': need at least one chain");
  MixturePredictor model(oracle);
  const auto x_T = draw_prior(s, oracle.dim(), cfg.chains);
  const auto res = sample(s, model, x_T);
  for (const auto& w : res.record.warnings) log << "warning: " << w << "\n";
  out << "chain";
  for (std::size_t d = 0; d < oracle.dim(); ++d) out << ",dim_" << d;
  out << "\n";
  for (std::size_t c = 0; c < res.trajectories.size(); ++c) {
    out << c;
    const auto& x = res.trajectories[c].terminal();
    for (Eigen::Index d = 0; d < x.size(); ++d) out << "," << format_double(x[d]);
    out << "\n";
  }
}

/// FEI per step: step,phi,fei.
inline void cmd_fei(const RunConfig& cfg, std::ostream& out) {
  std::vector<std::string> names = cfg.phis;
  if (names.empty())
    for (const auto& [n, _] : phi_names()) names.push_back(n);
  const auto grid = grid_of(cfg, cfg.steps);
  const auto param = param_of(cfg);
  out << "step,phi,fei\n";
  for (const auto& name : names) {
    const auto phi = phi_from_name(name);
    for (const auto& p : fei_curve(phi, grid, param)) out << p.step << "," << name << "," << format_double(p.value) << "\n";
  }
}

/// Admissibility report: phi,pass,x_t,x_s,ratio,bound. Throws on failure
/// after writing the row.
inline void cmd_admissible(const RunConfig& cfg, std::ostream& out) {
  std::vector<std::string> names = cfg.phis.empty() ? std::vector<std::string>{cfg.phi} : cfg.phis;
  const auto grid = grid_of(cfg, cfg.steps);
  const auto param = param_of(cfg);
  out << "phi,pass,x_t,x_s,ratio,bound\n";
  std::optional<std::string> failure;
  for (const auto& name : names) {
    const auto phi = phi_from_name(name);
    const auto rep = check_admissible(phi, grid, param);
    out << name << "," << (rep.pass ? 1 : 0) << "," << format_double(rep.x_t) << "," << format_double(rep.x_s) << ","
        << format_double(rep.ratio) << "," << format_double(rep.bound) << "\n";
    if (!rep.pass && !failure) failure = name + ": " + rep.describe();
  }
  if (failure) throw AdmissibilityError(*failure);
}

/// Sample + metrics per (nfe, order, phi):
/// nfe,order,phi,mean_error,cov_error,energy_distance,wall_ms.
inline void cmd_sweep(const RunConfig& cfg, std::ostream& out) {
  const auto oracle = oracle_of(cfg);
  MixturePredictor model(oracle);
  const std::vector<int> orders = cfg.orders.empty() ? std::vector<int>{cfg.order} : cfg.orders;
  const std::vector<std::string> phis = cfg.phis.empty() ? std::vector<std::string>{cfg.phi} : cfg.phis;
  const std::size_t n_ref = cfg.reference_samples ? cfg.reference_samples : cfg.chains;
  if (cfg.chains < 2) throw ParameterError("config field 'chains': sweep needs at least two chains");
  out << "nfe,order,phi,mean_error,cov_error,energy_distance,wall_ms\n";
  for (std::size_t nfe : cfg.nfe_list) {
    for (int order : orders) {
      for (const auto& phi : phis) {
        const auto start = std::chrono::steady_clock::now();
        const auto s = sampler_of(cfg, nfe, order, phi);
        require_admissible(s);
        const auto x_T = draw_prior(s, oracle.dim(), cfg.chains);
        const auto res = sample(s, model, x_T);
        std::vector<Vector> xs;
        xs.reserve(res.trajectories.size());
        for (const auto& t : res.trajectories) xs.push_back(t.terminal());
        const double a_end = s.grid.alpha.back();
        const double s_end = s.grid.sigma.back();
        const auto ref = sample_marginal(oracle, a_end, s_end, n_ref, cfg.seed ^ 0x5EEDull);
        const auto rep = compute_metrics(xs, ref, mixture_moments(oracle, a_end, s_end));
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        out << nfe << "," << order << "," << phi << "," << format_double(rep.mean_error) << ","
            << format_double(rep.cov_error) << "," << format_double(rep.energy_distance) << "," << format_double(ms)
            << "\n";
      }
    }
  }
}

struct ConvergenceRow {
  std::size_t steps = 0;
  double error = 0.0;
};

/// Least-squares slope of -log(error) against log(M).
inline double fitted_slope(const std::vector<ConvergenceRow>& rows) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows) {
    const double x = std::log(static_cast<double>(r.steps));
    const double y = std::log(r.error);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = n * sxx - sx * sx;
  if (den == 0.0) return std::nan("");
  return -(n * sxy - sx * sy) / den;
}

/// Deterministic (phi = ODE) global error of the configured solver against
/// the exact probability flow: closed form for single-Gaussian oracles, a
/// fine RK4 integration otherwise. Error is the max over probe chains of the
/// terminal Euclidean error.
inline std::vector<ConvergenceRow> convergence_study(const RunConfig& cfg, std::size_t probes = 8) {
  const auto oracle = oracle_of(cfg);
  MixturePredictor model(oracle);
  std::vector<ConvergenceRow> rows;
  for (std::size_t m : cfg.conv_steps) {
    auto s = sampler_of(cfg, m, cfg.order, "ode");
    const auto x_T = draw_prior(s, oracle.dim(), std::max<std::size_t>(1, std::min(probes, cfg.chains)));
    const auto res = sample(s, model, x_T);
    const NodeLevel start = s.node(0);
    const NodeLevel end = s.node(s.grid.steps());
    double err = 0.0;
    for (std::size_t c = 0; c < x_T.size(); ++c) {
      const Vector ref = oracle.single() ? exact_gaussian_flow(oracle, x_T[c], start, end)
                                         : reference_flow(x_T[c], start, end, model);
      err = std::max(err, (res.trajectories[c].terminal() - ref).norm());
    }
    rows.push_back({m, err});
  }
  return rows;
}

/// M,error rows followed by a final slope,<value> row.
inline void cmd_convergence(const RunConfig& cfg, std::ostream& out) {
  const auto rows = convergence_study(cfg);
  out << "M,error\n";
  for (const auto& r : rows) out << r.steps << "," << format_double(r.error) << "\n";
  out << "slope," << format_double(fitted_slope(rows)) << "\n";
}

/// Dispatches on cfg.subcommand.
inline void run(const RunConfig& cfg, std::ostream& out, std::ostream& log) {
  if (cfg.subcommand == "sample") cmd_sample(cfg, out, log);
  else if (cfg.subcommand == "fei") cmd_fei(cfg, out);
  else if (cfg.subcommand == "sweep") cmd_sweep(cfg, out);
  else if (cfg.subcommand == "convergence") cmd_convergence(cfg, out);
  else if (cfg.subcommand == "admissible") cmd_admissible(cfg, out);
  else throw ParameterError("unknown subcommand '" + cfg.subcommand + "'");
}

}  // namespace ersde::cli
