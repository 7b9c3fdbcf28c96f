// ersde: command-line driver for the ER-SDE samplers.
//
//   ersde sample --phi ode --order 1 --steps 10 --chains 4 --seed 7
//   ersde fei --steps 100 --phis ode,sde,er4
//   ersde sweep --nfe-list 10,20 --orders 2,3 --chains 10000
//   ersde convergence --order 2 --conv-steps 10,20,40,80,160
//   ersde admissible --phi pow:0.5
//
// Exit codes: 0 ok, 2 config error, 3 admissibility error, 4 numeric failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "ersde/cli.hpp"

namespace {

struct FlagBinding {
  const char* flag;
  const char* key;
  const char* help;
};

const std::vector<FlagBinding> kFlags = {
    {"--schedule", "schedule", "ve-edm | vp-linear | vp-cosine | vp-from-edm"},
    {"--steps", "steps", "number of solver steps M (= NFE)"},
    {"--phi", "phi", "noise scale function: ode, sde, er1..er5, pow:<p>"},
    {"--order", "order", "solver order 1, 2 or 3"},
    {"--param", "param", "ve | vp | auto"},
    {"--quad-points", "quad_points", "quadrature points N (default 100)"},
    {"--chains", "chains", "number of chains"},
    {"--seed", "seed", "RNG seed"},
    {"--oracle", "oracle", "oracle file with 'component = w | m0,m1 | s' lines"},
    {"--out", "out", "output CSV path, '-' for stdout"},
    {"--terminal", "terminal", "zero (append sigma = 0) | epsilon (stop at sigma_min / epsilon)"},
    {"--sigma-min", "sigma_min", "EDM sigma_min"},
    {"--sigma-max", "sigma_max", "EDM sigma_max"},
    {"--rho", "rho", "EDM rho"},
    {"--epsilon", "epsilon", "terminal time epsilon"},
    {"--beta-min", "beta_min", "linear VP beta_min"},
    {"--beta-max", "beta_max", "linear VP beta_max"},
    {"--cosine-s", "cosine_s", "cosine VP offset s"},
    {"--nfe-list", "nfe_list", "sweep: comma separated NFE values"},
    {"--orders", "orders", "sweep: comma separated orders"},
    {"--phis", "phis", "fei / sweep / admissible: comma separated phi names"},
    {"--conv-steps", "conv_steps", "convergence: comma separated M values"},
    {"--reference-samples", "reference_samples", "sweep: exact reference draws (default: chains)"},
};

}  // namespace

int main(int argc, char** argv) {
  using namespace ersde;
  CLI::App app{"ER-SDE sampler toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  bool print_config = false;
  app.add_option("--config", config_path, "flat key = value config file; flags override it");
  app.add_flag("--print-config", print_config, "print the effective config to stderr");

  std::vector<std::pair<const FlagBinding*, CLI::Option*>> bound;
  std::vector<std::string> values(kFlags.size());
  for (std::size_t i = 0; i < kFlags.size(); ++i)
    bound.emplace_back(&kFlags[i], app.add_option(kFlags[i].flag, values[i], kFlags[i].help));

  const std::pair<const char*, const char*> commands[] = {
      {"sample", "terminal samples as CSV (chain,dim_0,...)"},
      {"fei", "per-step FEI coefficients for each phi"},
      {"sweep", "metrics over NFE x order x phi against exact draws"},
      {"convergence", "deterministic global error vs M and fitted slope"},
      {"admissible", "check phi against the step grid"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kConfigError;
  }

  cli::RunConfig cfg;
  try {
    if (!config_path.empty()) cli::parse_config_text(cfg, cli::read_file(config_path));
    cfg.subcommand = app.get_subcommands().front()->get_name();
    for (std::size_t i = 0; i < bound.size(); ++i)
      if (bound[i].second->count() > 0) cli::apply_setting(cfg, bound[i].first->key, values[i]);
    if (print_config) std::cerr << cli::serialize_config(cfg);
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kConfigError;
  }

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (cfg.out != "-") {
    file.open(cfg.out);
    if (!file) {
      std::cerr << "config error: cannot open output file '" << cfg.out << "'\n";
      return cli::kConfigError;
    }
    out = &file;
  }

  try {
    cli::run(cfg, *out, std::cerr);
  } catch (const AdmissibilityError& e) {
    std::cerr << "admissibility error: " << e.what() << "\n";
    return cli::kAdmissibilityError;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kConfigError;
  } catch (const SolverError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return cli::kNumericError;
  }
  out->flush();
  return cli::kOk;
}
