#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "ersde/cli.hpp"

using namespace ersde;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string temp_path(const std::string& name) { return ::testing::TempDir() + "ersde_cli_" + name; }

RunResult run_cli(const std::string& args, const std::string& tag) {
  const std::string out = temp_path(tag + ".out");
  const std::string err = temp_path(tag + ".err");
  const std::string cmd = std::string(ERSDE_CLI_PATH) + " " + args + " > " + out + " 2> " + err;
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(Config, RoundTrip) {
  cli::RunConfig cfg;
  cfg.subcommand = "sweep";
  cfg.schedule = "vp-linear";
  cfg.steps = 37;
  cfg.phi = "pow:1.25";
  cfg.order = 2;
  cfg.param = "vp";
  cfg.quad_points = 250;
  cfg.chains = 123;
  cfg.seed = 18446744073709551615ull;
  cfg.oracle_file = "oracle.txt";
  cfg.out = "result.csv";
  cfg.terminal = "epsilon";
  cfg.sigma_min = 0.1 + 0.2;
  cfg.sigma_max = 1.0 / 3.0;
  cfg.rho = 6.5;
  cfg.epsilon = 1e-5;
  cfg.beta_min = 0.05;
  cfg.beta_max = 19.999999999999996;
  cfg.cosine_s = 0.008;
  cfg.nfe_list = {5, 7};
  cfg.orders = {1, 3};
  cfg.phis = {"ode", "er5"};
  cfg.conv_steps = {8, 16};
  cfg.reference_samples = 99;
  cfg.components.push_back({0.25, {1.0 / 7.0, -2.0}, 0.3});
  cfg.components.push_back({0.75, {0.0, 1e-300}, 0.0});
  const std::string text = cli::serialize_config(cfg);
  const auto back = cli::parse_config(text);
  EXPECT_TRUE(back == cfg) << text;
  EXPECT_EQ(cli::serialize_config(back), text);
  EXPECT_TRUE(cli::parse_config(cli::serialize_config(cli::RunConfig{})) == cli::RunConfig{});
}

TEST(Config, ParsesCommentsAndReportsFields) {
  const auto cfg = cli::parse_config("# comment\n steps = 12  # trailing\n\nphi=er4\n");
  EXPECT_EQ(cfg.steps, 12u);
  EXPECT_EQ(cfg.phi, "er4");
  try {
    cli::parse_config("stepz = 3\n");
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("stepz"), std::string::npos);
  }
  try {
    cli::parse_config("sigma_max = eighty\n");
    FAIL();
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("sigma_max"), std::string::npos);
  }
  EXPECT_THROW(cli::parse_config("steps\n"), ParameterError);
  EXPECT_THROW(cli::parse_config("component = 1 | 0\n"), ParameterError);
}

TEST(Config, CrossFieldValidation) {
  cli::RunConfig cfg;
  cfg.param = "vp";
  EXPECT_THROW(cli::param_of(cfg), ParameterError);
  cfg.schedule = "vp-cosine";
  EXPECT_EQ(cli::param_of(cfg), Parameterization::VP);
  cfg.param = "ve";
  EXPECT_THROW(cli::param_of(cfg), ParameterError);
  cfg.schedule = "ve-sde";
  EXPECT_THROW(cli::schedule_of(cfg), ParameterError);
  cli::RunConfig bad_order;
  bad_order.order = 4;
  EXPECT_THROW(cli::sampler_of(bad_order, 10, 4, "er5"), ParameterError);
}

TEST(Config, GridsPerSchedule) {
  for (const char* name : {"ve-edm", "vp-linear", "vp-cosine", "vp-from-edm"}) {
    cli::RunConfig cfg;
    cfg.schedule = name;
    for (const char* term : {"zero", "epsilon"}) {
      cfg.terminal = term;
      const auto g = cli::grid_of(cfg, 15);
      EXPECT_EQ(g.steps(), 15u) << name;
      EXPECT_NO_THROW(g.validate());
    }
  }
  cli::RunConfig edm;
  edm.schedule = "vp-from-edm";
  const auto g = cli::grid_of(edm, 10);
  const auto s = edm_sigmas(10);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(g.lambda[i], s[i]);
}

TEST(Cli, SampleIsByteIdenticalAcrossRuns) {
  const std::string args = "sample --phi ode --order 1 --steps 10 --chains 4 --seed 7";
  const auto a = run_cli(args, "det_a");
  const auto b = run_cli(args, "det_b");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto rows = csv_rows(a.out);
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"chain", "dim_0", "dim_1"}));
  // Stochastic default (er5, order 3) is reproducible too.
  const auto c = run_cli("sample --steps 10 --chains 16 --seed 3", "det_c");
  const auto d = run_cli("sample --steps 10 --chains 16 --seed 3", "det_d");
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(c.out, d.out);
  const auto e = run_cli("sample --steps 10 --chains 16 --seed 4", "det_e");
  EXPECT_NE(c.out, e.out);
}

TEST(Cli, WritesOutputFile) {
  const std::string path = temp_path("samples.csv");
  const auto r = run_cli("sample --steps 5 --chains 3 --out " + path, "outfile");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  EXPECT_EQ(csv_rows(slurp(path)).size(), 4u);
}

TEST(Cli, InadmissiblePhiExitsWithCode3) {
  const auto r = run_cli("sample --phi pow:0.5 --steps 10 --chains 4", "pow");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("sigma pair"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());
  const auto a = run_cli("admissible --phi pow:0.5 --steps 10", "adm");
  EXPECT_EQ(a.code, 3);
  const auto ok = run_cli("admissible --phis ode,sde,er1,er2,er3,er4,er5 --steps 10", "adm_ok");
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(csv_rows(ok.out).size(), 8u);
}

TEST(Cli, WarmupWarning) {
  const auto r = run_cli("sample --order 3 --steps 2 --chains 2", "warm");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(Cli, ConfigErrorsExitWith2) {
  EXPECT_EQ(run_cli("sample --order 5", "e1").code, 2);
  EXPECT_EQ(run_cli("sample --param vp", "e2").code, 2);
  EXPECT_EQ(run_cli("sample --steps ten", "e3").code, 2);
  EXPECT_EQ(run_cli("sample --schedule nope", "e4").code, 2);
  EXPECT_EQ(run_cli("sample --config /nonexistent/file", "e5").code, 2);
  EXPECT_EQ(run_cli("frobnicate", "e6").code, 2);
  const auto r = run_cli("sample --quad-points 0", "e7");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("quad_points"), std::string::npos);
}

TEST(Cli, ConfigFileWithFlagOverrides) {
  const std::string cfg = temp_path("run.cfg");
  {
    std::ofstream f(cfg);
    f << "steps = 6\nchains = 3\nphi = sde\nseed = 5\ncomponent = 1 | 0.5 | 0.2\n";
  }
  const auto a = run_cli("sample --config " + cfg, "cfg_a");
  ASSERT_EQ(a.code, 0) << a.err;
  const auto rows = csv_rows(a.out);
  EXPECT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].size(), 2u);  // one-dimensional oracle from the file
  const auto b = run_cli("sample --config " + cfg + " --chains 5", "cfg_b");
  EXPECT_EQ(csv_rows(b.out).size(), 6u);
  const auto oracle = temp_path("oracle.txt");
  {
    std::ofstream f(oracle);
    f << "component = 0.5 | 1,2,3 | 0.1\ncomponent = 0.5 | -1,-2,-3 | 0.1\n";
  }
  const auto c = run_cli("sample --steps 4 --chains 2 --oracle " + oracle, "cfg_c");
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(csv_rows(c.out)[0].size(), 4u);
}

TEST(Cli, VpSchedulesRun) {
  for (const char* s : {"vp-linear", "vp-cosine", "vp-from-edm"}) {
    const auto r = run_cli(std::string("sample --schedule ") + s + " --steps 8 --chains 3", std::string("vp_") + s);
    EXPECT_EQ(r.code, 0) << s << ": " << r.err;
  }
}

TEST(FeiCommand, RowsMatchClosedForms) {
  cli::RunConfig cfg;
  cfg.steps = 100;
  cfg.phis = {"ode", "sde", "er4"};
  std::ostringstream os;
  cli::cmd_fei(cfg, os);
  const auto rows = csv_rows(os.str());
  ASSERT_EQ(rows.size(), 301u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"step", "phi", "fei"}));
  const auto g = edm_step_grid(100);
  for (std::size_t i = 1; i <= 100; ++i) {
    const double ode = std::stod(rows[i][2]);
    const double sde = std::stod(rows[100 + i][2]);
    const double er4 = std::stod(rows[200 + i][2]);
    const double q = g.sigma[i] / g.sigma[i - 1];
    EXPECT_EQ(rows[i][1], "ode");
    EXPECT_NEAR(ode, 1 - q, 1e-15);
    EXPECT_NEAR(sde, 1 - q * q, 1e-15);
    EXPECT_NEAR(er4, ode, 0.05);
  }
  cfg.phis = {"pow:0.5"};
  std::ostringstream bad;
  EXPECT_THROW(cli::cmd_fei(cfg, bad), AdmissibilityError);
}

TEST(SweepCommand, ReproducibleExceptTiming) {
  cli::RunConfig cfg;
  cfg.chains = 300;
  cfg.nfe_list = {5, 10};
  cfg.orders = {2, 3};
  cfg.seed = 11;
  std::ostringstream a, b;
  cli::cmd_sweep(cfg, a);
  cli::cmd_sweep(cfg, b);
  const auto ra = csv_rows(a.str()), rb = csv_rows(b.str());
  ASSERT_EQ(ra.size(), 5u);
  EXPECT_EQ(ra[0], (std::vector<std::string>{"nfe", "order", "phi", "mean_error", "cov_error", "energy_distance", "wall_ms"}));
  for (std::size_t i = 1; i < ra.size(); ++i) {
    ASSERT_EQ(ra[i].size(), 7u);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(ra[i][j], rb[i][j]);
    EXPECT_GE(std::stod(ra[i][5]), 0.0);
  }
}

TEST(ConvergenceCommand, ConstantOracleIsExact) {
  cli::RunConfig cfg;
  cfg.components.push_back({1.0, {0.4, -1.1}, 0.0});
  for (int order = 1; order <= 3; ++order) {
    cfg.order = order;
    for (const auto& row : cli::convergence_study(cfg)) EXPECT_LT(row.error, 1e-12) << order;
  }
}

TEST(ConvergenceCommand, SlopesOnSingleGaussian) {
  cli::RunConfig cfg;
  cfg.components.push_back({1.0, {1.0}, 0.5});
  cfg.order = 1;
  std::ostringstream os;
  cli::cmd_convergence(cfg, os);
  const auto rows = csv_rows(os.str());
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows.back()[0], "slope");
  EXPECT_GE(std::stod(rows.back()[1]), 0.5);
  cfg.order = 2;
  EXPECT_GE(cli::fitted_slope(cli::convergence_study(cfg)), 1.5);
}

TEST(Format, SeventeenDigitsRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 80.0}) {
    const std::string s = cli::format_double(v);
    EXPECT_EQ(std::stod(s), v) << s;
    EXPECT_EQ(s.find(','), std::string::npos);
  }
}
