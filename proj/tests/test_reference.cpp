#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ersde/reference.hpp"

using namespace ersde;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

std::vector<Vector> points_1d(std::initializer_list<double> v) {
  std::vector<Vector> out;
  for (double x : v) out.push_back(vec({x}));
  return out;
}

}  // namespace

TEST(ExactMarginal, Examples) {
  const auto n01 = GaussianMixtureOracle::standard_normal();
  auto m = exact_gaussian_marginal(n01, 1.0, 0.0);
  EXPECT_EQ(m.mean[0], 0.0);
  EXPECT_EQ(m.cov(0, 0), 1.0);
  EXPECT_EQ(exact_gaussian_marginal(n01, 1.0, 80.0).cov(0, 0), 6401.0);
  EXPECT_NEAR(exact_gaussian_marginal(n01, 0.8, 0.6).cov(0, 0), 1.0, 1e-15);
  EXPECT_THROW(exact_gaussian_marginal(GaussianMixtureOracle::default_toy(), 1.0, 1.0), ParameterError);
}

TEST(ExactMarginal, MixtureMomentsAgreeWithDraws) {
  const auto toy = GaussianMixtureOracle::default_toy();
  const auto m = mixture_moments(toy, 0.9, 0.4);
  EXPECT_NEAR(m.cov(0, 0), 0.81 * (4.0 + 0.0625) + 0.16, 1e-14);
  EXPECT_NEAR(m.cov(1, 1), 0.81 * 0.0625 + 0.16, 1e-14);
  const auto draws = sample_marginal(toy, 0.9, 0.4, 200000, 3);
  const auto emp = empirical_moments(draws);
  EXPECT_LT((emp.mean - m.mean).norm(), 4 * std::sqrt(m.cov(0, 0) / 200000) * std::sqrt(2.0));
  EXPECT_NEAR(emp.cov(0, 0), m.cov(0, 0), 4 * m.cov(0, 0) * std::sqrt(2.0 / 200000) * 1.5);
}

TEST(PropagateAffine, OneStepHandExample) {
  const auto n01 = GaussianMixtureOracle::standard_normal();
  SamplerConfig cfg;
  cfg.order = 1;
  cfg.phi = catalogue(PhiName::ODE);
  cfg.grid = grid_from_levels(NoiseSchedule::ve(2.0), {2.0, 1.0});
  const auto m = propagate_affine(cfg, n01, vec({0.0}), std::sqrt(5.0));
  ASSERT_EQ(m.size(), 2u);
  EXPECT_NEAR(m[0].cov(0, 0), 5.0, 1e-14);
  EXPECT_NEAR(m[1].cov(0, 0), 1.8, 1e-14);
  EXPECT_EQ(m[1].mean[0], 0.0);
}

TEST(PropagateAffine, OdeInjectsNoNoise) {
  // Deterministic map: the variance is the prior variance times the squared
  // slope, which the one-chain solver reproduces on a unit perturbation.
  const auto o = GaussianMixtureOracle::gaussian(vec({0.7}), 0.5);
  MixturePredictor model(o);
  for (int order = 1; order <= 3; ++order) {
    SamplerConfig cfg;
    cfg.order = order;
    cfg.phi = catalogue(PhiName::ODE);
    cfg.grid = edm_step_grid(12);
    const auto m = propagate_affine(cfg, o, vec({0.0}), 1.0);
    const auto a = sample(cfg, model, {vec({0.0}), vec({1.0})});
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double slope = a.trajectories[1].states[i][0] - a.trajectories[0].states[i][0];
      EXPECT_NEAR(m[i].mean[0], a.trajectories[0].states[i][0], 1e-12 * (1 + std::abs(m[i].mean[0])));
      EXPECT_NEAR(m[i].cov(0, 0), slope * slope, 1e-9 * (1 + slope * slope)) << order << " " << i;
    }
  }
}

TEST(PropagateAffine, ConvergesToExactMarginal) {
  // Frozen from a numeric sweep: at M = 400 the order-1 variance error is
  // about 1.3e-2 for N(0, 1) data and halves with each doubling of M; orders
  // 2 and 3 are already inside 1e-3.
  const auto o = GaussianMixtureOracle::standard_normal();
  const auto prior = exact_gaussian_marginal(o, 1.0, 80.0);
  const auto target = exact_gaussian_marginal(o, 1.0, 0.0);
  auto terminal = [&](int order, std::size_t m, const NoiseScaleFn& phi) {
    SamplerConfig cfg;
    cfg.order = order;
    cfg.phi = phi;
    cfg.grid = edm_step_grid(m);
    cfg.quadrature_points = 1000;
    return propagate_affine(cfg, o, prior.mean, std::sqrt(prior.cov(0, 0))).back();
  };
  for (const auto& phi : {catalogue(PhiName::ODE), default_phi()}) {
    double prev = 0.0;
    for (std::size_t m : {400u, 800u, 1600u}) {
      const auto t = terminal(1, m, phi);
      const double err = std::abs(t.cov(0, 0) - target.cov(0, 0));
      EXPECT_LT(std::abs(t.mean[0]), 1e-12);
      if (m == 400) EXPECT_LT(err, 0.015) << phi.name();
      if (prev > 0.0) EXPECT_NEAR(prev / err, 2.0, 0.1) << phi.name() << " M=" << m;
      prev = err;
    }
    for (int order : {2, 3}) {
      const auto t = terminal(order, 400, phi);
      EXPECT_NEAR(t.cov(0, 0), target.cov(0, 0), 1e-3) << phi.name() << " order " << order;
    }
  }
}

TEST(PropagateAffine, MatchesMonteCarlo) {
  const auto o = GaussianMixtureOracle::gaussian(vec({0.5, -1.0}), 0.8);
  MixturePredictor model(o);
  const std::size_t n = 100000;
  for (const auto& [order, phi] : std::vector<std::pair<int, NoiseScaleFn>>{{1, catalogue(PhiName::ODE)},
                                                                            {3, catalogue(PhiName::ODE)},
                                                                            {3, default_phi()},
                                                                            {2, catalogue(PhiName::SDE)}}) {
    SamplerConfig cfg;
    cfg.order = order;
    cfg.phi = phi;
    cfg.grid = edm_step_grid(10);
    cfg.seed = 40 + static_cast<std::uint64_t>(order);
    cfg.keep_trajectory = false;
    const auto m = propagate_affine(cfg, o, Vector::Zero(2), 80.0).back();
    const auto res = sample(cfg, model, draw_prior(cfg, 2, n));
    std::vector<Vector> xs;
    for (const auto& t : res.trajectories) xs.push_back(t.terminal());
    const auto emp = empirical_moments(xs);
    for (Eigen::Index d = 0; d < 2; ++d) {
      const double v = m.cov(d, d);
      EXPECT_LT(std::abs(emp.mean[d] - m.mean[d]), 4 * std::sqrt(v / n)) << phi.name() << " order " << order;
      EXPECT_LT(std::abs(emp.cov(d, d) - v), 4 * v * std::sqrt(2.0 / (n - 1))) << phi.name() << " order " << order;
    }
  }
}

TEST(PropagateAffine, RejectsMixtures) {
  SamplerConfig cfg;
  cfg.grid = edm_step_grid(5);
  EXPECT_THROW(propagate_affine(cfg, GaussianMixtureOracle::default_toy(), Vector::Zero(2), 1.0), ParameterError);
}

TEST(ReferenceStep, ConstantPredictorGivesFeiCoefficient) {
  FunctionPredictor constant(1, [](const Vector&, NodeLevel) { return vec({2.5}); });
  for (const auto& [name, id] : phi_names()) {
    const auto phi = catalogue(id);
    const double r = phi(0.6) / phi(1.4);
    const Vector term = reference_nonlinear_term(vec({0.3}), {1.0, 1.4}, {1.0, 0.6}, phi, constant);
    EXPECT_NEAR(term[0], (1 - r) * 2.5, 1e-6) << name;
    const Vector step = reference_step(vec({0.3}), {1.0, 1.4}, {1.0, 0.6}, phi, constant);
    EXPECT_NEAR(step[0], r * 0.3 + (1 - r) * 2.5, 1e-6) << name;
  }
}

TEST(ReferenceStep, OdeLinearPredictor) {
  FunctionPredictor linear(1, [](const Vector&, NodeLevel at) { return vec({at.level}); });
  const double ls = 3.0, lt = 1.2;
  const Vector term = reference_nonlinear_term(vec({0.0}), {1.0, ls}, {1.0, lt}, catalogue(PhiName::ODE), linear);
  EXPECT_NEAR(term[0], lt * std::log(ls / lt), 1e-6);
}

TEST(ReferenceStep, ZeroPredictor) {
  FunctionPredictor zero(2, [](const Vector&, NodeLevel) { return Vector::Zero(2); });
  const Vector term = reference_nonlinear_term(vec({1.0, 2.0}), {1.0, 2.0}, {1.0, 1.0}, default_phi(), zero);
  EXPECT_EQ(term.norm(), 0.0);
}

TEST(ReferenceStep, FiniteDifferenceDerivativeAgrees) {
  FunctionPredictor constant(1, [](const Vector&, NodeLevel) { return vec({1.0}); });
  const auto er5 = default_phi();
  const NoiseScaleFn er5_fd("er5-fd", [](double x) { return x * (std::exp(std::pow(x, 0.3)) + 10.0); });
  ASSERT_FALSE(er5_fd.has_derivative());
  const Vector a = reference_nonlinear_term(vec({0.0}), {1.0, 5.0}, {1.0, 2.0}, er5, constant);
  const Vector b = reference_nonlinear_term(vec({0.0}), {1.0, 5.0}, {1.0, 2.0}, er5_fd, constant);
  EXPECT_NEAR(a[0], b[0], 1e-7);
}

TEST(ReferenceFlow, MatchesClosedFormGaussianFlow) {
  const auto o = GaussianMixtureOracle::gaussian(vec({1.0, -0.5}), 0.5);
  MixturePredictor model(o);
  const Vector x = vec({30.0, -50.0});
  const Vector a = reference_flow(x, {1.0, 80.0}, {1.0, 0.002}, model);
  const Vector b = exact_gaussian_flow(o, x, {1.0, 80.0}, {1.0, 0.002});
  EXPECT_LT((a - b).norm(), 1e-9);
  // VP nodes: alpha = 1/sqrt(1 + lambda^2).
  const double l0 = 20.0, l1 = 0.1;
  const NodeLevel s{1.0 / std::sqrt(1 + l0 * l0), l0}, t{1.0 / std::sqrt(1 + l1 * l1), l1};
  const Vector xv = vec({0.3, 0.9});
  EXPECT_LT((reference_flow(xv, s, t, model) - exact_gaussian_flow(o, xv, s, t)).norm(), 1e-9);
}

TEST(EnergyDistance, Examples) {
  const auto a = points_1d({0.0, 0.0, 0.0});
  const auto b = points_1d({1.0, 1.0});
  EXPECT_DOUBLE_EQ(energy_distance(a, b), 2.0);
  const auto c = points_1d({0.1, -2.0, 3.5, 0.7});
  EXPECT_EQ(energy_distance(c, c), 0.0);
  EXPECT_THROW(energy_distance({}, c), ParameterError);
  EXPECT_THROW(energy_distance(c, {vec({1.0, 2.0})}), ParameterError);
}

TEST(EnergyDistance, SymmetricAndZeroIffSameMultiset) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vector> a, b;
    for (int i = 0; i < 50 + trial; ++i) a.push_back(vec({n(rng), n(rng)}));
    for (int i = 0; i < 40; ++i) b.push_back(vec({n(rng) + 0.1, n(rng)}));
    const double ab = energy_distance(a, b), ba = energy_distance(b, a);
    EXPECT_GT(ab, 0.0);
    EXPECT_NEAR(ab, ba, 1e-12 * ab);
    auto perm = a;
    std::shuffle(perm.begin(), perm.end(), rng);
    EXPECT_EQ(energy_distance(a, perm), 0.0);
    auto moved = perm;
    moved[0][0] += 1e-3;
    EXPECT_GT(energy_distance(a, moved), 0.0);
  }
}

TEST(EnergyDistance, SameDistributionBelowPermutationThreshold) {
  // n = 1500 per batch and 199 label permutations; the 10^4-point version
  // costs minutes on one core.
  const auto toy = GaussianMixtureOracle::default_toy();
  const std::size_t n = 1500;
  const auto a = sample_marginal(toy, 1.0, 0.0, n, 501);
  const auto b = sample_marginal(toy, 1.0, 0.0, n, 502);
  const double observed = energy_distance(a, b);
  std::vector<Vector> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  ChainRng rng(503, 0, StreamKind::Subsample);
  std::vector<double> null_stats;
  for (int p = 0; p < 199; ++p) {
    std::shuffle(pooled.begin(), pooled.end(), rng.engine());
    const std::vector<Vector> x(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(n));
    const std::vector<Vector> y(pooled.begin() + static_cast<std::ptrdiff_t>(n), pooled.end());
    null_stats.push_back(energy_distance(x, y));
  }
  std::sort(null_stats.begin(), null_stats.end());
  const double threshold = null_stats[static_cast<std::size_t>(0.99 * 199)];
  EXPECT_LT(observed, threshold);
  // A shifted batch lands far above it.
  auto shifted = b;
  for (auto& v : shifted) v[1] += 0.3;
  EXPECT_GT(energy_distance(a, shifted), threshold);
}

TEST(EnergyDistance, SubsamplesLargeBatches) {
  const auto toy = GaussianMixtureOracle::default_toy();
  const auto a = sample_marginal(toy, 1.0, 0.0, 3000, 1);
  const auto b = sample_marginal(toy, 1.0, 0.0, 3000, 2);
  const double x = energy_distance(a, b, 1000);
  EXPECT_EQ(x, energy_distance(a, b, 1000));
  EXPECT_GE(x, 0.0);
  EXPECT_NE(x, energy_distance(a, b));
}

TEST(Metrics, ReportFields) {
  const auto toy = GaussianMixtureOracle::default_toy();
  const auto a = sample_marginal(toy, 1.0, 0.0, 2000, 1);
  const auto b = sample_marginal(toy, 1.0, 0.0, 2000, 2);
  const auto rep = compute_metrics(a, b, mixture_moments(toy, 1.0, 0.0));
  EXPECT_GE(rep.mean_error, 0.0);
  EXPECT_GE(rep.cov_error, 0.0);
  EXPECT_GE(rep.energy_distance, 0.0);
  EXPECT_LT(rep.mean_error, 0.2);
  EXPECT_EQ(rep.samples, 2000u);
  EXPECT_EQ(rep.reference_samples, 2000u);
  EXPECT_THROW(empirical_moments({}), ParameterError);
}
