#include "rmot/rmot_multi.hpp"

#include <gtest/gtest.h>

using namespace rmot;

namespace {

RoughHestonParams asset(double h, double nu, double v0) {
  RoughHestonParams p;
  p.hurst = h;
  p.vol_of_vol = nu;
  p.leverage = -0.5;
  p.v0 = v0;
  p.kappa = 1.0;
  p.v_inf = v0;
  return p;
}

TerminalDistribution grid_prior(double vol, double t, std::size_t n, double spot = 100.0) {
  TerminalDistribution d{spot, t, 0.0, {}, {}};
  const double sd = vol * std::sqrt(t);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = -6.0 + 12.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    d.atoms.push_back(spot * std::exp(sd * z - 0.5 * sd * sd));
    d.weights.push_back(std::exp(-0.5 * z * z));
    total += d.weights.back();
  }
  for (auto& w : d.weights) w /= total;
  d.enforce_martingale();
  return d;
}

MarketSlice toy_chain(const TerminalDistribution& truth, const std::vector<double>& strikes, double noise) {
  MarketSlice s{truth.spot, truth.maturity, truth.rate, strikes, {}, {}};
  for (double k : strikes) {
    s.prices.push_back(truth.expect([k](double x) { return std::max(x - k, 0.0); }));
    s.noise.push_back(noise);
  }
  return s;
}

Matrix random_spd(Eigen::Index n, RandomStream& rng) {
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = rng.normal();
  return a * a.transpose() + static_cast<double>(n) * Matrix::Identity(n, n);
}

// N blocks of size m, one corner variable per pair; block i couples to the
// pairs that contain i.
ArrowheadSystem pair_arrowhead(std::size_t n, Eigen::Index m, std::uint64_t seed) {
  RandomStream rng(seed, 0);
  const auto p = static_cast<Eigen::Index>(n * (n - 1) / 2);
  ArrowheadSystem s;
  s.corner = random_spd(p, rng) * 10.0;
  for (std::size_t i = 0; i < n; ++i) {
    s.blocks.push_back(random_spd(m, rng));
    Matrix b = Matrix::Zero(m, p);
    Eigen::Index k = 0;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t c = a + 1; c < n; ++c, ++k)
        if (a == i || c == i)
          for (Eigen::Index r = 0; r < m; ++r) b(r, k) = 0.3 * rng.normal();
    s.coupling.push_back(b);
  }
  return s;
}

Vector random_vector(Eigen::Index n, RandomStream& rng) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

// Closed-form minimiser for two assets: (Sigma^-1)_12 = (Sigma_hat^-1)_12.
double two_asset_oracle(const Matrix& psi, const Matrix& sigma_hat) {
  const double h = sigma_hat.inverse()(0, 1);
  const double ab = psi(0, 0) * psi(1, 1);
  // -c / (ab - c^2) = h  =>  h c^2 - c - h ab = 0, root with |c| < sqrt(ab).
  const double c = -2.0 * h * ab / (1.0 + std::sqrt(1.0 + 4.0 * h * h * ab));
  return c / psi(0, 1);
}

Matrix corr2(double r) {
  Matrix m(2, 2);
  m << 1.0, r, r, 1.0;
  return m;
}

TiltedMeasure as_measure(const TerminalDistribution& d) { return tilt(d, {}); }

}  // namespace

TEST(CovarianceFunctional, FlatCurvesClosedForm) {
  const auto cov = covariance_functional({asset(0.1, 0.3, 0.04), asset(0.2, 0.2, 0.09)}, 0.5);
  EXPECT_NEAR(cov.psi(0, 0), 0.04 * 0.5, 1e-12);
  EXPECT_NEAR(cov.psi(1, 1), 0.09 * 0.5, 1e-12);
  EXPECT_NEAR(cov.psi(0, 1), 0.06 * 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(cov.psi(0, 1), cov.psi(1, 0));
  EXPECT_NEAR(cov.second_order_budget, 0.09 / 0.04, 1e-9);
  EXPECT_EQ(cov.xi.size(), 2u);
}

TEST(CovarianceFunctional, MatchesMonteCarlo) {
  auto a = asset(0.1, 0.05, 0.04);
  a.v_inf = 0.06;
  auto b = asset(0.25, 0.05, 0.09);
  b.v_inf = 0.05;
  b.kappa = 2.0;
  const auto cov = covariance_functional({a, b}, 1.0);
  SimulationConfig sc;
  sc.n_paths = 20000;
  sc.n_steps = 100;
  sc.seed = 3;
  const auto sim = simulate_joint({a, b}, {100.0, 100.0}, 1.0, corr2(0.5), sc);
  for (Eigen::Index i = 0; i < 2; ++i)
    for (Eigen::Index j = 0; j < 2; ++j)
      EXPECT_NEAR(cov.psi(i, j) / sim.cross_sqrt_variance(i, j), 1.0, 0.03) << i << "," << j;
}

TEST(CovarianceFunctional, Validation) {
  EXPECT_THROW(covariance_functional(std::vector<RoughHestonParams>{}, 1.0), DomainError);
  EXPECT_THROW(covariance_functional({asset(0.1, 0.3, 0.04)}, 0.0), DomainError);
  CalibrationResult r;
  r.params = asset(0.1, 0.3, 0.04);
  r.converged = false;
  EXPECT_FALSE(covariance_functional(std::vector<CalibrationResult>{r, r}, 1.0).all_converged);
}

TEST(Arrowhead, MatchesDenseSolve) {
  for (std::size_t n : {2u, 3u, 5u, 8u}) {
    const auto sys = pair_arrowhead(n, 6, n);
    RandomStream rng(100 + n, 0);
    const Vector g = random_vector(sys.size(), rng);
    const auto step = block_sparse_newton_step(sys, g);
    const Vector dense = sys.dense().ldlt().solve(-g);
    EXPECT_FALSE(step.damped);
    EXPECT_LT((step.direction - dense).norm() / dense.norm(), 1e-8) << n;
  }
}

TEST(Arrowhead, EmptyCornerAndDenseCoupling) {
  RandomStream rng(5, 0);
  ArrowheadSystem s;
  s.corner = Matrix(0, 0);
  s.blocks = {random_spd(3, rng), random_spd(4, rng)};
  s.coupling = {Matrix(3, 0), Matrix(4, 0)};
  const Vector g = random_vector(7, rng);
  EXPECT_LT((block_sparse_newton_step(s, g).direction - s.dense().ldlt().solve(-g)).norm(), 1e-10);

  ArrowheadSystem t;
  t.corner = random_spd(3, rng) * 20.0;
  t.blocks = {random_spd(2, rng)};
  t.coupling = {Matrix::Constant(2, 3, 0.5)};
  const Vector h = random_vector(5, rng);
  EXPECT_LT((block_sparse_newton_step(t, h).direction - t.dense().ldlt().solve(-h)).norm(), 1e-10);
}

TEST(Arrowhead, IndefiniteSystemIsDamped) {
  auto sys = pair_arrowhead(3, 4, 9);
  sys.blocks[1](0, 0) = -50.0;
  RandomStream rng(2, 0);
  const Vector g = random_vector(sys.size(), rng);
  const auto step = block_sparse_newton_step(sys, g);
  EXPECT_TRUE(step.damped);
  EXPECT_GT(step.damping, 0.0);
  Matrix h = sys.dense();
  h.diagonal().array() += step.damping;
  EXPECT_LT((h * step.direction + g).norm(), 1e-8 * g.norm());
  EXPECT_LT(step.direction.dot(g), 0.0);
}

TEST(Arrowhead, Validation) {
  auto sys = pair_arrowhead(3, 4, 1);
  EXPECT_THROW(block_sparse_newton_step(sys, Vector::Zero(3)), DomainError);
  sys.coupling.pop_back();
  EXPECT_THROW(block_sparse_newton_step(sys, Vector::Zero(sys.size())), DomainError);
}

TEST(NearestCorrelation, RepairsAndFlags) {
  Matrix bad(3, 3);
  bad << 1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0;
  bool repaired = false;
  const Matrix fixed = nearest_correlation(bad, &repaired);
  EXPECT_TRUE(repaired);
  Eigen::SelfAdjointEigenSolver<Matrix> es(fixed);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(fixed(i, i), 1.0);
  nearest_correlation(corr2(0.3), &repaired);
  EXPECT_FALSE(repaired);
}

TEST(Correlation, NewtonMatchesTwoAssetClosedForm) {
  const auto cov = covariance_functional({asset(0.1, 0.3, 0.04), asset(0.3, 0.2, 0.09)}, 1.0);
  for (double r : {-0.7, -0.2, 0.0, 0.4, 0.85}) {
    Matrix sh = cov.psi.diagonal().asDiagonal();
    sh(0, 0) *= 1.1;
    sh(0, 1) = sh(1, 0) = r * std::sqrt(sh(0, 0) * sh(1, 1));
    CorrelationConfig cfg;
    cfg.gamma = 0.0;
    const auto est = estimate_correlation({0.1, 0.3}, cov, sh, Matrix::Identity(2, 2), cfg);
    EXPECT_TRUE(est.converged);
    EXPECT_NEAR(est.rho(0, 1), two_asset_oracle(cov.psi, sh), 1e-9) << r;
    for (std::size_t i = 1; i < est.objective_trace.size(); ++i)
      EXPECT_LE(est.objective_trace[i], est.objective_trace[i - 1] + 1e-15);
  }
}

TEST(Correlation, RecoversSimulatedPair) {
  const std::vector<RoughHestonParams> ps{asset(0.1, 0.05, 0.04), asset(0.2, 0.05, 0.06)};
  const auto cov = covariance_functional(ps, 1.0);
  SimulationConfig sc;
  sc.n_paths = 20000;
  sc.seed = 17;
  for (double r : {-0.6, 0.0, 0.7}) {
    const auto sim = simulate_joint(ps, {100.0, 100.0}, 1.0, corr2(r), sc);
    const Matrix sh = log_return_covariance(sim.terminal, {100.0, 100.0});
    CorrelationConfig cfg;
    cfg.gamma = 0.0;
    const auto est = estimate_correlation({0.1, 0.2}, cov, sh, Matrix::Identity(2, 2), cfg);
    EXPECT_NEAR(est.rho(0, 1), r, 0.05) << r;
  }
}

TEST(Correlation, TikhonovLimitReturnsHistorical) {
  const auto cov = covariance_functional({asset(0.1, 0.3, 0.04), asset(0.2, 0.2, 0.09), asset(0.3, 0.2, 0.05)}, 1.0);
  Matrix sh = cov.psi.diagonal().asDiagonal();
  sh(0, 1) = sh(1, 0) = 0.5 * cov.psi(0, 1);
  Matrix hist = Matrix::Identity(3, 3);
  hist(0, 1) = hist(1, 0) = 0.2;
  hist(1, 2) = hist(2, 1) = -0.3;
  CorrelationConfig cfg;
  cfg.gamma = 1e6;
  const auto est = estimate_correlation({0.1, 0.2, 0.3}, cov, sh, hist, cfg);
  EXPECT_LT((est.rho - hist).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Correlation, UnidentifiablePairNeedsRegularisation) {
  const auto cov = covariance_functional({asset(0.1, 0.3, 0.04), asset(0.1, 0.2, 0.09)}, 1.0);
  const Matrix sh = cov.psi.diagonal().asDiagonal();
  CorrelationConfig cfg;
  cfg.gamma = 0.0;
  try {
    estimate_correlation({0.1, 0.1005}, cov, sh, Matrix::Identity(2, 2), cfg);
    FAIL() << "expected a singular-system error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("gamma > 0"), std::string::npos);
  }
  cfg.gamma = 0.1;
  EXPECT_NO_THROW(estimate_correlation({0.1, 0.1005}, cov, sh, Matrix::Identity(2, 2), cfg));
}

TEST(Correlation, PermutationEquivariance) {
  const std::vector<RoughHestonParams> ps{asset(0.1, 0.3, 0.04), asset(0.2, 0.2, 0.09), asset(0.35, 0.2, 0.05)};
  const std::vector<double> h{0.1, 0.2, 0.35};
  const auto cov = covariance_functional(ps, 1.0);
  Matrix sh = cov.psi.diagonal().asDiagonal();
  sh(0, 1) = sh(1, 0) = 0.5 * cov.psi(0, 1);
  sh(0, 2) = sh(2, 0) = -0.2 * cov.psi(0, 2);
  sh(1, 2) = sh(2, 1) = 0.3 * cov.psi(1, 2);
  Matrix hist = Matrix::Identity(3, 3);
  hist(0, 2) = hist(2, 0) = 0.1;
  const auto est = estimate_correlation(h, cov, sh, hist);

  const std::vector<int> perm{2, 0, 1};
  Eigen::PermutationMatrix<Eigen::Dynamic> pm(3);
  for (int i = 0; i < 3; ++i) pm.indices()(i) = perm[static_cast<std::size_t>(i)];
  const Matrix p = Matrix(pm).transpose();  // p(i, perm[i]) = 1
  std::vector<RoughHestonParams> ps2;
  std::vector<double> h2;
  for (int i : perm) {
    ps2.push_back(ps[static_cast<std::size_t>(i)]);
    h2.push_back(h[static_cast<std::size_t>(i)]);
  }
  const auto cov2 = covariance_functional(ps2, 1.0);
  const auto est2 = estimate_correlation(h2, cov2, p * sh * p.transpose(), p * hist * p.transpose());
  EXPECT_LT((est2.rho - p * est.rho * p.transpose()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Correlation, ConfidenceWidensAsHurstGapShrinks) {
  const auto cov = covariance_functional({asset(0.1, 0.3, 0.04), asset(0.2, 0.2, 0.09), asset(0.12, 0.2, 0.05)}, 1.0);
  const Matrix sh = cov.psi.diagonal().asDiagonal();
  const auto est = estimate_correlation({0.1, 0.2, 0.12}, cov, sh, Matrix::Identity(3, 3));
  // Pair (0, 2) has the smaller gap.
  EXPECT_GT(est.ci_halfwidth(0, 2), est.ci_halfwidth(0, 1));
  EXPECT_GT(est.ci_halfwidth(0, 1), 0.0);
  EXPECT_GE(est.condition, 1.0);
}

TEST(Correlation, Validation) {
  const auto cov = covariance_functional({asset(0.1, 0.3, 0.04), asset(0.2, 0.2, 0.09)}, 1.0);
  EXPECT_THROW(estimate_correlation({0.1}, cov, cov.psi, Matrix::Identity(2, 2)), DomainError);
  EXPECT_THROW(estimate_correlation({0.1, 0.2}, cov, Matrix::Zero(2, 2), Matrix::Identity(2, 2)), DomainError);
  EXPECT_THROW(estimate_correlation({0.1, 0.2}, cov, cov.psi, corr2(1.5)), DomainError);
  CorrelationConfig cfg;
  cfg.gamma = -1.0;
  EXPECT_THROW(estimate_correlation({0.1, 0.2}, cov, cov.psi, Matrix::Identity(2, 2), cfg), DomainError);
}

TEST(Copula, MarginalsAndLogCorrelation) {
  const auto m1 = as_measure(grid_prior(0.2, 0.5, 300));
  const auto m2 = as_measure(grid_prior(0.35, 0.5, 250, 50.0));
  const RoughCopula cop({m1, m2}, corr2(0.7));
  EXPECT_FALSE(cop.psd_repaired());
  const Matrix x = cop.sample(100000, 1);
  const Matrix c = log_return_covariance(x, {100.0, 50.0});
  EXPECT_NEAR(c(0, 1) / std::sqrt(c(0, 0) * c(1, 1)), 0.7, 0.03);

  // Marginal law against independent draws from the discrete measure.
  for (int a = 0; a < 2; ++a) {
    const auto& m = a == 0 ? m1 : m2;
    std::vector<double> cum(m.weights.size());
    std::partial_sum(m.weights.begin(), m.weights.end(), cum.begin());
    RandomStream rng(99, static_cast<std::uint64_t>(a));
    std::vector<double> ref, got;
    for (int k = 0; k < 10000; ++k) {
      const double u = rng.uniform() * cum.back();
      ref.push_back(m.atoms[static_cast<std::size_t>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin())]);
      got.push_back(x(k, a));
    }
    EXPECT_GT(ks_two_sample(got, ref).p_value, 0.01) << a;
  }
}

TEST(Copula, ComonotoneBoundary) {
  const auto m1 = as_measure(grid_prior(0.2, 0.5, 200));
  const auto m2 = as_measure(grid_prior(0.4, 0.5, 200));
  const RoughCopula cop({m1, m2}, corr2(1.0));
  EXPECT_NEAR(cop.gaussian_correlation()(0, 1), 1.0, 1e-9);
  const Matrix x = cop.sample(2000, 4);
  for (Eigen::Index i = 1; i < x.rows(); ++i)
    EXPECT_GE((x(i, 0) - x(0, 0)) * (x(i, 1) - x(0, 1)), 0.0);
}

TEST(Copula, RepairFlagAndValidation) {
  const auto m = as_measure(grid_prior(0.2, 0.5, 100));
  Matrix bad(3, 3);
  bad << 1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0;
  EXPECT_TRUE(RoughCopula({m, m, m}, bad).psd_repaired());
  EXPECT_THROW(RoughCopula({m, m}, Matrix::Identity(3, 3)), DomainError);
}

TEST(Basket, SingleWeightReproducesSingleAsset) {
  const auto p1 = grid_prior(0.2, 0.25, 300);
  const auto p2 = grid_prior(0.3, 0.25, 300);
  const auto c1 = toy_chain(grid_prior(0.22, 0.25, 300), {90, 100, 110}, 0.05);
  const auto c2 = toy_chain(grid_prior(0.28, 0.25, 300), {90, 100, 110}, 0.05);
  const RoughCopula cop({as_measure(p1), as_measure(p2)}, corr2(0.5));
  const auto b = basket_bounds(cop, {{1.0, 0.0}, 105.0}, {c1, c2});
  const auto& m1 = cop.marginals()[0];
  const auto ref = call_bounds(TerminalDistribution{100.0, 0.25, 0.0, m1.atoms, m1.weights}, c1, 105.0);
  EXPECT_EQ(b.bound.lower, ref.lower);
  EXPECT_EQ(b.bound.upper, ref.upper);
  EXPECT_EQ(b.bound.mid, ref.mid);
  const auto half = basket_bounds(cop, {{0.0, 0.5}, 50.0}, {c1, c2});
  const auto& m2 = cop.marginals()[1];
  EXPECT_NEAR(half.bound.upper,
              0.5 * call_bounds(TerminalDistribution{100.0, 0.25, 0.0, m2.atoms, m2.weights}, c2, 100.0).upper, 1e-12);
}

TEST(Basket, BracketsAndRespectsConstraints) {
  const auto p1 = grid_prior(0.2, 0.25, 300);
  const auto p2 = grid_prior(0.3, 0.25, 300);
  const auto c1 = toy_chain(grid_prior(0.22, 0.25, 300), {90, 100, 110}, 0.05);
  const auto c2 = toy_chain(grid_prior(0.28, 0.25, 300), {90, 100, 110}, 0.05);
  const RoughCopula cop({tilt(p1, slice_constraints(p1.atoms, c1)), tilt(p2, slice_constraints(p2.atoms, c2))},
                        corr2(0.6));
  BasketConfig cfg;
  cfg.samples = 8000;
  double prev_upper = std::numeric_limits<double>::infinity();
  for (double k : {90.0, 100.0, 110.0}) {
    const auto b = basket_bounds(cop, {{0.5, 0.5}, k}, {c1, c2}, cfg);
    EXPECT_LE(b.bound.lower, b.bound.mid + 1e-10);
    EXPECT_GE(b.bound.upper, b.bound.mid - 1e-10);
    EXPECT_GE(b.bound.lower, std::max(100.0 - k, 0.0) - 1e-8);
    EXPECT_LE(b.bound.upper, prev_upper);
    EXPECT_LE(b.bound.max_constraint_residual, 1e-7);
    EXPECT_LE(b.bound.kl_upper, cfg.kl_radius + 1e-8);
    EXPECT_GT(b.relative_spread, 0.0);
    prev_upper = b.bound.upper;
  }
  // The same basket bounded with a larger radius is wider.
  cfg.kl_radius = 0.2;
  const auto wide = basket_bounds(cop, {{0.5, 0.5}, 100.0}, {c1, c2}, cfg);
  cfg.kl_radius = 0.05;
  const auto narrow = basket_bounds(cop, {{0.5, 0.5}, 100.0}, {c1, c2}, cfg);
  EXPECT_GT(wide.bound.upper - wide.bound.lower, narrow.bound.upper - narrow.bound.lower);
}

TEST(Basket, Validation) {
  const auto p1 = grid_prior(0.2, 0.25, 100);
  const auto c1 = toy_chain(p1, {100}, 0.05);
  const RoughCopula cop({as_measure(p1), as_measure(p1)}, corr2(0.5));
  EXPECT_THROW(basket_bounds(cop, {{0.0, 0.0}, 100.0}, {c1, c1}), DomainError);
  EXPECT_THROW(basket_bounds(cop, {{1.0}, 100.0}, {c1, c1}), DomainError);
  EXPECT_THROW(basket_bounds(cop, {{0.5, 0.5}, 100.0}, {c1}), DomainError);
  auto c2 = c1;
  c2.maturity = 0.5;
  EXPECT_THROW(basket_bounds(cop, {{0.5, 0.5}, 100.0}, {c1, c2}), DomainError);
}

TEST(Basket, WidthDecaySlope) {
  std::vector<double> t{0.1, 0.25, 0.5, 1.0}, w;
  for (double x : t) w.push_back(3.0 * std::pow(x, 0.2));
  EXPECT_NEAR(width_decay(t, w).slope, 0.2, 1e-12);
  EXPECT_THROW(width_decay({1.0}, {1.0}), DomainError);
}
