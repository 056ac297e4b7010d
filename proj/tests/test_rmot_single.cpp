#include "oracles.hpp"
#include "rmot/black_scholes.hpp"
#include "rmot/rmot_single.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace rmot;
using oracle::primal_oracle;
using oracle::random_instance;

namespace {

TerminalDistribution toy_prior() {
  return {100.0, 0.5, 0.0, {80, 90, 100, 110, 120}, {0.1, 0.2, 0.4, 0.2, 0.1}};
}

MarketSlice toy_chain(const TerminalDistribution& truth, const std::vector<double>& strikes, double noise) {
  MarketSlice s{truth.spot, truth.maturity, truth.rate, strikes, {}, {}};
  for (double k : strikes) {
    s.prices.push_back(truth.expect([k](double x) { return std::max(x - k, 0.0); }));
    s.noise.push_back(noise);
  }
  return s;
}

// Lognormal-ish prior on a grid, mean equal to the forward.
TerminalDistribution grid_prior(double vol, double t, std::size_t n) {
  TerminalDistribution d{100.0, t, 0.0, {}, {}};
  const double sd = vol * std::sqrt(t);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = -6.0 + 12.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    d.atoms.push_back(100.0 * std::exp(sd * z - 0.5 * sd * sd));
    d.weights.push_back(std::exp(-0.5 * z * z));
    total += d.weights.back();
  }
  for (auto& w : d.weights) w /= total;
  d.enforce_martingale();
  return d;
}

}  // namespace

TEST(Tilt, NoConstraintsLeavesMartingalePrior) {
  const auto prior = toy_prior();
  TiltOptions opt;
  opt.direction = Direction::Upper;
  opt.target_payoff = prior.atoms;
  for (const auto& m : {tilt(prior, {}), tilt(prior, {}, opt)}) {
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(m.weights[i], prior.weights[i], 1e-12);
    EXPECT_NEAR(m.kl, 0.0, 1e-14);
  }
  EXPECT_TRUE(tilt(prior, {}, opt).payoff_spanned);
}

TEST(Tilt, QuoteAtPriorPriceLeavesPrior) {
  const auto prior = toy_prior();
  const auto vals = call_payoff(prior.atoms, 100.0);
  const auto m = tilt(prior, {{"atm", vals, prior.expect([](double s) { return std::max(s - 100.0, 0.0); }), 0.0}});
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(m.weights[i], prior.weights[i], 1e-10);
  EXPECT_NEAR(m.lambdas[0], 0.0, 1e-8);
  EXPECT_NEAR(m.lambda_martingale, 0.0, 1e-8);
}

TEST(Tilt, MatchesBruteForceDualGrid) {
  // Prior mean 101 against a forward of 100, and a binding ATM call at 5.
  TerminalDistribution prior{100.0, 0.5, 0.0, {80, 90, 100, 110, 130}, {0.1, 0.2, 0.4, 0.2, 0.1}};
  const std::vector<double> c = {0, 0, 0, 10, 30};
  const auto m = tilt(prior, {{"atm", c, 5.0, 0.0}});

  auto log_z = [&](double l0, double l1) {
    double z = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
      z += prior.weights[i] * std::exp(-l0 * (prior.atoms[i] - 100.0) / 100.0 - l1 * (c[i] - 5.0) / 100.0);
    return std::log(z);
  };
  double cx = 0.0, cy = 0.0, half = 100.0;
  for (int round = 0; round < 25; ++round) {
    double best = std::numeric_limits<double>::infinity(), bx = cx, by = cy;
    for (int i = -20; i <= 20; ++i)
      for (int j = -20; j <= 20; ++j) {
        const double x = cx + half * i / 20.0, y = cy + half * j / 20.0;
        const double v = log_z(x, y);
        if (v < best) {
          best = v;
          bx = x;
          by = y;
        }
      }
    cx = bx;
    cy = by;
    half *= 0.3;
  }
  double z = 0.0;
  std::vector<double> q(5);
  for (std::size_t i = 0; i < 5; ++i) {
    q[i] = prior.weights[i] * std::exp(-cx * (prior.atoms[i] - 100.0) / 100.0 - cy * (c[i] - 5.0) / 100.0);
    z += q[i];
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(m.weights[i], q[i] / z, 1e-7);
  EXPECT_NEAR(m.lambda_martingale, cx, 1e-5);
  EXPECT_NEAR(m.lambdas[0], cy, 1e-5);
}

TEST(Tilt, MatchesPrimalSolverOnRandomInstances) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = random_instance(rng);
    const auto m = tilt(inst.prior, inst.cons);
    const auto q = primal_oracle(inst.prior, inst.cons);
    ASSERT_EQ(q.size(), m.weights.size()) << "trial " << trial;
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(m.weights[i], q[i], 1e-6) << "trial " << trial;
    EXPECT_LE(m.dual_gradient_norm, 1e-8);
  }
}

TEST(Tilt, DirectionalTiltSolvesThePenalisedPrimal) {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 20; ++trial) {
    const auto inst = random_instance(rng);
    const double kl0 = tilt(inst.prior, inst.cons).kl;
    TiltOptions opt;
    opt.direction = trial % 2 == 0 ? Direction::Upper : Direction::Lower;
    opt.target_payoff = call_payoff(inst.prior.atoms, inst.prior.forward() * 1.1);
    opt.kl_radius = kl0 + 0.02;
    TiltedMeasure m;
    try {
      m = tilt(inst.prior, inst.cons, opt);
    } catch (const UnboundedDualError&) {
      continue;  // ball larger than the support can use
    }
    if (m.payoff_spanned) continue;
    ++checked;
    EXPECT_NEAR(m.kl, opt.kl_radius, 1e-9);
    const double sgn = opt.direction == Direction::Upper ? 1.0 : -1.0;
    std::vector<double> g(opt.target_payoff.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = sgn * opt.target_payoff[i] / inst.prior.forward();
    const auto q = primal_oracle(inst.prior, inst.cons, g, m.theta);
    ASSERT_EQ(q.size(), m.weights.size());
    for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(m.weights[i], q[i], 1e-6) << "trial " << trial;
    // Optimality: any ball-feasible measure found by the primal with a
    // smaller temperature cannot beat the tilt.
    const auto q_half = primal_oracle(inst.prior, inst.cons, g, 0.5 * m.theta);
    double e_half = 0.0, e_tilt = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      e_half += q_half[i] * g[i];
      e_tilt += m.weights[i] * g[i];
    }
    EXPECT_LE(e_half, e_tilt + 1e-12);
  }
  EXPECT_GE(checked, 10);
}

TEST(Tilt, SaturatedResultStaysInsideTheBall) {
  std::mt19937_64 rng(11);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = random_instance(rng);
    const double kl0 = tilt(inst.prior, inst.cons).kl;
    for (double cap : {0.5, 1.5, 3.0, 7.0, 20.0}) {
      TiltOptions opt;
      opt.direction = Direction::Upper;
      opt.target_payoff = call_payoff(inst.prior.atoms, inst.prior.forward());
      opt.kl_radius = kl0 + 0.02;
      opt.theta_max = cap;
      opt.allow_saturation = true;
      const auto m = tilt(inst.prior, inst.cons, opt);
      if (m.payoff_spanned) continue;
      ++checked;
      EXPECT_LE(m.kl, opt.kl_radius + 1e-9) << "trial " << trial << " cap " << cap;
      if (!m.saturated) EXPECT_NEAR(m.kl, opt.kl_radius, 1e-9);
      EXPECT_LE(m.theta, cap);
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(Bounds, DenseQuotesOnSimulatedPrior) {
  // Many closely spaced quotes with tight noise on a Monte Carlo prior; the
  // upper bound is nearly pinned and the dual degenerates at high temperature.
  RandomStream rng(3, 0);
  TerminalDistribution prior{100.0, 0.25, 0.0, {}, {}};
  for (int i = 0; i < 4000; ++i) prior.atoms.push_back(100.0 * std::exp(0.1 * rng.normal() - 0.005));
  prior.weights.assign(prior.atoms.size(), 1.0 / 4000.0);
  MarketSlice chain{100.0, 0.25, 0.0, {}, {}, {}};
  for (int k = 0; k < 40; ++k) {
    const double strike = 85.0 + 0.75 * k;
    chain.strikes.push_back(strike);
    chain.prices.push_back(bs_call(100.0, strike, 0.25, 0.0, 0.19));
    chain.noise.push_back(2e-4 * chain.prices.back() + 1e-4);
  }
  for (double strike : {90.0, 100.0, 110.0}) {
    const auto b = call_bounds(prior, chain, strike);
    EXPECT_LE(b.lower, b.mid + 1e-12);
    EXPECT_GE(b.upper, b.mid - 1e-12);
    EXPECT_LE(b.kl_upper, 0.05 + 1e-9);
    EXPECT_LE(b.kl_lower, 0.05 + 1e-9);
    EXPECT_LE(b.max_constraint_residual, 1e-8);
  }
}

TEST(Tilt, Invariants) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(rng);
    const auto m = tilt(inst.prior, inst.cons);
    double total = 0.0;
    for (double w : m.weights) {
      EXPECT_GE(w, 0.0);
      total += w;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_NEAR(m.mean(), inst.prior.forward(), 1e-8 * inst.prior.forward());
    for (const auto& c : inst.cons) EXPECT_LE(std::abs(m.expect(c.values) - c.target), c.tolerance + 1e-8);
  }
}

TEST(Tilt, InfeasibleQuoteIsNamed) {
  const auto prior = toy_prior();
  try {
    tilt(prior, {{"ok", call_payoff(prior.atoms, 100.0), 4.0, 0.0},
                 {"too rich", call_payoff(prior.atoms, 110.0), 25.0, 0.0}});
    FAIL() << "expected InfeasibleConstraintsError";
  } catch (const InfeasibleConstraintsError& e) {
    EXPECT_EQ(e.label, "too rich");
    EXPECT_NE(std::string(e.what()).find("too rich"), std::string::npos);
  }
}

TEST(Tilt, RadiusBelowMinimalKlRejected) {
  const auto prior = toy_prior();
  TiltOptions opt;
  opt.direction = Direction::Upper;
  opt.target_payoff = call_payoff(prior.atoms, 110.0);
  opt.kl_radius = 1e-6;
  EXPECT_THROW(tilt(prior, {{"atm", call_payoff(prior.atoms, 100.0), 6.0, 0.0}}, opt), InfeasibleConstraintsError);
}

TEST(Tilt, InputValidation) {
  const auto prior = toy_prior();
  EXPECT_THROW(tilt(prior, {{"short", {1.0, 2.0}, 1.0, 0.0}}), DomainError);
  EXPECT_THROW(tilt(prior, {{"neg", prior.atoms, 100.0, -1.0}}), DomainError);
  TiltOptions opt;
  opt.direction = Direction::Lower;
  EXPECT_THROW(tilt(prior, {}, opt), DomainError);
}

TEST(Bounds, BracketMidAndRespectArbitrageBand) {
  const auto prior = grid_prior(0.2, 0.25, 400);
  const auto truth = grid_prior(0.22, 0.25, 400);
  const auto chain = toy_chain(truth, {90, 95, 100, 105, 110}, 0.05);
  for (double k : {95.0, 100.0, 115.0, 130.0}) {
    const auto b = call_bounds(prior, chain, k);
    EXPECT_LE(b.lower, b.mid + 1e-12);
    EXPECT_GE(b.upper, b.mid - 1e-12);
    EXPECT_GE(b.lower, std::max(100.0 - k, 0.0) - 1e-9);
    EXPECT_LE(b.upper, 100.0);
    EXPECT_LE(b.max_constraint_residual, 1e-8);
    EXPECT_LE(b.kl_upper, 0.05 + 1e-9);
  }
}

TEST(Bounds, QuotedPayoffCollapses) {
  const auto prior = grid_prior(0.2, 0.25, 400);
  auto chain = toy_chain(grid_prior(0.22, 0.25, 400), {90, 100, 110}, 1e-9);
  const auto b = call_bounds(prior, chain, 100.0);
  EXPECT_NEAR(b.lower, chain.prices[1], 1e-6);
  EXPECT_NEAR(b.upper, chain.prices[1], 1e-6);
}

TEST(Bounds, AddingConstraintsNeverWidens) {
  const auto prior = grid_prior(0.2, 0.25, 300);
  const auto truth = grid_prior(0.21, 0.25, 300);
  const auto few = toy_chain(truth, {95, 105}, 0.05);
  const auto more = toy_chain(truth, {90, 95, 100, 105, 110}, 0.05);
  for (double k : {100.0, 120.0}) {
    const auto a = call_bounds(prior, few, k);
    const auto b = call_bounds(prior, more, k);
    EXPECT_LE(b.upper - b.lower, a.upper - a.lower + 1e-9) << k;
  }
}

TEST(Bounds, LargerRadiusWidens) {
  const auto prior = grid_prior(0.2, 0.25, 300);
  const auto chain = toy_chain(grid_prior(0.21, 0.25, 300), {95, 100, 105}, 0.05);
  BoundsConfig narrow, wide;
  narrow.kl_radius = 0.02;
  wide.kl_radius = 0.1;
  const auto a = call_bounds(prior, chain, 115.0, narrow);
  const auto b = call_bounds(prior, chain, 115.0, wide);
  EXPECT_LT(b.lower, a.lower);
  EXPECT_GT(b.upper, a.upper);
}

TEST(Bounds, ClassicalModeIsWider) {
  const auto prior = grid_prior(0.2, 0.25, 300);
  const auto chain = toy_chain(grid_prior(0.21, 0.25, 300), {95, 100, 105}, 0.05);
  const auto rmot = call_bounds(prior, chain, 120.0);
  BoundsConfig cfg;
  cfg.classical = true;
  const auto classical = call_bounds(prior, chain, 120.0, cfg);
  EXPECT_TRUE(classical.classical_infinite);
  EXPECT_GT(classical.upper - classical.lower, 5.0 * (rmot.upper - rmot.lower));
  EXPECT_TRUE(std::isnan(classical.certificate));
}

TEST(Bounds, CertificateReportedBeyondThreshold) {
  const auto prior = grid_prior(0.2, 0.25, 300);
  const auto chain = toy_chain(grid_prior(0.21, 0.25, 300), {95, 100, 105}, 0.05);
  BoundsConfig cfg;
  cfg.rate = RateFunction{0.1, 0.5, {}, {}};
  cfg.misspecification = 0.01;
  EXPECT_TRUE(std::isnan(call_bounds(prior, chain, 110.0, cfg).certificate));
  const auto b = call_bounds(prior, chain, 140.0, cfg);
  CertificateInputs ci{0.01, 1.0, 100.0, std::log(1.4), 0.25, 0.1, *cfg.rate, 0.0, 0.25};
  EXPECT_DOUBLE_EQ(b.certificate, extrapolation_certificate(ci));
}

TEST(RateFunction, AsymptoticForm) {
  EXPECT_DOUBLE_EQ(rate_function(0.1, 2.0, 0.5), 2.0 * std::pow(0.5, 0.9));
  EXPECT_EQ(rate_function(0.2, 1.0, 0.0), 0.0);
  EXPECT_THROW(rate_function(0.1, 1.0, -0.1), DomainError);
}

TEST(RateFunction, LegendreOfQuadraticIsExact) {
  RateFunction rf;
  for (int j = -400; j <= 400; ++j) {
    const double l = j * 0.01;
    rf.lambda_grid.push_back(l);
    rf.lambda_values.push_back(0.5 * l * l);
  }
  for (double k : {0.0, 0.137, 0.5, 1.3, 2.9}) EXPECT_NEAR(rf(k), 0.5 * k * k, 1e-12) << k;
}

TEST(RateFunction, TailFitRecoversConstant) {
  // Survival exp(-c k^{1-H} / T^{2H}) on a fine grid of atoms above the spot.
  const double c = 0.4, h = 0.1, t = 0.5, spot = 100.0;
  std::vector<double> atoms, w;
  double prev = 1.0;
  for (int j = 1; j <= 4000; ++j) {
    const double k = j * 0.0005;
    const double surv = std::exp(-c * std::pow(k, 1.0 - h) / std::pow(t, 2.0 * h));
    atoms.push_back(spot * std::exp(k - 0.00025));
    w.push_back(prev - surv);
    prev = surv;
  }
  atoms.push_back(spot * std::exp(3.0));
  w.push_back(prev);
  const auto fit = fit_tail_constant(atoms, w, spot, t, h);
  EXPECT_NEAR(fit.c_h, c, 2e-3);
  EXPECT_GT(fit.r_squared, 0.999);
  EXPECT_THROW(fit_tail_constant({100.0, 101.0}, {0.5, 0.5}, spot, t, h), DomainError);
}

TEST(Certificate, FormulaAndShape) {
  RateFunction rf{0.1, 3.0, {}, {}};
  CertificateInputs ci{0.02, 1.0, 100.0, 0.4, 5.0 / 252.0, 0.1, rf, 0.0, 0.25};
  const double expect = std::sqrt(0.04) * 100.0 * std::exp(0.4) *
                        std::exp(-3.0 * std::pow(0.4, 0.9) / (2.0 * std::pow(5.0 / 252.0, 0.2)));
  EXPECT_NEAR(extrapolation_certificate(ci), expect, 1e-12 * expect);
  double prev = extrapolation_certificate(ci);
  for (double k = 0.45; k < 1.5; k += 0.05) {
    ci.k = k;
    const double v = extrapolation_certificate(ci);
    EXPECT_LT(v, prev);
    prev = v;
  }
  ci.k = 0.5;
  const double base = extrapolation_certificate(ci);
  ci.misspecification = 0.08;
  EXPECT_NEAR(extrapolation_certificate(ci), 2.0 * base, 1e-12 * base);
  ci.misspecification = 0.0;
  EXPECT_EQ(extrapolation_certificate(ci), 0.0);
  ci.k = 0.2;
  EXPECT_THROW(extrapolation_certificate(ci), DomainError);
}
