#pragma once

// Single-asset regularised martingale optimal transport: KL tilting of a
// discrete prior under martingale and soft market constraints, KL-ball price
// bounds, the large-deviation rate function and the extrapolation
// certificate.

#include "rmot/rough_heston.hpp"

#include <boost/math/tools/roots.hpp>

#include <functional>
#include <optional>

namespace rmot {

/// E_Q[values] must land within target +- tolerance (tolerance 0: equality).
struct PayoffConstraint {
  std::string label;
  std::vector<double> values;  // payoff at each atom
  double target = 0.0;
  double tolerance = 0.0;
};

inline std::vector<double> call_payoff(const std::vector<double>& atoms, double strike) {
  std::vector<double> v(atoms.size());
  for (std::size_t i = 0; i < atoms.size(); ++i) v[i] = std::max(atoms[i] - strike, 0.0);
  return v;
}

inline std::vector<double> put_payoff(const std::vector<double>& atoms, double strike) {
  std::vector<double> v(atoms.size());
  for (std::size_t i = 0; i < atoms.size(); ++i) v[i] = std::max(strike - atoms[i], 0.0);
  return v;
}

enum class Direction { None, Upper, Lower };

struct TiltOptions {
  Direction direction = Direction::None;
  std::vector<double> target_payoff;  // g at each atom, required unless direction is None
  double kl_radius = 0.05;            // nats, absolute
  double gradient_tolerance = 1e-11;  // dual gradient, in units of the forward
  std::size_t max_newton = 500;
  double theta_max = 1e4;             // temperature cap, payoff in units of the forward
  bool allow_saturation = false;      // return the capped solution instead of throwing
};

struct TiltedMeasure {
  std::vector<double> atoms;
  std::vector<double> prior;
  std::vector<double> weights;
  double lambda_martingale = 0.0;
  std::vector<double> lambdas;  // one per market constraint, in price units^-1 scaled by the forward
  double theta = 0.0;
  double kl = 0.0;
  double dual_gradient_norm = 0.0;
  bool saturated = false;
  bool payoff_spanned = false;

  double expect(const std::vector<double>& values) const {
    double s = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * values[i];
    return s;
  }

  double mean() const { return expect(atoms); }
};

inline double kl_divergence(const std::vector<double>& q, const std::vector<double>& p) {
  require(q.size() == p.size(), "kl_divergence: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    require(p[i] > 0.0, "kl_divergence: q not absolutely continuous w.r.t. p");
    s += q[i] * std::log(q[i] / p[i]);
  }
  return std::max(s, 0.0);
}

class InfeasibleConstraintsError : public DomainError {
public:
  InfeasibleConstraintsError(const std::string& what, std::string quote) : DomainError(what), label(std::move(quote)) {}
  std::string label;
};

/// The optimal measure wants unbounded tilting: the payoff grows faster than
/// the prior's tail can support inside the KL ball (classical MOT regime).
class UnboundedDualError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

/// Result of tilting a discrete prior: weights plus one multiplier per constraint.
struct GibbsSolution {
  std::vector<double> weights;
  std::vector<double> lambdas;
  double theta = 0.0;
  double kl = 0.0;
  double dual_gradient_norm = 0.0;
  bool saturated = false;
  bool payoff_spanned = false;
};

namespace detail {

// Constraint rows centred on their targets and divided by a common scale.
// Rows with zero tolerance are equalities and always active.
struct DualProblem {
  Matrix phi;     // n_constraints x n_atoms
  Vector sigma;   // normalised tolerances
  std::vector<char> equality;
  Vector log_p;   // log prior, -inf where p = 0
  Vector g;       // normalised target payoff (may be empty)
  std::vector<std::string> labels;
};

struct DualState {
  Vector lambda;
  std::vector<int> sign;  // +1/-1 active inequality side, 0 inactive
};

struct DualEval {
  Vector q;
  double log_z;
};

inline DualEval evaluate(const DualProblem& dp, const Vector& lambda, double theta) {
  Vector logits = dp.log_p - dp.phi.transpose() * lambda;
  if (theta != 0.0) logits += theta * dp.g;
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    if (std::isfinite(logits(i))) mx = std::max(mx, logits(i));
  Vector q(logits.size());
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    q(i) = std::isfinite(logits(i)) ? std::exp(logits(i) - mx) : 0.0;
    z += q(i);
  }
  q /= z;
  return {q, mx + std::log(z)};
}

inline bool is_active(const DualProblem& dp, const DualState& st, std::size_t k) {
  return dp.equality[k] || st.sign[k] != 0;
}

inline double objective(const DualProblem& dp, const Vector& lambda, double theta) {
  return evaluate(dp, lambda, theta).log_z + dp.sigma.dot(lambda.cwiseAbs());
}

/// Subgradient residual of the dual.
inline double kkt_residual(const DualProblem& dp, const DualState& st, const Vector& moments) {
  double worst = 0.0;
  for (std::size_t k = 0; k < st.sign.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double r = moments(kk), s = dp.sigma(kk);
    if (dp.equality[k]) worst = std::max(worst, std::abs(r));
    else if (st.sign[k] != 0) worst = std::max(worst, std::abs(r - s * st.sign[k]));
    else worst = std::max(worst, std::max(0.0, std::abs(r) - s));
  }
  return worst;
}

/// Active-set Newton on the dual at fixed temperature theta. Warm-starts from
/// and updates `st`.
inline void solve_dual(const DualProblem& dp, DualState& st, double theta, const TiltOptions& opt) {
  const auto nc = static_cast<std::size_t>(dp.phi.rows());
  std::size_t fresh = nc;  // constraint added by the last outer pass
  int idle_passes = 0;      // outer passes in which no step was accepted
  for (std::size_t outer = 0; outer < 4 * nc + 20; ++outer) {
    // Newton on the current active set.
    int stall = 0;
    bool stepped = false;
    for (std::size_t it = 0; it < opt.max_newton; ++it) {
      const DualEval ev = evaluate(dp, st.lambda, theta);
      const Vector moments = dp.phi * ev.q;
      std::vector<Eigen::Index> act;
      for (std::size_t k = 0; k < nc; ++k)
        if (is_active(dp, st, k)) act.push_back(static_cast<Eigen::Index>(k));
      const auto na = static_cast<Eigen::Index>(act.size());
      if (na == 0) break;
      Vector grad(na);
      Matrix rows(na, dp.phi.cols());
      for (Eigen::Index a = 0; a < na; ++a) {
        const Eigen::Index k = act[static_cast<std::size_t>(a)];
        grad(a) = -moments(k) + dp.sigma(k) * st.sign[static_cast<std::size_t>(k)];
        rows.row(a) = dp.phi.row(k);
      }
      if (grad.cwiseAbs().maxCoeff() <= opt.gradient_tolerance) break;
      // Hessian = Cov_q(phi_A). Eigenvalues are floored at 1e-12 of the top
      // one, which turns the step into a gradient step on the ill-conditioned
      // part of the spectrum.
      const Vector mean = rows * ev.q;
      const Matrix centred = rows.colwise() - mean;
      const Matrix hess = centred * ev.q.asDiagonal() * centred.transpose();
      Eigen::SelfAdjointEigenSolver<Matrix> es(hess);
      const double floor = std::max(1e-12 * es.eigenvalues().maxCoeff(), 1e-300);
      Vector dir = Vector::Zero(na);
      for (Eigen::Index j = 0; j < na; ++j)
        dir -= es.eigenvectors().col(j) *
               (es.eigenvectors().col(j).dot(grad) / std::max(es.eigenvalues()(j), floor));
      if (!(dir.dot(grad) < 0.0)) dir = -grad;
      // Do not let an active inequality multiplier change sign.
      double t_max = 1.0;
      Eigen::Index blocking = -1;
      for (Eigen::Index a = 0; a < na; ++a) {
        const Eigen::Index k = act[static_cast<std::size_t>(a)];
        if (dp.equality[static_cast<std::size_t>(k)]) continue;
        const double lam = st.lambda(k), d = dir(a);
        const int s = st.sign[static_cast<std::size_t>(k)];
        if (s * d < 0.0) {
          const double t = -lam / d;
          if (t < t_max) {
            t_max = std::max(t, 0.0);
            blocking = k;
          }
        }
      }
      // A just-added constraint blocked at once (the floored spectrum can point
      // its multiplier the wrong way) gets a coordinate Newton step instead,
      // otherwise the outer loop cycles on it.
      if (blocking >= 0 && t_max == 0.0 && static_cast<std::size_t>(blocking) == fresh) {
        const auto a = static_cast<Eigen::Index>(std::find(act.begin(), act.end(), blocking) - act.begin());
        dir.setZero();
        dir(a) = -grad(a) / std::max(hess(a, a), floor);
        t_max = 1.0;
        blocking = -1;
      }
      const double f0 = objective(dp, st.lambda, theta);
      const double slope = dir.dot(grad);
      double t = t_max;
      Vector trial = st.lambda;
      bool moved = false;
      double f1 = f0;
      for (int ls = 0; ls < 60; ++ls) {
        trial = st.lambda;
        for (Eigen::Index a = 0; a < na; ++a) trial(act[static_cast<std::size_t>(a)]) += t * dir(a);
        f1 = objective(dp, trial, theta);
        if (std::isfinite(f1) && f1 <= f0 + 1e-4 * t * slope + 1e-15 * std::abs(f0)) {
          moved = true;
          break;
        }
        t *= 0.5;
        blocking = -1;
      }
      if (!moved) break;  // at working precision
      stall = f0 - f1 <= 1e-15 * std::max(1.0, std::abs(f0)) ? stall + 1 : 0;
      st.lambda = trial;
      stepped = true;
      fresh = nc;
      if (blocking >= 0 && t == t_max) {
        st.lambda(blocking) = 0.0;
        st.sign[static_cast<std::size_t>(blocking)] = 0;
      }
      if (stall >= 5) break;
      if (st.lambda.cwiseAbs().maxCoeff() > 1e12) {
        Eigen::Index worst = 0;
        st.lambda.cwiseAbs().maxCoeff(&worst);
        throw InfeasibleConstraintsError("tilt: constraints are infeasible on the prior support (multiplier for '" +
                                             dp.labels[static_cast<std::size_t>(worst)] + "' diverged)",
                                         dp.labels[static_cast<std::size_t>(worst)]);
      }
    }
    idle_passes = stepped ? 0 : idle_passes + 1;
    if (idle_passes > 4) break;
    // Add the most violated inactive constraint, if any.
    const DualEval ev = evaluate(dp, st.lambda, theta);
    const Vector moments = dp.phi * ev.q;
    double worst = opt.gradient_tolerance;
    std::size_t add = nc;
    for (std::size_t k = 0; k < nc; ++k) {
      if (is_active(dp, st, k)) continue;
      const auto kk = static_cast<Eigen::Index>(k);
      const double v = std::abs(moments(kk)) - dp.sigma(kk);
      if (v > worst) {
        worst = v;
        add = k;
      }
    }
    if (add == nc) return;
    st.sign[add] = moments(static_cast<Eigen::Index>(add)) > 0.0 ? 1 : -1;
    fresh = add;
  }
  throw NumericalError("tilt: active-set iteration did not settle");
}

/// Pair-wise range check: with only the martingale constraint, the set of
/// reachable E_Q[phi] is spanned by two-atom measures straddling the forward.
inline void check_single_constraint_ranges(const std::vector<double>& atoms, const std::vector<double>& prior,
                                           double fwd, const std::vector<PayoffConstraint>& cons) {
  std::vector<std::size_t> below, above;
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (prior[i] <= 0.0) continue;
    if (atoms[i] <= fwd) below.push_back(i);
    if (atoms[i] >= fwd) above.push_back(i);
  }
  require(!below.empty() && !above.empty(), "tilt: the forward lies outside the prior support");
  // Sub-sample large supports; the extremes of convex payoffs sit near the ends anyway.
  auto thin = [](std::vector<std::size_t>& v) {
    if (v.size() <= 256) return;
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < 256; ++j) out.push_back(v[j * (v.size() - 1) / 255]);
    v = std::move(out);
  };
  thin(below);
  thin(above);
  for (const auto& c : cons) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i : below)
      for (std::size_t j : above) {
        double v;
        if (atoms[j] == atoms[i]) {
          v = c.values[i];
        } else {
          const double w = (atoms[j] - fwd) / (atoms[j] - atoms[i]);
          v = w * c.values[i] + (1.0 - w) * c.values[j];
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    const double slack = c.tolerance + 1e-12 * std::max(1.0, std::abs(c.target));
    if (c.target + slack < lo || c.target - slack > hi)
      throw InfeasibleConstraintsError("tilt: market quote '" + c.label + "' target " + std::to_string(c.target) +
                                           " is outside the attainable range [" + std::to_string(lo) + ", " +
                                           std::to_string(hi) + "] on the prior support",
                                       c.label);
  }
}

}  // namespace detail

/// Tilts a discrete prior onto the constraint set (zero tolerance meaning
/// equality). With a direction, maximises (or minimises) E_Q[g] over the
/// constraint set intersected with the ball KL(Q|P) <= kl_radius; the
/// optimiser has the Gibbs form q ~ p exp(theta g - lambda . phi). Payoffs
/// are divided by `scale` internally so multipliers are dimensionless.
inline GibbsSolution gibbs_tilt(const std::vector<double>& prior, const std::vector<PayoffConstraint>& constraints,
                                double scale, const TiltOptions& opt = {}) {
  const std::size_t n = prior.size();
  require(n > 0, "tilt: empty prior");
  require(scale > 0.0, "tilt: scale must be positive");
  for (const auto& c : constraints) {
    require(c.values.size() == n, "tilt: constraint '" + c.label + "' has the wrong length");
    require(c.tolerance >= 0.0, "tilt: negative tolerance on '" + c.label + "'");
  }
  require(opt.kl_radius > 0.0, "tilt: kl_radius must be positive");
  if (opt.direction != Direction::None)
    require(opt.target_payoff.size() == n, "tilt: target payoff has the wrong length");

  detail::DualProblem dp;
  const auto nc = static_cast<Eigen::Index>(constraints.size());
  dp.phi.resize(nc, static_cast<Eigen::Index>(n));
  dp.sigma = Vector::Zero(nc);
  dp.log_p.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    dp.log_p(static_cast<Eigen::Index>(i)) =
        prior[i] > 0.0 ? std::log(prior[i]) : -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < constraints.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    for (std::size_t i = 0; i < n; ++i)
      dp.phi(kk, static_cast<Eigen::Index>(i)) = (constraints[k].values[i] - constraints[k].target) / scale;
    dp.sigma(kk) = constraints[k].tolerance / scale;
    dp.equality.push_back(constraints[k].tolerance == 0.0);
    dp.labels.push_back(constraints[k].label);
  }
  if (opt.direction != Direction::None) {
    dp.g.resize(static_cast<Eigen::Index>(n));
    const double sgn = opt.direction == Direction::Upper ? 1.0 : -1.0;
    for (std::size_t i = 0; i < n; ++i) dp.g(static_cast<Eigen::Index>(i)) = sgn * opt.target_payoff[i] / scale;
  }

  detail::DualState st{Vector::Zero(nc), std::vector<int>(static_cast<std::size_t>(nc), 0)};
  auto finish = [&](double theta, bool saturated, bool spanned) {
    const auto ev = detail::evaluate(dp, st.lambda, theta);
    GibbsSolution out;
    out.weights.assign(ev.q.data(), ev.q.data() + ev.q.size());
    out.lambdas.assign(st.lambda.data(), st.lambda.data() + st.lambda.size());
    out.theta = theta;
    out.kl = kl_divergence(out.weights, prior);
    out.dual_gradient_norm = detail::kkt_residual(dp, st, dp.phi * ev.q);
    out.saturated = saturated;
    out.payoff_spanned = spanned;
    return out;
  };

  detail::solve_dual(dp, st, 0.0, opt);
  auto base = finish(0.0, false, false);
  if (opt.direction == Direction::None) return base;
  if (base.kl > opt.kl_radius)
    throw InfeasibleConstraintsError("tilt: kl_radius " + std::to_string(opt.kl_radius) +
                                         " is below the minimal KL " + std::to_string(base.kl) +
                                         " needed to meet the market constraints",
                                     "kl_radius");

  // If g is spanned by the active constraints under q0, E_Q[g] is pinned.
  {
    std::vector<Eigen::Index> act;
    for (std::size_t k = 0; k < st.sign.size(); ++k)
      if (detail::is_active(dp, st, k)) act.push_back(static_cast<Eigen::Index>(k));
    const Eigen::Map<const Vector> q(base.weights.data(), static_cast<Eigen::Index>(n));
    Matrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(act.size() + 1));
    for (std::size_t j = 0; j < act.size(); ++j) a.col(static_cast<Eigen::Index>(j)) = dp.phi.row(act[j]).transpose();
    a.col(static_cast<Eigen::Index>(act.size())).setOnes();
    const Vector sq = q.cwiseSqrt();
    const Matrix aw = sq.asDiagonal() * a;
    const Vector gw = sq.cwiseProduct(dp.g);
    const Vector coef = aw.completeOrthogonalDecomposition().solve(gw);
    const double resid = (gw - aw * coef).squaredNorm();
    const double mean_g = q.dot(dp.g);
    const double var_g = q.dot((dp.g.array() - mean_g).square().matrix());
    if (resid <= 1e-14 * std::max(var_g, 1e-300) || var_g <= 1e-28) return finish(0.0, false, true);
  }

  // Bracket theta so that KL(theta) crosses the radius.
  auto kl_at = [&](double theta) {
    detail::solve_dual(dp, st, theta, opt);
    return finish(theta, false, false).kl;
  };
  double lo = 0.0, hi = std::min(1.0, opt.theta_max), kl_lo = base.kl, kl_hi = base.kl;
  detail::DualState st_lo = st;
  while (true) {
    const bool capped = hi >= opt.theta_max;
    try {
      kl_hi = kl_at(hi);
    } catch (const NumericalError&) {
      // The dual degenerates before the ball is reached: E_Q[g] is pinned up
      // to the last solvable temperature, which is then reported as saturated.
      if (!opt.allow_saturation || lo == 0.0) throw;
      st = st_lo;
      return finish(lo, true, false);
    }
    if (kl_hi >= opt.kl_radius) break;
    if (capped) {
      if (!opt.allow_saturation)
        throw UnboundedDualError("tilt: the KL ball is not reached at the temperature cap; the bound is the "
                                 "classical (unregularised) limit");
      return finish(hi, true, false);
    }
    lo = hi;
    kl_lo = kl_hi;
    st_lo = st;
    hi = std::min(4.0 * hi, opt.theta_max);
  }
  st = st_lo;
  std::uintmax_t max_it = 200;
  auto fn = [&](double theta) { return kl_at(theta) - opt.kl_radius; };
  const auto root = boost::math::tools::toms748_solve(
      fn, lo, hi, kl_lo - opt.kl_radius, kl_hi - opt.kl_radius,
      [&](double a, double b) { return std::abs(b - a) <= 1e-13 * std::max(1.0, std::abs(b)); }, max_it);
  const double theta = 0.5 * (root.first + root.second);
  detail::solve_dual(dp, st, theta, opt);
  return finish(theta, false, false);
}

/// KL tilting of a terminal law under the martingale constraint and the
/// market constraints (see gibbs_tilt for the directional mode).
inline TiltedMeasure tilt(const TerminalDistribution& prior, const std::vector<PayoffConstraint>& constraints,
                          const TiltOptions& opt = {}) {
  prior.validate();
  const double fwd = prior.forward();
  require(fwd > 0.0, "tilt: forward must be positive");
  for (const auto& c : constraints) {
    require(c.values.size() == prior.atoms.size(), "tilt: constraint '" + c.label + "' has the wrong length");
    require(c.tolerance >= 0.0, "tilt: negative tolerance on '" + c.label + "'");
  }
  detail::check_single_constraint_ranges(prior.atoms, prior.weights, fwd, constraints);
  std::vector<PayoffConstraint> all;
  all.reserve(constraints.size() + 1);
  all.push_back({"martingale", prior.atoms, fwd, 0.0});
  all.insert(all.end(), constraints.begin(), constraints.end());
  const auto sol = gibbs_tilt(prior.weights, all, fwd, opt);
  TiltedMeasure out;
  out.atoms = prior.atoms;
  out.prior = prior.weights;
  out.weights = sol.weights;
  out.lambda_martingale = sol.lambdas[0];
  out.lambdas.assign(sol.lambdas.begin() + 1, sol.lambdas.end());
  out.theta = sol.theta;
  out.kl = sol.kl;
  out.dual_gradient_norm = sol.dual_gradient_norm;
  out.saturated = sol.saturated;
  out.payoff_spanned = sol.payoff_spanned;
  return out;
}

// ---------------------------------------------------------------------------
// Rate function and certificate
// ---------------------------------------------------------------------------

struct RateFunction {
  double hurst = 0.1;
  double c_h = 1.0;
  // Optional tabulated cumulant generating function Lambda on a lambda grid.
  std::vector<double> lambda_grid;
  std::vector<double> lambda_values;

  bool tabulated() const { return !lambda_grid.empty(); }

  double operator()(double k) const {
    require(k >= 0.0, "rate_function: k must be non-negative");
    if (!tabulated()) return c_h * std::pow(k, 1.0 - hurst);
    return legendre(k);
  }

  /// sup_l {l k - Lambda(l)} over the table; the maximiser is refined by the
  /// parabola through its neighbours (exact for quadratic Lambda).
  double legendre(double k) const {
    require(lambda_grid.size() == lambda_values.size() && lambda_grid.size() >= 3,
            "rate_function: table needs at least three points");
    std::size_t best = 0;
    double val = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < lambda_grid.size(); ++j) {
      const double v = lambda_grid[j] * k - lambda_values[j];
      if (v > val) {
        val = v;
        best = j;
      }
    }
    if (best == 0 || best + 1 == lambda_grid.size()) return val;
    const double x0 = lambda_grid[best - 1], x1 = lambda_grid[best], x2 = lambda_grid[best + 1];
    const double y0 = lambda_values[best - 1], y1 = lambda_values[best], y2 = lambda_values[best + 1];
    // Lambda ~ a l^2 + b l + c through the three points.
    const double d01 = (y1 - y0) / (x1 - x0), d12 = (y2 - y1) / (x2 - x1);
    const double a = (d12 - d01) / (x2 - x0);
    if (!(a > 0.0)) return val;
    const double b = d01 - a * (x0 + x1);
    const double c = y0 - a * x0 * x0 - b * x0;
    const double lstar = std::clamp((k - b) / (2.0 * a), x0, x2);
    return std::max(val, lstar * k - (a * lstar * lstar + b * lstar + c));
  }
};

inline double rate_function(double hurst, double c_h, double k) { return RateFunction{hurst, c_h, {}, {}}(k); }

struct TailFit {
  double c_h = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
};

/// Regresses -T^{2H} log Q(S_T > S0 e^k) on k^{1-H} over [k_lo, k_hi].
/// `k_scale` rescales log-moneyness (e.g. by the horizon's total volatility)
/// before the fit; the returned c_H is in the scaled units.
inline TailFit fit_tail_constant(const std::vector<double>& atoms, const std::vector<double>& weights, double spot,
                                 double maturity, double hurst, double k_lo = 0.3, double k_hi = 0.8,
                                 std::size_t n_points = 11) {
  require(k_hi > k_lo && k_lo >= 0.0, "fit_tail_constant: bad k range");
  std::vector<std::size_t> order(atoms.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return atoms[a] < atoms[b]; });
  std::vector<double> x, y;
  const double scale = std::pow(maturity, 2.0 * hurst);
  for (std::size_t j = 0; j < n_points; ++j) {
    const double k = k_lo + (k_hi - k_lo) * static_cast<double>(j) / static_cast<double>(n_points - 1);
    const double level = spot * std::exp(k);
    double tail = 0.0;
    for (auto it = order.rbegin(); it != order.rend() && atoms[*it] > level; ++it) tail += weights[*it];
    if (tail <= 0.0) continue;
    x.push_back(std::pow(k, 1.0 - hurst));
    y.push_back(-scale * std::log(tail));
  }
  require(x.size() >= 3, "fit_tail_constant: tail too thin to fit (fewer than three populated levels)");
  const auto lf = linear_fit(x, y);
  return {lf.slope, lf.intercept, lf.r_squared, x.size()};
}

struct CertificateInputs {
  double misspecification = 0.0;  // C = KL(P_rough | Q_true), nats
  double lambda_reg = 1.0;
  double spot = 0.0;
  double k = 0.0;                 // log-moneyness
  double maturity = 0.0;
  double hurst = 0.1;
  RateFunction rate{};
  double remainder = 0.0;         // epsilon(T, k)
  double k0 = 0.25;               // deep-OTM threshold
};

/// sqrt(2C / lambda) S0 e^k exp(-I(k) / (2 T^{2H}) + eps / 2).
inline double extrapolation_certificate(const CertificateInputs& in) {
  require(in.lambda_reg > 0.0, "extrapolation_certificate: lambda_reg must be positive");
  require(in.misspecification >= 0.0, "extrapolation_certificate: C must be non-negative");
  require(in.maturity > 0.0 && in.spot > 0.0, "extrapolation_certificate: spot and maturity must be positive");
  require(in.k > in.k0, "extrapolation_certificate: k must exceed the deep-OTM threshold k0 = " + std::to_string(in.k0));
  const double i_k = in.rate(in.k);
  return std::sqrt(2.0 * in.misspecification / in.lambda_reg) * in.spot * std::exp(in.k) *
         std::exp(-i_k / (2.0 * std::pow(in.maturity, 2.0 * in.hurst)) + 0.5 * in.remainder);
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

struct BoundsConfig {
  double kl_radius = 0.05;
  bool classical = false;          // uniform reference on a widened support, unregularised limit
  std::size_t classical_tail_atoms = 50;
  double classical_width = 100.0;  // support reaches width * forward
  TiltOptions tilt{};
  // Certificate inputs; the certificate is reported when rate is set and k > k0.
  std::optional<RateFunction> rate;
  double misspecification = 0.0;
  double lambda_reg = 1.0;
  double remainder = 0.0;
  double k0 = 0.25;
};

struct BoundResult {
  double strike = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double mid = 0.0;
  double certificate = std::numeric_limits<double>::quiet_NaN();
  double kl_lower = 0.0;
  double kl_upper = 0.0;
  double max_constraint_residual = 0.0;
  double dual_gradient_norm = 0.0;
  int d_eff = -1;
  bool classical_infinite = false;
};

/// Market constraints from a call slice: E_Q[(S_T - K)^+] = C e^{rT} +- sigma e^{rT}.
inline std::vector<PayoffConstraint> slice_constraints(const std::vector<double>& atoms, const MarketSlice& chain) {
  std::vector<PayoffConstraint> out;
  const double growth = std::exp(chain.rate * chain.maturity);
  for (std::size_t k = 0; k < chain.size(); ++k)
    out.push_back({"call K=" + std::to_string(chain.strikes[k]), call_payoff(atoms, chain.strikes[k]),
                   chain.prices[k] * growth, chain.noise[k] * growth});
  return out;
}

/// Max-entropy reference for the classical comparison: uniform weights on
/// the prior's support extended by geometric tail atoms out to
/// width * forward and down to zero.
inline TerminalDistribution classical_reference(const TerminalDistribution& prior, std::size_t tail_atoms,
                                                double width) {
  require(tail_atoms >= 2 && width > 1.0, "classical_reference: need two or more tail atoms and width > 1");
  TerminalDistribution d{prior.spot, prior.maturity, prior.rate, prior.atoms, {}};
  std::sort(d.atoms.begin(), d.atoms.end());
  const double top = width * d.forward();
  const double hi = d.atoms.back();
  if (top > hi)
    for (std::size_t i = 1; i <= tail_atoms; ++i)
      d.atoms.push_back(hi * std::pow(top / hi, static_cast<double>(i) / static_cast<double>(tail_atoms)));
  d.atoms.insert(d.atoms.begin(), 0.0);
  d.weights.assign(d.atoms.size(), 1.0 / static_cast<double>(d.atoms.size()));
  return d;
}

/// Lower and upper bounds of E_Q[g] (discounted) over the KL ball around the
/// prior, subject to the martingale constraint and the slice's quotes.
inline BoundResult bounds(const TerminalDistribution& prior_in, const MarketSlice& chain,
                          const std::function<double(double)>& payoff, double strike, const BoundsConfig& cfg = {}) {
  chain.validate();
  const TerminalDistribution prior =
      cfg.classical ? classical_reference(prior_in, cfg.classical_tail_atoms, cfg.classical_width) : prior_in;
  prior.validate();
  require(std::abs(prior.maturity - chain.maturity) <= 1e-9 * std::max(1.0, chain.maturity),
          "bounds: prior and chain maturities differ");
  std::vector<double> g(prior.atoms.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = payoff(prior.atoms[i]);
  const auto cons = slice_constraints(prior.atoms, chain);
  TiltOptions opt = cfg.tilt;
  opt.target_payoff = g;
  // Without a ball the tilt runs to the temperature cap, which approximates
  // the linear-programming (classical) bound on the support.
  opt.kl_radius = cfg.classical ? std::numeric_limits<double>::infinity() : cfg.kl_radius;
  opt.allow_saturation = true;
  const double df = std::exp(-chain.rate * chain.maturity);

  BoundResult res;
  res.strike = strike;
  const auto mid = tilt(prior, cons, TiltOptions{Direction::None, {}, opt.kl_radius, opt.gradient_tolerance,
                                                 opt.max_newton, opt.theta_max, false});
  res.mid = df * mid.expect(g);
  opt.direction = Direction::Upper;
  const auto up = tilt(prior, cons, opt);
  opt.direction = Direction::Lower;
  const auto dn = tilt(prior, cons, opt);
  res.upper = df * up.expect(g);
  res.lower = df * dn.expect(g);
  if (res.lower > res.upper) std::swap(res.lower, res.upper);
  res.kl_upper = up.kl;
  res.kl_lower = dn.kl;
  res.classical_infinite = cfg.classical && (up.saturated || dn.saturated);
  res.dual_gradient_norm = std::max({mid.dual_gradient_norm, up.dual_gradient_norm, dn.dual_gradient_norm});
  for (const auto* m : {&up, &dn})
    for (std::size_t k = 0; k < cons.size(); ++k) {
      const double miss = std::abs(m->expect(cons[k].values) - cons[k].target) - cons[k].tolerance;
      res.max_constraint_residual = std::max(res.max_constraint_residual, std::max(miss, 0.0));
    }
  const double k = std::log(strike / chain.spot);
  if (cfg.rate && k > cfg.k0 && !cfg.classical) {
    CertificateInputs ci{cfg.misspecification, cfg.lambda_reg, chain.spot, k, chain.maturity, cfg.rate->hurst,
                         *cfg.rate, cfg.remainder, cfg.k0};
    res.certificate = extrapolation_certificate(ci);
  }
  return res;
}

inline BoundResult call_bounds(const TerminalDistribution& prior, const MarketSlice& chain, double strike,
                               const BoundsConfig& cfg = {}) {
  return bounds(prior, chain, [strike](double s) { return std::max(s - strike, 0.0); }, strike, cfg);
}

}  // namespace rmot
