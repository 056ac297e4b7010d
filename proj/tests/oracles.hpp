#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run. Nothing here calls the library's solvers.

#include "rmot/rmot_single.hpp"
#include "rmot/rough_heston.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include <optional>
#include <random>

namespace rmot::oracle {

// Classical Heston in the "little trap" form, written independently of the
// library's Riccati solver and pricer.
struct Heston {
  double kappa, theta, sigma, rho, v0;

  // Returns (C, D) with phi(u) = exp(C + D v0) for X = log(S_T / F_T).
  std::pair<Complex, Complex> cd(Complex u, double t) const {
    const Complex i(0.0, 1.0);
    const Complex beta = kappa - rho * sigma * i * u;
    const Complex d = std::sqrt(beta * beta + sigma * sigma * (i * u + u * u));
    const Complex g = (beta - d) / (beta + d);
    const Complex e = std::exp(-d * t);
    const Complex c = kappa * theta / (sigma * sigma) * ((beta - d) * t - 2.0 * std::log((1.0 - g * e) / (1.0 - g)));
    const Complex dd = (beta - d) / (sigma * sigma) * (1.0 - e) / (1.0 - g * e);
    return {c, dd};
  }

  Complex phi(Complex u, double t) const {
    const auto [c, d] = cd(u, t);
    return std::exp(c + d * v0);
  }

  double call(double s0, double k, double t) const {
    const double x = std::log(k / s0);
    boost::math::quadrature::exp_sinh<double> integrator;
    auto p = [&](Complex shift) {
      return integrator.integrate([&](double u) {
        const Complex i(0.0, 1.0);
        return (std::exp(-i * u * x) * phi(u + shift, t) / (i * u)).real();
      }, 1e-13);
    };
    const double p1 = 0.5 + p(Complex(0.0, -1.0)) / std::numbers::pi;
    const double p2 = 0.5 + p(Complex(0.0, 0.0)) / std::numbers::pi;
    return s0 * p1 - k * p2;
  }
};

// Minimises sum q log(q/p) - theta g.q subject to A q = b by infeasible-start
// Newton on the primal KKT system.
inline std::optional<std::vector<double>> primal_newton(const std::vector<double>& p, const Matrix& a, const Vector& b,
                                                 const std::vector<double>& g, double theta) {
  const auto n = static_cast<Eigen::Index>(p.size());
  const auto m = a.rows();
  Vector q = Eigen::Map<const Vector>(p.data(), n);
  auto grad = [&](const Vector& x) {
    Vector r(n);
    for (Eigen::Index i = 0; i < n; ++i)
      r(i) = std::log(x(i) / p[static_cast<std::size_t>(i)]) + 1.0 - (g.empty() ? 0.0 : theta * g[static_cast<std::size_t>(i)]);
    return r;
  };
  Vector nu = Vector::Zero(m);
  auto residual = [&](const Vector& x, const Vector& w) {
    Vector r(n + m);
    r.head(n) = grad(x) + a.transpose() * w;
    r.tail(m) = a * x - b;
    return r;
  };
  for (int it = 0; it < 200; ++it) {
    const Vector r = residual(q, nu);
    if (r.lpNorm<Eigen::Infinity>() < 1e-13) break;
    Matrix kkt = Matrix::Zero(n + m, n + m);
    for (Eigen::Index i = 0; i < n; ++i) kkt(i, i) = 1.0 / q(i);
    kkt.topRightCorner(n, m) = a.transpose();
    kkt.bottomLeftCorner(m, n) = a;
    const Vector step = kkt.fullPivLu().solve(-r);
    double t = 1.0;
    while (t > 1e-8 && !((q + t * step.head(n)).minCoeff() > 0.0)) t *= 0.5;
    if (t <= 1e-8) break;
    const double r0 = r.norm();
    while (t > 1e-8 && residual(q + t * step.head(n), nu + t * step.tail(m)).norm() > (1.0 - 0.01 * t) * r0) t *= 0.5;
    q += t * step.head(n);
    nu += t * step.tail(m);
    if (t <= 1e-8) break;
  }
  if ((a * q - b).lpNorm<Eigen::Infinity>() > 1e-10) return std::nullopt;
  return std::vector<double>(q.data(), q.data() + n);
}

// Enumerates the active sides of every soft constraint; the best feasible
// equality-restricted solution is the optimum.
inline std::vector<double> primal_oracle(const TerminalDistribution& prior, const std::vector<PayoffConstraint>& cons,
                                  const std::vector<double>& g = {}, double theta = 0.0) {
  const std::size_t n = prior.atoms.size(), k = cons.size();
  std::size_t patterns = 1;
  for (std::size_t j = 0; j < k; ++j) patterns *= 3;
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_q;
  for (std::size_t code = 0; code < patterns; ++code) {
    std::vector<int> side(k);
    std::size_t c = code, active = 0;
    bool redundant = false;
    for (std::size_t j = 0; j < k; ++j) {
      side[j] = static_cast<int>(c % 3) - 1;
      c /= 3;
      if (side[j] != 0 || cons[j].tolerance == 0.0) ++active;
      redundant = redundant || (cons[j].tolerance == 0.0 && side[j] != 0);
    }
    if (redundant) continue;
    Matrix a(2 + static_cast<Eigen::Index>(active), static_cast<Eigen::Index>(n));
    Vector b(a.rows());
    for (std::size_t i = 0; i < n; ++i) {
      a(0, static_cast<Eigen::Index>(i)) = 1.0;
      a(1, static_cast<Eigen::Index>(i)) = prior.atoms[i];
    }
    b(0) = 1.0;
    b(1) = prior.forward();
    Eigen::Index row = 2;
    for (std::size_t j = 0; j < k; ++j) {
      if (side[j] == 0 && cons[j].tolerance > 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) a(row, static_cast<Eigen::Index>(i)) = cons[j].values[i];
      b(row++) = cons[j].target + side[j] * cons[j].tolerance;
    }
    const auto q = primal_newton(prior.weights, a, b, g, theta);
    if (!q) continue;
    bool feasible = true;
    for (const auto& cj : cons) {
      double e = 0.0;
      for (std::size_t i = 0; i < n; ++i) e += (*q)[i] * cj.values[i];
      feasible = feasible && std::abs(e - cj.target) <= cj.tolerance + 1e-9;
    }
    if (!feasible) continue;
    double f = kl_divergence(*q, prior.weights);
    if (!g.empty())
      for (std::size_t i = 0; i < n; ++i) f -= theta * (*q)[i] * g[i];
    if (f < best) {
      best = f;
      best_q = *q;
    }
  }
  return best_q;
}

struct RandomInstance {
  TerminalDistribution prior;
  std::vector<PayoffConstraint> cons;
};

inline RandomInstance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> atoms_n(4, 12), cons_n(0, 2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RandomInstance r;
  const int n = atoms_n(rng);
  std::vector<double> atoms, w, truth;
  for (int i = 0; i < n; ++i) atoms.push_back(60.0 + 80.0 * (i + 0.5 * u(rng)) / n);
  double sw = 0.0, st = 0.0;
  for (int i = 0; i < n; ++i) {
    w.push_back(0.2 + u(rng));
    truth.push_back(0.2 + u(rng));
    sw += w.back();
    st += truth.back();
  }
  for (auto& x : w) x /= sw;
  for (auto& x : truth) x /= st;
  double fwd = 0.0;
  for (int i = 0; i < n; ++i) fwd += truth[static_cast<std::size_t>(i)] * atoms[static_cast<std::size_t>(i)];
  r.prior = {fwd, 0.25, 0.0, atoms, w};
  const int k = cons_n(rng);
  for (int j = 0; j < k; ++j) {
    const double strike = fwd * (0.85 + 0.3 * u(rng));
    auto vals = call_payoff(atoms, strike);
    double target = 0.0;
    for (int i = 0; i < n; ++i) target += truth[static_cast<std::size_t>(i)] * vals[static_cast<std::size_t>(i)];
    const double tol = u(rng) < 0.3 ? 0.0 : 0.3 * u(rng);
    r.cons.push_back({"K" + std::to_string(j), vals, target, tol});
  }
  return r;
}

}  // namespace rmot::oracle
