#pragma once

// Rough Heston model: fractional Riccati characteristic function, Fourier
// call pricing and Monte Carlo of the terminal law.
//
// Variance dynamics (kernel K(t) = t^{H-1/2} / Gamma(H+1/2)):
//   V_t = V_0 + int K(t-s) kappa (V_inf - V_s) ds + int K(t-s) kappa nu sqrt(V_s) dB_s
// so kappa * nu is the effective vol-of-vol. With H = 1/2 this is classical
// Heston with mean reversion kappa, long-run variance V_inf and vol-of-vol
// kappa * nu.

#include "rmot/black_scholes.hpp"
#include "rmot/core.hpp"
#include "rmot/quadrature.hpp"

#include <array>
#include <numeric>
#include <span>
#include <string_view>

namespace rmot {

struct RoughHestonParams {
  double hurst = 0.1;
  double vol_of_vol = 0.3;
  double leverage = -0.7;
  double v0 = 0.04;
  double kappa = 1.0;
  double v_inf = 0.04;

  static constexpr std::size_t kSize = 6;
  static constexpr std::array<std::string_view, kSize> kNames = {"H", "nu", "rho", "v0", "kappa", "v_inf"};

  double operator[](std::size_t i) const {
    switch (i) {
      case 0: return hurst;
      case 1: return vol_of_vol;
      case 2: return leverage;
      case 3: return v0;
      case 4: return kappa;
      case 5: return v_inf;
    }
    throw DomainError("RoughHestonParams: index out of range");
  }

  double& operator[](std::size_t i) {
    switch (i) {
      case 0: return hurst;
      case 1: return vol_of_vol;
      case 2: return leverage;
      case 3: return v0;
      case 4: return kappa;
      case 5: return v_inf;
    }
    throw DomainError("RoughHestonParams: index out of range");
  }

  /// Rough regime 0 < H < 0.5; H = 0.5 only when the classical limit is requested.
  void validate(bool allow_heston_limit = false) const {
    const bool h_ok = hurst > 0.0 && (hurst < 0.5 || (allow_heston_limit && hurst == 0.5));
    require(h_ok, "RoughHestonParams: H must lie in (0, 0.5)");
    require(vol_of_vol > 0.0, "RoughHestonParams: nu must be positive");
    require(leverage > -1.0 && leverage < 1.0, "RoughHestonParams: rho must lie in (-1, 1)");
    require(v0 > 0.0, "RoughHestonParams: v0 must be positive");
    require(kappa >= 0.0, "RoughHestonParams: kappa must be non-negative");
    require(v_inf > 0.0, "RoughHestonParams: v_inf must be positive");
  }

  double alpha() const { return hurst + 0.5; }
  double effective_vol_of_vol() const { return kappa * vol_of_vol; }
};

/// One maturity of quoted calls with per-strike observation noise.
struct MarketSlice {
  double spot = 0.0;
  double maturity = 0.0;
  double rate = 0.0;
  std::vector<double> strikes;
  std::vector<double> prices;
  std::vector<double> noise;

  std::size_t size() const { return strikes.size(); }

  void validate() const {
    require(spot > 0.0, "MarketSlice: spot must be positive");
    require(maturity > 0.0, "MarketSlice: maturity must be positive");
    require(!strikes.empty(), "MarketSlice: empty slice");
    require(prices.size() == strikes.size() && noise.size() == strikes.size(),
            "MarketSlice: strikes, prices and noise must have equal length");
    const double df = std::exp(-rate * maturity);
    for (std::size_t i = 0; i < strikes.size(); ++i) {
      if (i > 0) require(strikes[i] > strikes[i - 1], "MarketSlice: strikes must be strictly increasing");
      require(prices[i] >= 0.0, "MarketSlice: prices must be non-negative");
      const double lo = std::max(spot - strikes[i] * df, 0.0);
      require(prices[i] >= lo - 1e-9 * spot && prices[i] <= spot + 1e-9 * spot,
              "MarketSlice: price outside the no-arbitrage band at strike " + std::to_string(strikes[i]));
      require(noise[i] > 0.0, "MarketSlice: observation noise must be positive");
    }
  }
};

// ---------------------------------------------------------------------------
// Fractional Adams weights
// ---------------------------------------------------------------------------

/// Product-integration weights of the fractional Adams predictor-corrector
/// on a uniform grid of n steps. The predictor weights double as the
/// Volterra Euler weights of the Monte Carlo scheme.
struct VolterraWeights {
  double alpha;
  double dt;
  std::size_t n;
  std::vector<double> predictor;   // b(l), l = 0..n-1: int over a cell at lag l
  std::vector<double> corrector;   // A(m), m = 1..n (index m)
  std::vector<double> first_node;  // a_0 at step k, k = 0..n-1
  double diag;                     // weight on the predicted value

  VolterraWeights(double alpha_, double maturity, std::size_t steps)
      : alpha(alpha_), dt(maturity / static_cast<double>(steps)), n(steps) {
    const double g1 = std::pow(dt, alpha) / std::tgamma(alpha + 1.0);
    const double g2 = std::pow(dt, alpha) / std::tgamma(alpha + 2.0);
    predictor.resize(n);
    for (std::size_t l = 0; l < n; ++l) {
      const double ld = static_cast<double>(l);
      predictor[l] = g1 * (std::pow(ld + 1.0, alpha) - std::pow(ld, alpha));
    }
    corrector.assign(n + 1, 0.0);
    for (std::size_t m = 1; m <= n; ++m) {
      const double md = static_cast<double>(m);
      corrector[m] = g2 * (std::pow(md + 1.0, alpha + 1.0) - 2.0 * std::pow(md, alpha + 1.0) +
                           std::pow(md - 1.0, alpha + 1.0));
    }
    first_node.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double kd = static_cast<double>(k);
      first_node[k] = g2 * (std::pow(kd, alpha + 1.0) - (kd - alpha) * std::pow(kd + 1.0, alpha));
    }
    diag = g2;
  }
};

// ---------------------------------------------------------------------------
// Fractional Riccati equation
//   D^alpha h = F(u, h),  F = (-u^2 - iu)/2 + (i u rho sigma - kappa) h + sigma^2 h^2 / 2
// with sigma = kappa * nu. The log-price characteristic function is
//   phi_T(u) = exp(kappa V_inf int_0^T h + V_0 int_0^T F(u, h)).
// ---------------------------------------------------------------------------

struct RiccatiConfig {
  std::size_t n_steps = 500;
  double overflow_guard = 1e10;
};

struct RiccatiSolution {
  std::vector<double> times;
  std::vector<Complex> h;
  Complex integral_h;
  Complex integral_f;
  bool diverged = false;
};

class RiccatiDivergence : public NumericalError {
public:
  explicit RiccatiDivergence(Complex u_)
      : NumericalError("fractional Riccati solution diverged at u = (" + std::to_string(u_.real()) +
                       ", " + std::to_string(u_.imag()) + "); u is outside the domain of finiteness"),
        u(u_) {}
  Complex u;
};

namespace detail {

/// Solves the Riccati equation for a batch of frequencies at once; the
/// time-stepping weights are shared across the batch. Returns the exponent
/// kappa V_inf int h + V_0 int F per frequency and a divergence flag.
struct RiccatiBatchResult {
  std::vector<Complex> exponent;
  std::vector<Complex> integral_h;
  std::vector<Complex> integral_f;
  std::vector<char> diverged;
  std::vector<Complex> path;  // (n+1) x nu row-major, only filled on request
};

inline RiccatiBatchResult riccati_batch_raw(const RoughHestonParams& p, std::span<const Complex> us,
                                            const VolterraWeights& w, double overflow_guard,
                                            bool keep_path);

/// Solves the batch and flags every u whose moment companion u' = i Im(u)
/// explodes before T: |phi(u)| <= phi(i Im u), so finiteness on the
/// imaginary axis decides the domain.
inline RiccatiBatchResult riccati_batch(const RoughHestonParams& p, std::span<const Complex> us,
                                        const VolterraWeights& w, double overflow_guard,
                                        bool keep_path = false) {
  std::vector<double> imag_parts;
  for (const auto& u : us)
    if (u.imag() != 0.0 && u.real() != 0.0 &&
        std::find(imag_parts.begin(), imag_parts.end(), u.imag()) == imag_parts.end())
      imag_parts.push_back(u.imag());
  if (imag_parts.empty()) return riccati_batch_raw(p, us, w, overflow_guard, keep_path);
  std::vector<Complex> all(us.begin(), us.end());
  for (double s : imag_parts) all.emplace_back(0.0, s);
  auto r = riccati_batch_raw(p, all, w, overflow_guard, keep_path);
  const std::size_t nu = us.size();
  for (std::size_t q = 0; q < nu; ++q) {
    if (us[q].imag() == 0.0 || us[q].real() == 0.0) continue;
    const auto it = std::find(imag_parts.begin(), imag_parts.end(), us[q].imag());
    if (r.diverged[nu + static_cast<std::size_t>(it - imag_parts.begin())]) r.diverged[q] = 1;
  }
  r.exponent.resize(nu);
  r.integral_h.resize(nu);
  r.integral_f.resize(nu);
  r.diverged.resize(nu);
  if (keep_path) {
    std::vector<Complex> path((w.n + 1) * nu);
    for (std::size_t k = 0; k <= w.n; ++k)
      for (std::size_t q = 0; q < nu; ++q) path[k * nu + q] = r.path[k * all.size() + q];
    r.path = std::move(path);
  }
  return r;
}

inline RiccatiBatchResult riccati_batch_raw(const RoughHestonParams& p, std::span<const Complex> us,
                                            const VolterraWeights& w, double overflow_guard,
                                            bool keep_path) {
  const std::size_t nu = us.size();
  const std::size_t n = w.n;
  const double sigma = p.effective_vol_of_vol();
  const double f2 = 0.5 * sigma * sigma;
  std::vector<double> f0r(nu), f0i(nu), f1r(nu), f1i(nu);
  for (std::size_t q = 0; q < nu; ++q) {
    const Complex u = us[q];
    const Complex iu(-u.imag(), u.real());
    const Complex f0 = 0.5 * (-u * u - iu);
    const Complex f1 = iu * (p.leverage * sigma) - p.kappa;
    f0r[q] = f0.real();
    f0i[q] = f0.imag();
    f1r[q] = f1.real();
    f1i[q] = f1.imag();
  }
  // History of F(h_j), struct-of-arrays for vectorisation.
  std::vector<double> fr((n + 1) * nu), fi((n + 1) * nu);
  std::vector<double> hr_prev(nu, 0.0), hi_prev(nu, 0.0);
  std::vector<double> cr(nu), ci(nu);
  std::vector<double> int_hr(nu, 0.0), int_hi(nu, 0.0), int_fr(nu, 0.0), int_fi(nu, 0.0);
  std::vector<char> diverged(nu, 0);
  RiccatiBatchResult out;
  if (keep_path) out.path.assign((n + 1) * nu, Complex(0.0, 0.0));

  auto eval_f = [&](std::size_t q, double hr, double hi, double& outr, double& outi) {
    const double h2r = hr * hr - hi * hi, h2i = 2.0 * hr * hi;
    outr = f0r[q] + f1r[q] * hr - f1i[q] * hi + f2 * h2r;
    outi = f0i[q] + f1r[q] * hi + f1i[q] * hr + f2 * h2i;
  };

  for (std::size_t q = 0; q < nu; ++q) {
    fr[q] = f0r[q];
    fi[q] = f0i[q];
  }
  const double dt = w.dt;
  const double cq = w.diag * f2;
  for (std::size_t k = 0; k < n; ++k) {
    {
      const double a = w.first_node[k];
      for (std::size_t q = 0; q < nu; ++q) {
        cr[q] = a * fr[q];
        ci[q] = a * fi[q];
      }
    }
    for (std::size_t j = 1; j <= k; ++j) {
      const double a = w.corrector[k - j + 1];
      const double* frj = fr.data() + j * nu;
      const double* fij = fi.data() + j * nu;
      for (std::size_t q = 0; q < nu; ++q) {
        cr[q] += a * frj[q];
        ci[q] += a * fij[q];
      }
    }
    double* frn = fr.data() + (k + 1) * nu;
    double* fin = fi.data() + (k + 1) * nu;
    for (std::size_t q = 0; q < nu; ++q) {
      if (diverged[q]) {
        frn[q] = fin[q] = 0.0;
        continue;
      }
      // The newest node enters implicitly: h = C + c F(h) is a quadratic in h.
      // Taking the root that tends to C as c -> 0 keeps the step stable for
      // large |u| where an explicit predictor blows up.
      const Complex lin = 1.0 - w.diag * Complex(f1r[q], f1i[q]);
      const Complex cst = Complex(cr[q], ci[q]) + w.diag * Complex(f0r[q], f0i[q]);
      Complex h;
      if (cq == 0.0) {
        h = cst / lin;
      } else {
        const Complex disc2 = lin * lin - 4.0 * cq * cst;
        // On the imaginary axis the equation is real; losing the real root
        // means the solution has passed its blow-up time.
        if (us[q].real() == 0.0 && disc2.real() < 0.0) {
          diverged[q] = 1;
          frn[q] = fin[q] = 0.0;
          continue;
        }
        const Complex disc = std::sqrt(disc2);
        const Complex den = std::abs(lin + disc) >= std::abs(lin - disc) ? lin + disc : lin - disc;
        h = 2.0 * cst / den;
      }
      const double hr = h.real(), hi = h.imag();
      if (!std::isfinite(hr) || !std::isfinite(hi) || std::hypot(hr, hi) > overflow_guard) {
        diverged[q] = 1;
        frn[q] = fin[q] = 0.0;
        continue;
      }
      eval_f(q, hr, hi, frn[q], fin[q]);
      int_hr[q] += 0.5 * dt * (hr_prev[q] + hr);
      int_hi[q] += 0.5 * dt * (hi_prev[q] + hi);
      const double* frp = fr.data() + k * nu;
      const double* fip = fi.data() + k * nu;
      int_fr[q] += 0.5 * dt * (frp[q] + frn[q]);
      int_fi[q] += 0.5 * dt * (fip[q] + fin[q]);
      hr_prev[q] = hr;
      hi_prev[q] = hi;
      if (keep_path) out.path[(k + 1) * nu + q] = Complex(hr, hi);
    }
  }
  out.exponent.resize(nu);
  out.integral_h.resize(nu);
  out.integral_f.resize(nu);
  for (std::size_t q = 0; q < nu; ++q) {
    out.integral_h[q] = Complex(int_hr[q], int_hi[q]);
    out.integral_f[q] = Complex(int_fr[q], int_fi[q]);
    out.exponent[q] = p.kappa * p.v_inf * out.integral_h[q] + p.v0 * out.integral_f[q];
  }
  out.diverged = std::move(diverged);
  return out;
}

inline void validate_for_transform(const RoughHestonParams& p, double maturity) {
  p.validate(true);
  require(maturity > 0.0, "maturity must be positive");
}

}  // namespace detail

inline RiccatiSolution riccati_solve(const RoughHestonParams& params, Complex u, double maturity,
                                     std::size_t n_steps, double overflow_guard = 1e10) {
  detail::validate_for_transform(params, maturity);
  require(n_steps >= 16, "riccati_solve: n_steps must be at least 16");
  const VolterraWeights w(params.alpha(), maturity, n_steps);
  const std::array<Complex, 1> us{u};
  const auto r = detail::riccati_batch(params, us, w, overflow_guard, true);
  RiccatiSolution sol;
  sol.times.resize(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) sol.times[k] = w.dt * static_cast<double>(k);
  sol.h = r.path;
  sol.integral_h = r.integral_h[0];
  sol.integral_f = r.integral_f[0];
  sol.diverged = r.diverged[0] != 0;
  return sol;
}

/// Characteristic functions phi_T(u) = E[exp(i u log(S_T / F_T))] for a batch of u.
inline std::vector<Complex> char_fn_batch(const RoughHestonParams& params, std::span<const Complex> us,
                                          double maturity, const RiccatiConfig& cfg = {}) {
  detail::validate_for_transform(params, maturity);
  const VolterraWeights w(params.alpha(), maturity, cfg.n_steps);
  const auto r = detail::riccati_batch(params, us, w, cfg.overflow_guard);
  std::vector<Complex> phi(us.size());
  for (std::size_t q = 0; q < us.size(); ++q) {
    if (r.diverged[q]) throw RiccatiDivergence(us[q]);
    phi[q] = std::exp(r.exponent[q]);
  }
  return phi;
}

inline Complex char_fn(const RoughHestonParams& params, Complex u, double maturity,
                       const RiccatiConfig& cfg = {}) {
  const std::array<Complex, 1> us{u};
  return char_fn_batch(params, us, maturity, cfg)[0];
}

// ---------------------------------------------------------------------------
// Fourier pricing (damped log-strike transform)
//   C(K) = D F e^{-a x} / pi * int_0^inf Re[e^{-iux} psi(u)] du,  x = log(K/F)
//   psi(u) = phi_T(u - (a+1)i) / (a^2 + a - u^2 + i(2a+1)u)
// ---------------------------------------------------------------------------

struct FourierConfig {
  double damping = 1.5;
  double abs_tol = 1e-10;  // on price / forward
  std::size_t max_subdivisions = 400;
  std::size_t n_steps = 500;
};

namespace detail {

inline auto damped_integrand(const RoughHestonParams& params, double maturity,
                             const std::vector<double>& log_moneyness, const FourierConfig& cfg) {
  return [&params, maturity, &log_moneyness, &cfg,
          w = VolterraWeights(params.alpha(), maturity, cfg.n_steps)](const std::vector<double>& nodes) {
    const double a = cfg.damping;
    std::vector<Complex> z(nodes.size());
    for (std::size_t q = 0; q < nodes.size(); ++q) z[q] = Complex(nodes[q], -(a + 1.0));
    const auto r = riccati_batch(params, z, w, 1e10);
    Matrix f(static_cast<Eigen::Index>(log_moneyness.size()), static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t q = 0; q < nodes.size(); ++q) {
      if (r.diverged[q]) throw RiccatiDivergence(z[q]);
      const double u = nodes[q];
      const Complex psi = std::exp(r.exponent[q]) / Complex(a * a + a - u * u, (2.0 * a + 1.0) * u);
      for (std::size_t s = 0; s < log_moneyness.size(); ++s) {
        const double x = log_moneyness[s];
        const Complex e(std::cos(u * x), -std::sin(u * x));
        f(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(q)) =
            std::exp(-a * x) / std::numbers::pi * (e * psi).real();
      }
    }
    return f;
  };
}

inline double first_segment(const RoughHestonParams& p, double maturity) {
  const double scale = std::sqrt(std::max(p.v0, p.v_inf) * maturity);
  return std::clamp(6.0 / scale, 5.0, 400.0);
}

}  // namespace detail

/// Call prices for a strike vector at one maturity. Every characteristic
/// function evaluation is shared by all strikes. When `mesh_in` is given the
/// integral is taken on that frozen mesh (smooth in the parameters, used for
/// finite differences); `mesh_out` receives the adaptive mesh.
inline std::vector<double> price_calls_fourier(const RoughHestonParams& params, double spot,
                                               std::span<const double> strikes, double maturity,
                                               double rate = 0.0, const FourierConfig& cfg = {},
                                               QuadratureMesh* mesh_out = nullptr,
                                               const QuadratureMesh* mesh_in = nullptr) {
  detail::validate_for_transform(params, maturity);
  require(spot > 0.0, "price_calls_fourier: spot must be positive");
  require(cfg.damping > 0.0, "price_calls_fourier: damping must be positive");
  const double df = std::exp(-rate * maturity);
  const double fwd = spot / df;
  std::vector<double> out(strikes.size(), 0.0);
  std::vector<double> x;
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < strikes.size(); ++i) {
    require(strikes[i] >= 0.0, "price_calls_fourier: strikes must be non-negative");
    if (strikes[i] == 0.0) {
      out[i] = spot;
    } else {
      x.push_back(std::log(strikes[i] / fwd));
      live.push_back(i);
    }
  }
  if (live.empty()) return out;
  auto integrand = detail::damped_integrand(params, maturity, x, cfg);
  Vector c;
  if (mesh_in) {
    c = integrate_on_mesh(integrand, *mesh_in);
  } else {
    GaussKronrodConfig gk{cfg.abs_tol, cfg.max_subdivisions};
    auto res = integrate_gk_half_line(integrand, detail::first_segment(params, maturity), gk);
    c = res.value;
    if (mesh_out) *mesh_out = std::move(res.mesh);
  }
  for (std::size_t s = 0; s < live.size(); ++s) {
    const double k = strikes[live[s]];
    const double raw = df * fwd * c(static_cast<Eigen::Index>(s));
    // Quadrature noise can push deep-OTM values a hair outside the band.
    out[live[s]] = std::clamp(raw, std::max(spot - k * df, 0.0), spot);
  }
  return out;
}

inline double price_call_fourier(const RoughHestonParams& params, double spot, double strike,
                                 double maturity, double rate = 0.0, const FourierConfig& cfg = {}) {
  const std::array<double, 1> k{strike};
  return price_calls_fourier(params, spot, k, maturity, rate, cfg)[0];
}

inline double price_put_fourier(const RoughHestonParams& params, double spot, double strike,
                                double maturity, double rate = 0.0, const FourierConfig& cfg = {}) {
  return price_call_fourier(params, spot, strike, maturity, rate, cfg) - spot +
         strike * std::exp(-rate * maturity);
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// Discrete terminal law used as the prior of the tilting problem.
struct TerminalDistribution {
  double spot = 0.0;
  double maturity = 0.0;
  double rate = 0.0;
  std::vector<double> atoms;
  std::vector<double> weights;

  double forward() const { return spot * std::exp(rate * maturity); }

  double mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) m += weights[i] * atoms[i];
    return m;
  }

  void validate() const {
    require(!atoms.empty() && atoms.size() == weights.size(), "TerminalDistribution: size mismatch");
    double total = 0.0;
    for (double w : weights) {
      require(w >= 0.0, "TerminalDistribution: negative weight");
      total += w;
    }
    require(std::abs(total - 1.0) <= 1e-12, "TerminalDistribution: weights must sum to one");
  }

  /// Expectation of a payoff under the weights.
  template <class Payoff>
  double expect(Payoff&& g) const {
    double m = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) m += weights[i] * g(atoms[i]);
    return m;
  }

  /// Rescales atoms so the mean equals the forward exactly.
  void enforce_martingale() {
    const double scale = forward() / mean();
    for (double& a : atoms) a *= scale;
  }

  /// Collapses to n equal-probability buckets (bucket means as atoms). The
  /// overall mean is preserved exactly up to rounding.
  TerminalDistribution compress_quantiles(std::size_t n) const {
    if (n >= atoms.size()) return *this;
    std::vector<std::size_t> order(atoms.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return atoms[l] < atoms[r]; });
    TerminalDistribution out{spot, maturity, rate, {}, {}};
    const double target = 1.0 / static_cast<double>(n);
    double mass = 0.0, moment = 0.0;
    for (std::size_t idx = 0; idx < order.size(); ++idx) {
      double w = weights[order[idx]];
      const double a = atoms[order[idx]];
      while (w > 0.0) {
        const double take = std::min(w, target - mass);
        mass += take;
        moment += take * a;
        w -= take;
        if (mass >= target * (1.0 - 1e-12) && out.atoms.size() + 1 < n) {
          out.atoms.push_back(moment / mass);
          out.weights.push_back(mass);
          mass = moment = 0.0;
        }
        if (take <= 0.0) break;
      }
    }
    if (mass > 0.0) {
      out.atoms.push_back(moment / mass);
      out.weights.push_back(mass);
    }
    double total = 0.0;
    for (double w : out.weights) total += w;
    for (double& w : out.weights) w /= total;
    return out;
  }
};

struct SimulationConfig {
  std::size_t n_paths = 30'000;
  std::size_t n_steps = 100;
  std::uint64_t seed = 0;
};

/// Joint simulation of several rough Heston assets. Price drivers W^i have
/// correlation `driver_corr`; each variance driver is B^i = rho_i W^i +
/// sqrt(1 - rho_i^2) Z^i with independent Z^i.
struct JointSimulation {
  Matrix terminal;             // n_paths x n_assets, S_T
  Matrix integrated_variance;  // n_paths x n_assets, int_0^T V_s ds
  Matrix mean_variance;        // n_assets x (n_steps + 1), path average of V_t
  Matrix cross_sqrt_variance;  // n_assets x n_assets, path average of int_0^T sqrt(V^i V^j) ds
};

inline JointSimulation simulate_joint(const std::vector<RoughHestonParams>& params,
                                      const std::vector<double>& spots, double maturity,
                                      const Matrix& driver_corr, const SimulationConfig& cfg,
                                      double rate = 0.0) {
  const std::size_t n_assets = params.size();
  require(n_assets > 0 && spots.size() == n_assets, "simulate_joint: asset count mismatch");
  require(driver_corr.rows() == static_cast<Eigen::Index>(n_assets) && driver_corr.cols() == driver_corr.rows(),
          "simulate_joint: correlation shape mismatch");
  require(maturity > 0.0 && cfg.n_steps >= 1 && cfg.n_paths >= 1, "simulate_joint: invalid grid");
  for (const auto& p : params) p.validate(true);

  Eigen::LDLT<Matrix> ldlt(driver_corr);
  require(ldlt.info() == Eigen::Success && ldlt.isPositive(), "simulate_joint: correlation not PSD");
  Eigen::SelfAdjointEigenSolver<Matrix> es(driver_corr);
  const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  const std::size_t n = cfg.n_steps;
  std::vector<VolterraWeights> weights;
  for (const auto& p : params) weights.emplace_back(p.alpha(), maturity, n);
  const double dt = maturity / static_cast<double>(n);
  const double sqdt = std::sqrt(dt);

  JointSimulation out;
  const auto na = static_cast<Eigen::Index>(n_assets);
  out.terminal.resize(static_cast<Eigen::Index>(cfg.n_paths), na);
  out.integrated_variance.resize(static_cast<Eigen::Index>(cfg.n_paths), na);
  // Per-path V histories are summed into per-worker accumulators keyed by path
  // block so the reduction order is fixed.
  constexpr std::size_t kBlock = 256;
  const std::size_t n_blocks = (cfg.n_paths + kBlock - 1) / kBlock;
  std::vector<Matrix> block_v(n_blocks, Matrix::Zero(na, static_cast<Eigen::Index>(n + 1)));
  std::vector<Matrix> block_cross(n_blocks, Matrix::Zero(na, na));

  parallel_for(n_blocks, [&](std::size_t blk) {
    std::vector<double> v(n_assets * (n + 1));
    std::vector<double> drift(n_assets * n), shock(n_assets * n);
    Vector g(na), wz(na);
    Matrix& acc = block_v[blk];
    const std::size_t end = std::min(cfg.n_paths, (blk + 1) * kBlock);
    for (std::size_t path = blk * kBlock; path < end; ++path) {
      RandomStream rng(cfg.seed, path);
      std::vector<double> x(n_assets, 0.0), iv(n_assets, 0.0);
      for (std::size_t i = 0; i < n_assets; ++i) v[i * (n + 1)] = params[i].v0;
      for (std::size_t k = 0; k < n; ++k) {
        for (Eigen::Index i = 0; i < na; ++i) g(i) = rng.normal();
        wz.noalias() = root * g;
        for (std::size_t i = 0; i < n_assets; ++i) {
          const auto& p = params[i];
          const double vk = std::max(v[i * (n + 1) + k], 0.0);
          const double dw = wz(static_cast<Eigen::Index>(i)) * sqdt;
          const double dz = rng.normal() * sqdt;
          const double db = p.leverage * dw + std::sqrt(1.0 - p.leverage * p.leverage) * dz;
          x[i] += -0.5 * vk * dt + std::sqrt(vk) * dw;
          iv[i] += vk * dt;
          drift[i * n + k] = p.kappa * (p.v_inf - vk);
          shock[i * n + k] = p.effective_vol_of_vol() * std::sqrt(vk) * db / dt;
          // V_{k+1} = V_0 + sum_{j<=k} b(k-j) (drift_j + shock_j)
          const auto& w = weights[i];
          double acc_v = p.v0;
          for (std::size_t j = 0; j <= k; ++j)
            acc_v += w.predictor[k - j] * (drift[i * n + j] + shock[i * n + j]);
          v[i * (n + 1) + k + 1] = acc_v;
        }
      }
      const auto row = static_cast<Eigen::Index>(path);
      for (std::size_t i = 0; i < n_assets; ++i)
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < n; ++k)
            s += std::sqrt(std::max(v[i * (n + 1) + k], 0.0) * std::max(v[j * (n + 1) + k], 0.0));
          block_cross[blk](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += s * dt;
        }
      for (std::size_t i = 0; i < n_assets; ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        out.terminal(row, col) = spots[i] * std::exp(rate * maturity + x[i]);
        out.integrated_variance(row, col) = iv[i];
        for (std::size_t k = 0; k <= n; ++k)
          acc(col, static_cast<Eigen::Index>(k)) += std::max(v[i * (n + 1) + k], 0.0);
      }
    }
  });
  out.mean_variance = Matrix::Zero(na, static_cast<Eigen::Index>(n + 1));
  for (const auto& m : block_v) out.mean_variance += m;
  out.mean_variance /= static_cast<double>(cfg.n_paths);
  out.cross_sqrt_variance = Matrix::Zero(na, na);
  for (const auto& m : block_cross) out.cross_sqrt_variance += m;
  out.cross_sqrt_variance /= static_cast<double>(cfg.n_paths);
  const Matrix lower = out.cross_sqrt_variance;
  out.cross_sqrt_variance = lower.selfadjointView<Eigen::Lower>();
  return out;
}

/// Equal-weight Monte Carlo atoms of S_T.
inline TerminalDistribution simulate_terminal(const RoughHestonParams& params, double spot, double maturity,
                                              const SimulationConfig& cfg, double rate = 0.0) {
  require(cfg.n_paths >= 1000, "simulate_terminal: n_paths must be at least 1000");
  const auto sim = simulate_joint({params}, {spot}, maturity, Matrix::Identity(1, 1), cfg, rate);
  TerminalDistribution d{spot, maturity, rate, {}, {}};
  d.atoms.assign(sim.terminal.data(), sim.terminal.data() + sim.terminal.rows());
  d.weights.assign(d.atoms.size(), 1.0 / static_cast<double>(d.atoms.size()));
  return d;
}

/// Forward variance xi_0(t) = E[V_t] on the simulation grid, from the same
/// Volterra discretisation with the noise switched off.
inline std::vector<double> forward_variance(const RoughHestonParams& p, double maturity, std::size_t n_steps) {
  const VolterraWeights w(p.alpha(), maturity, n_steps);
  std::vector<double> xi(n_steps + 1, p.v0);
  for (std::size_t k = 0; k < n_steps; ++k) {
    double acc = p.v0;
    for (std::size_t j = 0; j <= k; ++j) acc += w.predictor[k - j] * p.kappa * (p.v_inf - xi[j]);
    xi[k + 1] = acc;
  }
  return xi;
}

/// Trapezoidal integral of the forward variance curve over [0, T].
inline double integrated_forward_variance(const RoughHestonParams& p, double maturity, std::size_t n_steps = 200) {
  const auto xi = forward_variance(p, maturity, n_steps);
  const double dt = maturity / static_cast<double>(n_steps);
  double s = 0.0;
  for (std::size_t k = 0; k < n_steps; ++k) s += 0.5 * dt * (xi[k] + xi[k + 1]);
  return s;
}

}  // namespace rmot
