#pragma once

// Weighted least-squares (Gaussian MLE) calibration of the rough Heston model
// to call quotes, with the identifiability gate on the Fisher information.

#include "rmot/identifiability.hpp"

#include <functional>
#include <memory>
#include <optional>

namespace rmot {

enum class WeightsMode { Homoscedastic, InverseSpread };

struct CalibrationConfig {
  std::size_t max_iter = 100;
  double tolerance = 1e-8;  // on the projected gradient, scaled by the box width
  RoughHestonParams lower{0.01, 0.01, -0.999, 1e-4, 0.0, 1e-4};
  RoughHestonParams upper{0.49, 5.0, 0.999, 4.0, 20.0, 4.0};
  WeightsMode weights = WeightsMode::InverseSpread;
  double homoscedastic_sigma = 0.0;  // 0: mean of the slice noise
  std::vector<double> start_hurst = {0.05, 0.1, 0.3};
  std::vector<std::size_t> free_parameters = {0, 1, 2, 3};
  std::vector<std::size_t> fisher_parameters = {0, 1, 2, 3, 4};
  double fim_threshold = 1e-6;
  std::size_t min_strikes = 50;
  bool joint = true;  // false: fit every maturity separately
  double kappa = 1.0;
  std::optional<double> v_inf;  // default: long-dated ATM variance
  double hist_leverage = -0.65;
  FourierConfig pricer{1.5, 1e-10, 400, 100};

  void validate() const {
    require(tolerance > 0.0, "CalibrationConfig: tolerance must be positive");
    require(max_iter > 0, "CalibrationConfig: max_iter must be positive");
    for (std::size_t i = 0; i < RoughHestonParams::kSize; ++i)
      require(lower[i] <= upper[i], "CalibrationConfig: lower bound above upper bound for " +
                                        std::string(RoughHestonParams::kNames[i]));
    require(lower.hurst > 0.0 && upper.hurst < 0.5, "CalibrationConfig: H bounds must lie in (0, 0.5)");
    require(lower.leverage > -1.0 && upper.leverage < 1.0, "CalibrationConfig: rho bounds must lie in (-1, 1)");
    require(lower.vol_of_vol > 0.0 && lower.v0 > 0.0 && lower.v_inf > 0.0 && lower.kappa >= 0.0,
            "CalibrationConfig: bounds must respect parameter positivity");
    require(!start_hurst.empty(), "CalibrationConfig: need at least one start");
    require(!free_parameters.empty(), "CalibrationConfig: no free parameters");
    require(fim_threshold > 0.0 && fim_threshold < 1.0, "CalibrationConfig: fim_threshold must lie in (0, 1)");
  }
};

struct CalibrationResult {
  RoughHestonParams params;
  FisherReport fisher;
  double objective = 0.0;
  double initial_objective = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  double kkt_residual = 0.0;
  std::vector<std::string> warnings;
  std::vector<double> objective_trace;  // accepted iterates
};

class CalibrationError : public NumericalError {
public:
  CalibrationError(const std::string& what, RoughHestonParams last) : NumericalError(what), last_good(last) {}
  RoughHestonParams last_good;
};

// ---------------------------------------------------------------------------
// Initialisation
// ---------------------------------------------------------------------------

/// Implied volatility at the forward, interpolated linearly in log-moneyness
/// between the two strikes that bracket it.
inline double atm_implied_vol(const MarketSlice& slice) {
  require(!slice.strikes.empty(), "atm_implied_vol: empty slice");
  const double fwd = slice.spot * std::exp(slice.rate * slice.maturity);
  for (std::size_t i = 0; i + 1 < slice.strikes.size(); ++i) {
    const double k0 = slice.strikes[i], k1 = slice.strikes[i + 1];
    if (k0 <= fwd && fwd <= k1) {
      const double v0 = implied_vol(slice.prices[i], slice.spot, k0, slice.maturity, slice.rate);
      const double v1 = implied_vol(slice.prices[i + 1], slice.spot, k1, slice.maturity, slice.rate);
      require(std::isfinite(v0) && std::isfinite(v1), "atm_implied_vol: ATM quotes outside the no-arbitrage band");
      const double w = (std::log(fwd) - std::log(k0)) / (std::log(k1) - std::log(k0));
      return (1.0 - w) * v0 + w * v1;
    }
  }
  throw DomainError("atm_implied_vol: no strike pair brackets the forward");
}

inline RoughHestonParams initialize(const std::vector<MarketSlice>& slices, double hist_leverage,
                                    const CalibrationConfig& cfg = {}) {
  require(!slices.empty(), "initialize: empty chain");
  const auto shortest = std::min_element(slices.begin(), slices.end(),
                                         [](const auto& a, const auto& b) { return a.maturity < b.maturity; });
  const auto longest = std::max_element(slices.begin(), slices.end(),
                                        [](const auto& a, const auto& b) { return a.maturity < b.maturity; });
  RoughHestonParams p;
  const double atm = atm_implied_vol(*shortest);
  p.v0 = atm * atm;
  p.leverage = std::clamp(hist_leverage, -0.99, -0.01);
  p.hurst = 0.1;
  p.vol_of_vol = 0.2;
  p.kappa = cfg.kappa;
  if (cfg.v_inf) {
    p.v_inf = *cfg.v_inf;
  } else {
    const double atm_long = atm_implied_vol(*longest);
    p.v_inf = atm_long * atm_long;
  }
  return p;
}

inline RoughHestonParams initialize(const MarketSlice& slice, double hist_leverage, const CalibrationConfig& cfg = {}) {
  return initialize(std::vector<MarketSlice>{slice}, hist_leverage, cfg);
}

// ---------------------------------------------------------------------------
// Synthetic chains
// ---------------------------------------------------------------------------

struct SyntheticChainSpec {
  double spot = 100.0;
  double rate = 0.0;
  std::vector<double> maturities = {0.25, 0.5, 1.0};
  std::size_t strikes = 52;       // total over all maturities
  double half_width = 0.2;        // log-moneyness half-width
  double relative_vol_noise = 0.01;
  std::uint64_t seed = 0;
};

/// Model prices at `truth`, perturbed by multiplicative implied-vol noise
/// sigma_iv = relative_vol_noise * iv. The per-strike price noise is the
/// vega-mapped vol noise. Strikes sit at cell centres of the log-moneyness
/// interval so every strike carries the same share of the range.
inline std::vector<MarketSlice> synthetic_chain(const RoughHestonParams& truth, const SyntheticChainSpec& spec,
                                                const FourierConfig& pricer = {1.5, 1e-10, 400, 100}) {
  require(!spec.maturities.empty() && spec.strikes >= spec.maturities.size(),
          "synthetic_chain: need at least one strike per maturity");
  std::vector<MarketSlice> out;
  const std::size_t nt = spec.maturities.size();
  std::size_t stream = 0;
  for (std::size_t j = 0; j < nt; ++j) {
    const double t = spec.maturities[j];
    const std::size_t mj = spec.strikes / nt + (j < spec.strikes % nt ? 1 : 0);
    MarketSlice sl{spec.spot, t, spec.rate, {}, {}, {}};
    const double fwd = spec.spot * std::exp(spec.rate * t);
    for (std::size_t i = 0; i < mj; ++i) {
      const double x = -spec.half_width + (2.0 * static_cast<double>(i) + 1.0) * spec.half_width / static_cast<double>(mj);
      sl.strikes.push_back(fwd * std::exp(x));
    }
    const auto clean = price_calls_fourier(truth, spec.spot, sl.strikes, t, spec.rate, pricer);
    for (std::size_t i = 0; i < mj; ++i) {
      const double k = sl.strikes[i];
      double iv = implied_vol(clean[i], spec.spot, k, t, spec.rate);
      if (!std::isfinite(iv)) iv = std::sqrt(truth.v0);
      RandomStream rng(spec.seed, stream++);
      const double sd = spec.relative_vol_noise * iv;
      const double noisy_iv = std::max(iv + sd * rng.normal(), 1e-4);
      sl.prices.push_back(spec.relative_vol_noise > 0.0 ? bs_call(spec.spot, k, t, spec.rate, noisy_iv) : clean[i]);
      sl.noise.push_back(std::max(bs_vega(spec.spot, k, t, spec.rate, iv) * std::max(sd, 1e-4 * iv), 1e-10 * spec.spot));
    }
    out.push_back(std::move(sl));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Projected Levenberg-Marquardt
// ---------------------------------------------------------------------------

namespace detail {

struct Problem {
  const std::vector<MarketSlice>& slices;
  const CalibrationConfig& cfg;
  Vector observed;
  Vector inv_sigma;

  Problem(const std::vector<MarketSlice>& s, const CalibrationConfig& c) : slices(s), cfg(c) {
    std::size_t total = 0;
    double noise_sum = 0.0;
    for (const auto& sl : slices) {
      total += sl.size();
      for (double n : sl.noise) noise_sum += n;
    }
    observed.resize(static_cast<Eigen::Index>(total));
    inv_sigma.resize(static_cast<Eigen::Index>(total));
    const double homo = cfg.homoscedastic_sigma > 0.0 ? cfg.homoscedastic_sigma : noise_sum / static_cast<double>(total);
    Eigen::Index row = 0;
    for (const auto& sl : slices)
      for (std::size_t k = 0; k < sl.size(); ++k, ++row) {
        observed(row) = sl.prices[k];
        inv_sigma(row) = 1.0 / (cfg.weights == WeightsMode::Homoscedastic ? homo : sl.noise[k]);
      }
  }

  std::vector<double> sigmas() const {
    std::vector<double> s(static_cast<std::size_t>(inv_sigma.size()));
    for (Eigen::Index i = 0; i < inv_sigma.size(); ++i) s[static_cast<std::size_t>(i)] = 1.0 / inv_sigma(i);
    return s;
  }

  Vector residual(const SlicePricer& pricer, const RoughHestonParams& p) const {
    return (pricer(p) - observed).cwiseProduct(inv_sigma);
  }
};

inline RoughHestonParams project(RoughHestonParams p, const CalibrationConfig& cfg) {
  for (std::size_t i = 0; i < RoughHestonParams::kSize; ++i) p[i] = std::clamp(p[i], cfg.lower[i], cfg.upper[i]);
  return p;
}

/// Projected gradient of 0.5|r|^2 in box-width units, relative to
/// max(f, 1): the largest first-order relative decrease still available.
inline double projected_gradient_norm(const Vector& grad, const RoughHestonParams& p, const CalibrationConfig& cfg,
                                      double f) {
  double worst = 0.0;
  for (std::size_t c = 0; c < cfg.free_parameters.size(); ++c) {
    const std::size_t i = cfg.free_parameters[c];
    const double g = grad(static_cast<Eigen::Index>(c));
    const double width = cfg.upper[i] - cfg.lower[i];
    const bool blocked = (p[i] <= cfg.lower[i] && g > 0.0) || (p[i] >= cfg.upper[i] && g < 0.0);
    if (!blocked) worst = std::max(worst, std::abs(g) * width);
  }
  return worst / std::max(f, 1.0);
}

struct FitOutcome {
  RoughHestonParams params;
  double objective;
  double initial_objective;
  bool converged;
  std::size_t iterations;
  double kkt;
  std::vector<double> trace;
};

inline FitOutcome fit_from(const Problem& prob, RoughHestonParams start) {
  const auto& cfg = prob.cfg;
  RoughHestonParams p = project(start, cfg);
  // The pricer stays frozen at the current iterate: its mesh serves both the
  // accepted residual and the Jacobian.
  auto pricer = std::make_unique<SlicePricer>(prob.slices, cfg.pricer);
  Vector prices;
  try {
    prices = pricer->freeze(p);
  } catch (const std::exception& e) {
    throw CalibrationError(std::string("calibration: pricing failed at the start point: ") + e.what(), p);
  }
  Vector r = (prices - prob.observed).cwiseProduct(prob.inv_sigma);
  double f = 0.5 * r.squaredNorm();
  FitOutcome out{p, f, f, false, 0, 0.0, {f}};
  double mu = 1e-3;
  const auto nfree = static_cast<Eigen::Index>(cfg.free_parameters.size());
  JacobianConfig jc;
  jc.parameters = cfg.free_parameters;
  jc.stencil = Stencil::Forward;
  jc.pricer = cfg.pricer;
  std::size_t failures = 0;

  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    out.iterations = it + 1;
    Matrix jac;
    try {
      jac = fd_jacobian(*pricer, p, prices, jc);
    } catch (const std::exception& e) {
      throw CalibrationError(std::string("calibration: Jacobian failed: ") + e.what(), p);
    }
    jac = prob.inv_sigma.asDiagonal() * jac;
    const Vector grad = jac.transpose() * r;
    out.kkt = projected_gradient_norm(grad, p, cfg, f);
    if (out.kkt <= cfg.tolerance) {
      out.converged = true;
      break;
    }
    const Matrix jtj = jac.transpose() * jac;
    bool accepted = false;
    bool stalled = false;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      Matrix a = jtj;
      for (Eigen::Index c = 0; c < nfree; ++c) a(c, c) += mu * std::max(jtj(c, c), 1e-12);
      const Vector step = a.ldlt().solve(-grad);
      RoughHestonParams q = p;
      for (Eigen::Index c = 0; c < nfree; ++c) q[cfg.free_parameters[static_cast<std::size_t>(c)]] += step(c);
      q = project(q, cfg);
      double move = 0.0;
      for (std::size_t i : cfg.free_parameters)
        move = std::max(move, std::abs(q[i] - p[i]) / (cfg.upper[i] - cfg.lower[i]));
      if (move < 1e-12) {
        stalled = true;
        break;
      }
      auto trial = std::make_unique<SlicePricer>(prob.slices, cfg.pricer);
      double fq = std::numeric_limits<double>::infinity();
      Vector pq, rq;
      try {
        pq = trial->freeze(q);
        rq = (pq - prob.observed).cwiseProduct(prob.inv_sigma);
        fq = 0.5 * rq.squaredNorm();
      } catch (const std::exception&) {
        ++failures;  // pricer failure: reject the step and damp harder
      }
      if (fq < f) {
        const double rel = (f - fq) / std::max(f, 1e-300);
        p = q;
        r = std::move(rq);
        prices = std::move(pq);
        pricer = std::move(trial);
        f = fq;
        out.trace.push_back(f);
        accepted = true;
        mu = std::max(mu / 3.0, 1e-9);
        if (rel < 1e-12) stalled = true;
      } else {
        mu *= 4.0;
      }
    }
    if (!accepted && failures >= 12) throw CalibrationError("calibration: pricer failed on every trial step", p);
    if (!accepted || stalled) {
      // No further descent at working precision: a stationary point of the
      // quadrature-accurate objective.
      out.converged = true;
      break;
    }
  }
  out.params = p;
  out.objective = f;
  return out;
}

inline CalibrationResult finalize(const Problem& prob, const FitOutcome& fit, std::size_t strike_count) {
  const auto& cfg = prob.cfg;
  CalibrationResult res;
  res.params = fit.params;
  res.objective = fit.objective;
  res.initial_objective = fit.initial_objective;
  res.converged = fit.converged;
  res.iterations = fit.iterations;
  res.kkt_residual = fit.kkt;
  res.objective_trace = fit.trace;
  JacobianConfig jc;
  jc.parameters = cfg.fisher_parameters;
  jc.stencil = Stencil::Central;
  jc.pricer = cfg.pricer;
  const Matrix jac = jacobian(fit.params, prob.slices, jc);
  res.fisher = fisher_matrix(jac, prob.sigmas(), cfg.fim_threshold);
  const int target = std::min<int>(5, static_cast<int>(cfg.fisher_parameters.size()));
  if (res.fisher.d_eff < target)
    res.warnings.push_back("identifiability: effective dimension " + std::to_string(res.fisher.d_eff) + " < " +
                           std::to_string(target) + "; increase strike count");
  if (strike_count < cfg.min_strikes)
    res.warnings.push_back("identifiability: " + std::to_string(strike_count) + " strikes is below the " +
                           std::to_string(cfg.min_strikes) + " needed to resolve H");
  if (!fit.converged)
    res.warnings.push_back("optimizer: max_iter reached with KKT residual " + std::to_string(fit.kkt));
  return res;
}

}  // namespace detail

/// Multi-start fit over the chain. Slices are fitted jointly unless
/// `cfg.joint` is false, in which case use calibrate_per_slice.
inline CalibrationResult calibrate(const std::vector<MarketSlice>& slices, const CalibrationConfig& cfg = {},
                                   std::optional<RoughHestonParams> start = std::nullopt) {
  cfg.validate();
  require(!slices.empty(), "calibrate: empty chain");
  std::size_t m = 0;
  for (const auto& sl : slices) {
    sl.validate();
    m += sl.size();
  }
  const detail::Problem prob(slices, cfg);
  const RoughHestonParams base = start ? *start : initialize(slices, cfg.hist_leverage, cfg);
  std::optional<detail::FitOutcome> best;
  std::vector<RoughHestonParams> starts;
  if (start) {
    starts.push_back(*start);
  } else {
    for (double h : cfg.start_hurst) {
      RoughHestonParams s = base;
      s.hurst = h;
      starts.push_back(s);
    }
  }
  std::optional<CalibrationError> last_error;
  for (const auto& s : starts) {
    try {
      auto fit = detail::fit_from(prob, s);
      if (!best || fit.objective < best->objective ||
          (fit.objective == best->objective && fit.params.hurst < best->params.hurst))
        best = std::move(fit);
    } catch (const CalibrationError& e) {
      last_error = e;
    }
  }
  if (!best) throw *last_error;
  // Report the initial objective of the canonical start (H = 0.1 by default).
  auto res = detail::finalize(prob, *best, m);
  {
    detail::SlicePricer pricer(slices, cfg.pricer);
    const Vector prices = pricer.freeze(detail::project(base, cfg));
    res.initial_objective = 0.5 * (prices - prob.observed).cwiseProduct(prob.inv_sigma).squaredNorm();
  }
  return res;
}

inline CalibrationResult calibrate(const MarketSlice& slice, const CalibrationConfig& cfg = {},
                                   std::optional<RoughHestonParams> start = std::nullopt) {
  return calibrate(std::vector<MarketSlice>{slice}, cfg, start);
}

inline std::vector<CalibrationResult> calibrate_per_slice(const std::vector<MarketSlice>& slices,
                                                          const CalibrationConfig& cfg = {}) {
  std::vector<CalibrationResult> out;
  for (const auto& sl : slices) out.push_back(calibrate(sl, cfg));
  return out;
}

/// Dispatches on cfg.joint: one joint result, or one result per slice.
inline std::vector<CalibrationResult> calibrate_chain(const std::vector<MarketSlice>& slices,
                                                      const CalibrationConfig& cfg = {}) {
  if (cfg.joint) return {calibrate(slices, cfg)};
  return calibrate_per_slice(slices, cfg);
}

}  // namespace rmot
