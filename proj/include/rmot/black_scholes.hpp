#pragma once

#include "rmot/core.hpp"

namespace rmot {

/// Black-Scholes call with continuous rate; sigma is annualised.
inline double bs_call(double spot, double strike, double maturity, double rate, double sigma) {
  const double df = std::exp(-rate * maturity);
  if (strike <= 0.0) return spot - strike * df;
  const double fwd = spot * std::exp(rate * maturity);
  const double sd = sigma * std::sqrt(maturity);
  if (sd <= 0.0) return df * std::max(fwd - strike, 0.0);
  const double d1 = (std::log(fwd / strike) + 0.5 * sd * sd) / sd;
  return df * (fwd * normal_cdf(d1) - strike * normal_cdf(d1 - sd));
}

inline double bs_put(double spot, double strike, double maturity, double rate, double sigma) {
  const double df = std::exp(-rate * maturity);
  if (strike <= 0.0) return 0.0;
  const double fwd = spot * std::exp(rate * maturity);
  const double sd = sigma * std::sqrt(maturity);
  if (sd <= 0.0) return df * std::max(strike - fwd, 0.0);
  const double d1 = (std::log(fwd / strike) + 0.5 * sd * sd) / sd;
  return df * (strike * normal_cdf(sd - d1) - fwd * normal_cdf(-d1));
}

inline double bs_vega(double spot, double strike, double maturity, double rate, double sigma) {
  const double fwd = spot * std::exp(rate * maturity);
  const double sd = sigma * std::sqrt(maturity);
  if (sd <= 0.0 || strike <= 0.0) return 0.0;
  const double d1 = (std::log(fwd / strike) + 0.5 * sd * sd) / sd;
  return std::exp(-rate * maturity) * fwd * normal_pdf(d1) * std::sqrt(maturity);
}

/// Implied volatility by safeguarded Newton on a bracket; returns NaN when
/// the price is outside the no-arbitrage band.
inline double implied_vol(double price, double spot, double strike, double maturity, double rate) {
  const double df = std::exp(-rate * maturity);
  const double intrinsic = std::max(spot - strike * df, 0.0);
  if (!(price > intrinsic) || !(price < spot)) return std::numeric_limits<double>::quiet_NaN();
  double lo = 1e-6, hi = 5.0;
  double sigma = 0.3;
  for (int it = 0; it < 200; ++it) {
    const double diff = bs_call(spot, strike, maturity, rate, sigma) - price;
    if (std::abs(diff) < 1e-14 * spot) break;
    if (diff > 0) hi = sigma; else lo = sigma;
    const double vega = bs_vega(spot, strike, maturity, rate, sigma);
    double next = vega > 0.0 ? sigma - diff / vega : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - sigma) < 1e-15) break;
    sigma = next;
  }
  return sigma;
}

}  // namespace rmot
