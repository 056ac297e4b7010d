#pragma once

// Finite-difference price Jacobians, Fisher information and the effective
// dimension diagnostics built from it.

#include "rmot/rough_heston.hpp"

#include <bit>

namespace rmot {

enum class Stencil { Forward, Central, FourPoint };

struct JacobianConfig {
  /// Columns in canonical order; indices into RoughHestonParams.
  std::vector<std::size_t> parameters = {0, 1, 2, 3, 4};
  double rel_step = 1e-4;
  double abs_floor = 1e-6;
  Stencil stencil = Stencil::Central;
  FourierConfig pricer{};
};

namespace detail {

inline std::string param_name(std::size_t i) { return std::string(RoughHestonParams::kNames.at(i)); }

/// Prices every slice on its own frozen mesh.
class SlicePricer {
public:
  SlicePricer(const std::vector<MarketSlice>& slices, const FourierConfig& cfg)
      : slices_(slices), cfg_(cfg) {}

  /// Builds the meshes at `base` and returns the adaptive prices there;
  /// later calls reuse the meshes.
  Vector freeze(const RoughHestonParams& base) {
    meshes_.assign(slices_.size(), {});
    Vector out(static_cast<Eigen::Index>(total_size()));
    Eigen::Index row = 0;
    for (std::size_t s = 0; s < slices_.size(); ++s) {
      const auto& sl = slices_[s];
      for (double v : price_calls_fourier(base, sl.spot, sl.strikes, sl.maturity, sl.rate, cfg_, &meshes_[s]))
        out(row++) = v;
    }
    return out;
  }

  std::size_t total_size() const {
    std::size_t total = 0;
    for (const auto& sl : slices_) total += sl.size();
    return total;
  }

  bool frozen() const { return !meshes_.empty(); }

  /// Stacked prices over all slices, in slice then strike order.
  Vector operator()(const RoughHestonParams& p) const {
    Vector out(static_cast<Eigen::Index>(total_size()));
    Eigen::Index row = 0;
    for (std::size_t s = 0; s < slices_.size(); ++s) {
      const auto& sl = slices_[s];
      const auto c = price_calls_fourier(p, sl.spot, sl.strikes, sl.maturity, sl.rate, cfg_, nullptr,
                                         frozen() ? &meshes_[s] : nullptr);
      for (double v : c) out(row++) = v;
    }
    return out;
  }

private:
  const std::vector<MarketSlice>& slices_;
  FourierConfig cfg_;
  std::vector<QuadratureMesh> meshes_;
};

inline double fd_step(double x, const JacobianConfig& cfg) {
  return std::max(cfg.rel_step * std::abs(x), cfg.abs_floor);
}

}  // namespace detail

namespace detail {

/// Finite-difference Jacobian on an already frozen pricer. `base` holds the
/// prices at `params` on the same mesh (needed by the forward stencil).
inline Matrix fd_jacobian(const SlicePricer& pricer, const RoughHestonParams& params, const Vector& base,
                          const JacobianConfig& cfg) {
  Matrix jac(static_cast<Eigen::Index>(pricer.total_size()), static_cast<Eigen::Index>(cfg.parameters.size()));
  auto shifted = [&](std::size_t i, double delta) {
    RoughHestonParams q = params;
    q[i] += delta;
    try {
      return pricer(q);
    } catch (const std::exception& e) {
      throw NumericalError("jacobian: pricing failed when shifting " + param_name(i) + " by " +
                           std::to_string(delta) + ": " + e.what());
    }
  };
  for (std::size_t c = 0; c < cfg.parameters.size(); ++c) {
    const std::size_t i = cfg.parameters[c];
    const double h = fd_step(params[i], cfg);
    Vector col;
    switch (cfg.stencil) {
      case Stencil::Forward:
        col = (shifted(i, h) - base) / h;
        break;
      case Stencil::Central:
        col = (shifted(i, h) - shifted(i, -h)) / (2.0 * h);
        break;
      case Stencil::FourPoint:
        col = (-shifted(i, 2.0 * h) + 8.0 * shifted(i, h) - 8.0 * shifted(i, -h) + shifted(i, -2.0 * h)) /
              (12.0 * h);
        break;
    }
    jac.col(static_cast<Eigen::Index>(c)) = col;
  }
  return jac;
}

}  // namespace detail

/// dC(K_k)/dtheta_i for the stacked strikes of all slices. The quadrature
/// mesh is frozen at the base point so differences are not polluted by
/// adaptive refinement.
inline Matrix jacobian(const RoughHestonParams& params, const std::vector<MarketSlice>& slices,
                       const JacobianConfig& cfg = {}) {
  params.validate(true);
  require(!slices.empty(), "jacobian: no slices");
  for (const auto& sl : slices) sl.validate();
  for (std::size_t i : cfg.parameters) require(i < RoughHestonParams::kSize, "jacobian: parameter index out of range");
  detail::SlicePricer pricer(slices, cfg.pricer);
  const Vector adaptive = pricer.freeze(params);
  const Vector base = cfg.stencil == Stencil::Forward ? pricer(params) : adaptive;
  return detail::fd_jacobian(pricer, params, base, cfg);
}

inline Matrix jacobian(const RoughHestonParams& params, const MarketSlice& slice, const JacobianConfig& cfg = {}) {
  return jacobian(params, std::vector<MarketSlice>{slice}, cfg);
}

struct FisherReport {
  Matrix fim;
  Vector eigenvalues;  // descending
  Matrix eigenvectors; // columns match eigenvalues
  int d_eff = 0;
  Vector cr_std;
  double threshold = 1e-6;
  bool full_rank = false;
};

/// I = J^T diag(1/sigma^2) J with its spectral diagnostics.
inline FisherReport fisher_matrix(const Matrix& jac, const std::vector<double>& noise, double threshold = 1e-6) {
  require(static_cast<Eigen::Index>(noise.size()) == jac.rows(), "fisher_matrix: noise length must match rows");
  require(threshold > 0.0 && threshold < 1.0, "fisher_matrix: threshold must lie in (0, 1)");
  Vector w(jac.rows());
  for (Eigen::Index k = 0; k < jac.rows(); ++k) {
    const double s = noise[static_cast<std::size_t>(k)];
    require(s > 0.0, "fisher_matrix: observation noise must be positive");
    w(k) = 1.0 / (s * s);
  }
  FisherReport r;
  r.threshold = threshold;
  r.fim = jac.transpose() * w.asDiagonal() * jac;
  r.fim = 0.5 * (r.fim + r.fim.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(r.fim);
  const auto d = r.fim.rows();
  r.eigenvalues = es.eigenvalues().reverse();
  r.eigenvectors = es.eigenvectors().rowwise().reverse();
  const double top = d > 0 ? r.eigenvalues(0) : 0.0;
  Matrix pinv = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    if (top > 0.0 && r.eigenvalues(i) >= threshold * top) {
      ++r.d_eff;
      pinv += r.eigenvectors.col(i) * r.eigenvectors.col(i).transpose() / r.eigenvalues(i);
    }
  }
  r.full_rank = r.d_eff == d;
  r.cr_std = pinv.diagonal().cwiseMax(0.0).cwiseSqrt();
  return r;
}

/// min{5, floor(log2 m) + 2}.
inline int effective_dimension_bound(std::size_t m) {
  require(m >= 1, "effective_dimension_bound: m must be at least 1");
  const int log2m = static_cast<int>(std::bit_width(m)) - 1;
  return std::min(5, log2m + 2);
}

/// Std(H) >= C m^{-1/2} delta^{-1+2H}.
inline double cramer_rao_hurst(std::size_t m, double delta, double hurst, double scale) {
  require(m >= 1, "cramer_rao_hurst: m must be at least 1");
  require(delta > 0.0, "cramer_rao_hurst: delta must be positive");
  return scale / std::sqrt(static_cast<double>(m)) * std::pow(delta, -1.0 + 2.0 * hurst);
}

/// (2H + 1) ln(1 / sigma_noise), the noise-limited dimension estimate.
inline double noise_limited_dimension(double sigma_noise, double hurst) {
  require(sigma_noise > 0.0 && sigma_noise <= 1.0, "noise_limited_dimension: sigma_noise must lie in (0, 1]");
  return (2.0 * hurst + 1.0) * std::log(1.0 / sigma_noise);
}

}  // namespace rmot
