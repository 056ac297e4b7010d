#pragma once

// Fractional kernels and fractional Brownian motion sampling.

#include "rmot/core.hpp"

#include <unsupported/Eigen/FFT>

#include <sstream>

namespace rmot {

/// Time grid and sampling request for fBm paths.
struct FbmGrid {
  double hurst = 0.5;
  std::vector<double> times;
  std::size_t n_paths = 1;
  std::uint64_t seed = 0;

  void validate() const {
    require(hurst > 0.0 && hurst < 1.0, "FbmGrid: hurst must lie in (0,1)");
    require(!times.empty(), "FbmGrid: empty time grid");
    require(n_paths > 0, "FbmGrid: n_paths must be positive");
    require(times.front() >= 0.0, "FbmGrid: times must be non-negative");
    for (std::size_t i = 1; i < times.size(); ++i)
      require(times[i] > times[i - 1], "FbmGrid: times must be strictly increasing");
  }
};

/// Power-law Volterra kernel K(t) = t^{H-1/2} / Gamma(H+1/2).
struct KernelSpec {
  double hurst;
  double gamma_factor;

  explicit KernelSpec(double h) : hurst(h), gamma_factor(1.0 / std::tgamma(h + 0.5)) {
    require(h > 0.0 && h < 1.0, "KernelSpec: hurst must lie in (0,1)");
  }

  double alpha() const { return hurst + 0.5; }
  double operator()(double t) const { return t > 0.0 ? gamma_factor * std::pow(t, hurst - 0.5) : 0.0; }

  /// Integral of the kernel over [0, t]: t^{alpha} / Gamma(alpha + 1).
  double integrated(double t) const {
    return t > 0.0 ? std::pow(t, alpha()) / std::tgamma(alpha() + 1.0) : 0.0;
  }
};

inline double fbm_covariance(double s, double t, double hurst) {
  require(hurst > 0.0 && hurst < 1.0, "fbm_covariance: hurst must lie in (0,1)");
  require(s >= 0.0 && t >= 0.0, "fbm_covariance: times must be non-negative");
  const double h2 = 2.0 * hurst;
  return 0.5 * (std::pow(s, h2) + std::pow(t, h2) - std::pow(std::abs(t - s), h2));
}

inline Matrix fbm_covariance_matrix(const std::vector<double>& times, double hurst) {
  const auto n = static_cast<Eigen::Index>(times.size());
  Matrix c(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      c(i, j) = c(j, i) = fbm_covariance(times[i], times[j], hurst);
  return c;
}

/// Exact sampling via the Cholesky factor of the grid covariance.
/// Returns an n_paths x n_times matrix; path p uses random stream p.
inline Matrix simulate_fbm_cholesky(const FbmGrid& grid) {
  grid.validate();
  const bool pinned = grid.times.front() == 0.0;
  const std::vector<double> live(grid.times.begin() + (pinned ? 1 : 0), grid.times.end());
  const auto n_times = static_cast<Eigen::Index>(grid.times.size());
  const auto n_live = static_cast<Eigen::Index>(live.size());
  Matrix paths = Matrix::Zero(static_cast<Eigen::Index>(grid.n_paths), n_times);
  if (n_live == 0) return paths;

  const Matrix cov = fbm_covariance_matrix(live, grid.hurst);
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NumericalError("simulate_fbm_cholesky: non-positive pivot, covariance is degenerate");
  const Matrix lower = llt.matrixL();
  for (Eigen::Index i = 0; i < n_live; ++i)
    if (!(lower(i, i) * lower(i, i) > 1e-13 * cov(i, i)))
      throw NumericalError("simulate_fbm_cholesky: non-positive pivot at time index " +
                           std::to_string(i));

  const Eigen::Index offset = pinned ? 1 : 0;
  parallel_for(grid.n_paths, [&](std::size_t p) {
    RandomStream rng(grid.seed, p);
    Vector z(n_live);
    for (Eigen::Index i = 0; i < n_live; ++i) z(i) = rng.normal();
    paths.row(static_cast<Eigen::Index>(p)).segment(offset, n_live) =
        (lower.triangularView<Eigen::Lower>() * z).transpose();
  });
  return paths;
}

/// Raised when the circulant embedding is not nonnegative definite. The
/// caller decides whether to pad the embedding or fall back to Cholesky.
class CirculantEmbeddingError : public NumericalError {
public:
  CirculantEmbeddingError(double min_eig, double max_eig, std::size_t size)
      : NumericalError(describe(min_eig, max_eig, size)), min_eigenvalue(min_eig),
        max_eigenvalue(max_eig), embedding_size(size) {}

  double min_eigenvalue;
  double max_eigenvalue;
  std::size_t embedding_size;

private:
  static std::string describe(double lo, double hi, std::size_t m) {
    std::ostringstream os;
    os << "circulant embedding of size " << m << " has eigenvalue " << lo
       << " (max " << hi << "); pad the embedding or use Cholesky";
    return os.str();
  }
};

/// Autocovariance of unit-step fractional Gaussian noise at lag k.
inline double fgn_autocovariance(std::size_t k, double hurst) {
  const double h2 = 2.0 * hurst;
  const double kk = static_cast<double>(k);
  return 0.5 * (std::pow(kk + 1.0, h2) - 2.0 * std::pow(kk, h2) + std::pow(std::abs(kk - 1.0), h2));
}

/// Eigenvalues of the circulant embedding of fGn with n increments. Tiny
/// negatives (above -1e-10 * max) are clipped; larger ones throw.
inline std::vector<double> circulant_eigenvalues(std::size_t n_increments, double hurst,
                                                 std::size_t min_size = 0) {
  std::size_t m = 2;
  while (m < std::max<std::size_t>(2 * n_increments, min_size)) m *= 2;
  std::vector<std::complex<double>> row(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t lag = k <= m / 2 ? k : m - k;
    row[k] = fgn_autocovariance(lag, hurst);
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> spec;
  fft.fwd(spec, row);
  std::vector<double> eig(m);
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    eig[k] = spec[k].real();
    lo = std::min(lo, eig[k]);
    hi = std::max(hi, eig[k]);
  }
  if (lo < -1e-10 * hi) throw CirculantEmbeddingError(lo, hi, m);
  for (auto& e : eig) e = std::max(e, 0.0);
  return eig;
}

/// Davies-Harte sampling on a uniform grid. The grid is either {dt, 2dt, ...}
/// or {0, dt, 2dt, ...}. Output matches simulate_fbm_cholesky in law.
inline Matrix simulate_fbm_circulant(const FbmGrid& grid) {
  grid.validate();
  const bool pinned = grid.times.front() == 0.0;
  const std::size_t n_inc = grid.times.size() - (pinned ? 1 : 0);
  const auto n_times = static_cast<Eigen::Index>(grid.times.size());
  Matrix paths = Matrix::Zero(static_cast<Eigen::Index>(grid.n_paths), n_times);
  if (n_inc == 0) return paths;

  const double dt = pinned ? grid.times[1] : grid.times[0];
  for (std::size_t j = 0; j < grid.times.size(); ++j) {
    const double expected = dt * static_cast<double>(pinned ? j : j + 1);
    require(std::abs(grid.times[j] - expected) <= 1e-9 * std::max(1.0, expected),
            "simulate_fbm_circulant: times must be uniformly spaced from 0");
  }

  const std::vector<double> eig = circulant_eigenvalues(n_inc, grid.hurst);
  const std::size_t m = eig.size();
  std::vector<double> scale(m);
  for (std::size_t k = 0; k < m; ++k) scale[k] = std::sqrt(eig[k] / static_cast<double>(m));
  const double step_scale = std::pow(dt, grid.hurst);
  const Eigen::Index offset = pinned ? 1 : 0;

  parallel_for(grid.n_paths, [&](std::size_t p) {
    RandomStream rng(grid.seed, p);
    std::vector<std::complex<double>> in(m), out;
    for (std::size_t k = 0; k < m; ++k) {
      const double re = rng.normal();
      const double im = rng.normal();
      in[k] = {scale[k] * re, scale[k] * im};
    }
    Eigen::FFT<double> fft;
    fft.fwd(out, in);
    double level = 0.0;
    const auto row = static_cast<Eigen::Index>(p);
    for (std::size_t j = 0; j < n_inc; ++j) {
      level += step_scale * out[j].real();
      paths(row, offset + static_cast<Eigen::Index>(j)) = level;
    }
  });
  return paths;
}

}  // namespace rmot
