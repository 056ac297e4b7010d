#pragma once

// Multi-asset layer: rough covariance functional, regularised correlation
// recovery, the rank-coupling copula and basket bounds.

#include "rmot/calibration.hpp"
#include "rmot/rmot_single.hpp"

namespace rmot {

// ---------------------------------------------------------------------------
// Rough covariance functional
// ---------------------------------------------------------------------------

struct RoughCovarianceFunctional {
  Matrix psi;                        // Psi_ij = int_0^T sqrt(xi_i xi_j) ds
  std::vector<std::vector<double>> xi;  // forward variance per asset on the grid
  double maturity = 0.0;
  double second_order_budget = 0.0;  // max_i (kappa nu_i)^2 / mean xi_i, the eta^2 of the neglected term
  bool all_converged = true;
};

/// Leading-order Psi from the calibrated forward-variance curves.
inline RoughCovarianceFunctional covariance_functional(const std::vector<RoughHestonParams>& params, double maturity,
                                                       std::size_t n_steps = 200) {
  require(!params.empty(), "covariance_functional: no assets");
  require(maturity > 0.0, "covariance_functional: maturity must be positive");
  require(n_steps >= 2, "covariance_functional: need at least two steps");
  const auto n = static_cast<Eigen::Index>(params.size());
  RoughCovarianceFunctional out;
  out.maturity = maturity;
  for (const auto& p : params) {
    p.validate(true);
    out.xi.push_back(forward_variance(p, maturity, n_steps));
  }
  const double dt = maturity / static_cast<double>(n_steps);
  out.psi = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const auto& a = out.xi[static_cast<std::size_t>(i)];
      const auto& b = out.xi[static_cast<std::size_t>(j)];
      double s = 0.0;
      for (std::size_t k = 0; k < n_steps; ++k)
        s += 0.5 * dt * (std::sqrt(std::max(a[k] * b[k], 0.0)) + std::sqrt(std::max(a[k + 1] * b[k + 1], 0.0)));
      out.psi(i, j) = out.psi(j, i) = s;
    }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = params[static_cast<std::size_t>(i)].effective_vol_of_vol();
    out.second_order_budget = std::max(out.second_order_budget, e * e * maturity / out.psi(i, i));
  }
  return out;
}

inline RoughCovarianceFunctional covariance_functional(const std::vector<CalibrationResult>& marginals, double maturity,
                                                       std::size_t n_steps = 200) {
  std::vector<RoughHestonParams> p;
  bool ok = true;
  for (const auto& m : marginals) {
    p.push_back(m.params);
    ok = ok && m.converged;
  }
  auto out = covariance_functional(p, maturity, n_steps);
  out.all_converged = ok;
  return out;
}

// ---------------------------------------------------------------------------
// Block-arrowhead Newton step
// ---------------------------------------------------------------------------

/// H = [[diag(A_1..A_N), B], [B^T, C]] with B stacked from the per-block
/// couplings B_i (rows of block i, columns of the corner).
struct ArrowheadSystem {
  std::vector<Matrix> blocks;    // A_i, square
  std::vector<Matrix> coupling;  // B_i, blocks[i].rows() x corner.rows()
  Matrix corner;                 // C

  Eigen::Index size() const {
    Eigen::Index n = corner.rows();
    for (const auto& a : blocks) n += a.rows();
    return n;
  }

  Matrix dense() const {
    const Eigen::Index n = size(), p = corner.rows();
    Matrix h = Matrix::Zero(n, n);
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto m = blocks[i].rows();
      h.block(off, off, m, m) = blocks[i];
      h.block(off, n - p, m, p) = coupling[i];
      h.block(n - p, off, p, m) = coupling[i].transpose();
      off += m;
    }
    h.bottomRightCorner(p, p) = corner;
    return h;
  }
};

struct ArrowheadStep {
  Vector direction;
  double damping = 0.0;
  bool damped = false;
};

/// Solves H d = -g by eliminating the diagonal blocks (Schur complement on the
/// corner). Only the non-zero columns of each B_i are touched. If a block or
/// the Schur complement is not positive definite, Levenberg damping mu I is
/// added to H and the solve repeated.
inline ArrowheadStep block_sparse_newton_step(const ArrowheadSystem& sys, const Vector& gradient) {
  const auto nb = sys.blocks.size();
  require(sys.coupling.size() == nb, "block_sparse_newton_step: coupling count must match blocks");
  const Eigen::Index p = sys.corner.rows();
  require(sys.corner.cols() == p, "block_sparse_newton_step: corner must be square");
  require(gradient.size() == sys.size(), "block_sparse_newton_step: gradient has the wrong length");
  std::vector<std::vector<Eigen::Index>> cols(nb);
  double scale = p > 0 ? sys.corner.cwiseAbs().maxCoeff() : 0.0;
  for (std::size_t i = 0; i < nb; ++i) {
    require(sys.blocks[i].rows() == sys.blocks[i].cols(), "block_sparse_newton_step: blocks must be square");
    require(sys.coupling[i].rows() == sys.blocks[i].rows() && sys.coupling[i].cols() == p,
            "block_sparse_newton_step: coupling shape mismatch");
    for (Eigen::Index c = 0; c < p; ++c)
      if (sys.coupling[i].col(c).cwiseAbs().maxCoeff() != 0.0) cols[i].push_back(c);
    if (sys.blocks[i].size() > 0) scale = std::max(scale, sys.blocks[i].cwiseAbs().maxCoeff());
  }
  scale = std::max(scale, 1e-300);

  ArrowheadStep out;
  for (int attempt = 0; attempt < 60; ++attempt) {
    const double mu = out.damping;
    bool ok = true;
    Matrix schur = sys.corner;
    schur.diagonal().array() += mu;
    Vector rhs = -gradient.tail(p);
    std::vector<Eigen::LLT<Matrix>> fac(nb);
    std::vector<Vector> a_inv_g(nb);
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < nb && ok; ++i) {
      const auto m = sys.blocks[i].rows();
      Matrix a = sys.blocks[i];
      a.diagonal().array() += mu;
      fac[i].compute(a);
      if (fac[i].info() != Eigen::Success) {
        ok = false;
        break;
      }
      a_inv_g[i] = fac[i].solve(gradient.segment(off, m));
      if (!cols[i].empty()) {
        Matrix b(m, static_cast<Eigen::Index>(cols[i].size()));
        for (std::size_t c = 0; c < cols[i].size(); ++c) b.col(static_cast<Eigen::Index>(c)) = sys.coupling[i].col(cols[i][c]);
        const Matrix y = fac[i].solve(b);
        const Matrix by = b.transpose() * y;
        const Vector bg = b.transpose() * a_inv_g[i];
        for (std::size_t r = 0; r < cols[i].size(); ++r) {
          rhs(cols[i][r]) += bg(static_cast<Eigen::Index>(r));
          for (std::size_t c = 0; c < cols[i].size(); ++c)
            schur(cols[i][r], cols[i][c]) -= by(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        }
      }
      off += m;
    }
    Vector dc;
    if (ok && p > 0) {
      Eigen::LLT<Matrix> sf(schur);
      ok = sf.info() == Eigen::Success;
      if (ok) dc = sf.solve(rhs);
    } else if (ok) {
      dc = Vector(0);
    }
    if (ok && dc.allFinite()) {
      out.direction.resize(sys.size());
      off = 0;
      for (std::size_t i = 0; i < nb; ++i) {
        const auto m = sys.blocks[i].rows();
        Vector r = -gradient.segment(off, m);
        if (p > 0) r -= sys.coupling[i] * dc;
        out.direction.segment(off, m) = fac[i].solve(r);
        off += m;
      }
      out.direction.tail(p) = dc;
      return out;
    }
    out.damped = true;
    out.damping = mu == 0.0 ? 1e-10 * scale : mu * 10.0;
  }
  throw NumericalError("block_sparse_newton_step: system stayed indefinite under damping");
}

// ---------------------------------------------------------------------------
// Correlation recovery
// ---------------------------------------------------------------------------

struct CorrelationConfig {
  double gamma = 0.1;
  double epsilon = 1e-3;        // Tikhonov denominator offset
  double identifiability_gap = 1e-3;  // |H_i - H_j| below which gamma = 0 is refused
  std::size_t max_iter = 100;
  double tolerance = 1e-13;
  std::size_t strikes = 50;     // m in the CI scaling
  double ci_constant = 6.8e4;   // I(rho)_ij = c sqrt(m) (|H_i - H_j| + epsilon)
};

struct CorrelationEstimate {
  Matrix rho;
  Matrix ci_halfwidth;
  double condition = 0.0;
  double gamma = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  bool psd_repaired = false;
  std::vector<double> objective_trace;
};

/// Eigenvalue clipping at zero followed by diagonal renormalisation.
inline Matrix nearest_correlation(const Matrix& a, bool* repaired = nullptr) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  if (repaired) *repaired = false;
  if (es.eigenvalues().minCoeff() >= -1e-12) {
    Matrix out = 0.5 * (a + a.transpose());
    out.diagonal().setOnes();
    return out;
  }
  if (repaired) *repaired = true;
  Matrix c = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
  const Vector d = c.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  c = d.asDiagonal() * c * d.asDiagonal();
  c.diagonal().setOnes();
  return c;
}

inline double correlation_condition(const Matrix& rho) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(rho);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
}

namespace detail {

struct CorrelationObjective {
  Matrix psi, sigma_hat_inv, rho_hist;
  double log_det_sigma_hat = 0.0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  Vector penalty;  // gamma / (|dH| + eps) per pair

  Matrix model(const Vector& x) const {
    Matrix s = psi;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto [i, j] = pairs[k];
      s(i, j) = s(j, i) = x(static_cast<Eigen::Index>(k)) * psi(i, j);
    }
    return s;
  }

  /// KL(N(0, Sigma(rho)) | N(0, Sigma_hat)) + Tikhonov; +inf off the PD cone.
  double value(const Vector& x) const {
    const Matrix s = model(x);
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
    double f = 0.5 * ((sigma_hat_inv * s).trace() - static_cast<double>(s.rows()) + log_det_sigma_hat - log_det);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto [i, j] = pairs[k];
      const double d = x(static_cast<Eigen::Index>(k)) - rho_hist(i, j);
      f += penalty(static_cast<Eigen::Index>(k)) * d * d;
    }
    return f;
  }

  void derivatives(const Vector& x, Vector& grad, Matrix& hess) const {
    const Matrix s_inv = model(x).inverse();
    const auto np = static_cast<Eigen::Index>(pairs.size());
    grad.resize(np);
    hess.resize(np, np);
    for (Eigen::Index a = 0; a < np; ++a) {
      const auto [i, j] = pairs[static_cast<std::size_t>(a)];
      const double d = x(a) - rho_hist(i, j);
      grad(a) = psi(i, j) * (sigma_hat_inv(i, j) - s_inv(i, j)) + 2.0 * penalty(a) * d;
      for (Eigen::Index b = 0; b <= a; ++b) {
        const auto [k, l] = pairs[static_cast<std::size_t>(b)];
        const double v = psi(i, j) * psi(k, l) * (s_inv(i, k) * s_inv(j, l) + s_inv(i, l) * s_inv(j, k));
        hess(a, b) = hess(b, a) = v;
      }
      hess(a, a) += 2.0 * penalty(a);
    }
  }
};

}  // namespace detail

/// Recovers rho from the realised log-return covariance through
/// Sigma_ij = rho_ij Psi_ij, shrunk toward rho_hist with weight
/// gamma / (|H_i - H_j| + eps). Newton from rho_hist with backtracking.
inline CorrelationEstimate estimate_correlation(const std::vector<double>& hurst, const RoughCovarianceFunctional& cov,
                                                const Matrix& realized_cov, const Matrix& rho_hist,
                                                const CorrelationConfig& cfg = {}) {
  const auto n = static_cast<Eigen::Index>(hurst.size());
  require(n >= 2, "estimate_correlation: need at least two assets");
  require(cov.psi.rows() == n && realized_cov.rows() == n && realized_cov.cols() == n && rho_hist.rows() == n &&
              rho_hist.cols() == n,
          "estimate_correlation: dimension mismatch");
  require(cfg.gamma >= 0.0 && cfg.epsilon > 0.0, "estimate_correlation: gamma must be >= 0 and epsilon > 0");
  {
    Eigen::SelfAdjointEigenSolver<Matrix> es(rho_hist);
    require(es.eigenvalues().minCoeff() >= -1e-10 && (rho_hist.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12 &&
                (rho_hist - rho_hist.transpose()).cwiseAbs().maxCoeff() < 1e-12,
            "estimate_correlation: rho_hist is not a valid correlation matrix");
  }
  detail::CorrelationObjective obj;
  obj.psi = cov.psi;
  obj.rho_hist = rho_hist;
  Eigen::LLT<Matrix> sh(realized_cov);
  require(sh.info() == Eigen::Success, "estimate_correlation: realized covariance must be positive definite");
  obj.sigma_hat_inv = sh.solve(Matrix::Identity(n, n));
  for (Eigen::Index i = 0; i < n; ++i) obj.log_det_sigma_hat += 2.0 * std::log(sh.matrixL()(i, i));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double gap = std::abs(hurst[static_cast<std::size_t>(i)] - hurst[static_cast<std::size_t>(j)]);
      if (cfg.gamma == 0.0 && gap < cfg.identifiability_gap)
        throw NumericalError("estimate_correlation: Newton system is singular for pair (" + std::to_string(i) + ", " +
                             std::to_string(j) + "): |H_i - H_j| = " + std::to_string(gap) +
                             " leaves rho_ij unidentifiable from marginals; use gamma > 0");
      obj.pairs.emplace_back(i, j);
    }
  const auto np = static_cast<Eigen::Index>(obj.pairs.size());
  obj.penalty.resize(np);
  for (Eigen::Index a = 0; a < np; ++a) {
    const auto [i, j] = obj.pairs[static_cast<std::size_t>(a)];
    const double gap = std::abs(hurst[static_cast<std::size_t>(i)] - hurst[static_cast<std::size_t>(j)]);
    obj.penalty(a) = cfg.gamma / (gap + cfg.epsilon);
  }

  Vector x(np);
  for (Eigen::Index a = 0; a < np; ++a) x(a) = rho_hist(obj.pairs[static_cast<std::size_t>(a)].first, obj.pairs[static_cast<std::size_t>(a)].second);
  // Start inside the PD cone of the model covariance.
  while (!std::isfinite(obj.value(x))) x *= 0.9;

  CorrelationEstimate est;
  est.gamma = cfg.gamma;
  double f = obj.value(x);
  est.objective_trace.push_back(f);
  Vector grad;
  Matrix hess;
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    obj.derivatives(x, grad, hess);
    est.iterations = it + 1;
    if (grad.cwiseAbs().maxCoeff() <= cfg.tolerance) {
      est.converged = true;
      break;
    }
    Eigen::LLT<Matrix> llt(hess);
    Vector dir = llt.info() == Eigen::Success ? Vector(llt.solve(-grad)) : Vector(-grad);
    if (!(dir.dot(grad) < 0.0)) dir = -grad;
    // Newton decrement below rounding of f: take the full step and stop.
    if (-dir.dot(grad) < 1e-14 * std::max(std::abs(f), 1.0)) {
      const Vector trial = (x + dir).cwiseMax(-1.0).cwiseMin(1.0);
      if (std::isfinite(obj.value(trial))) x = trial;
      est.converged = true;
      break;
    }
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      Vector trial = x + t * dir;
      trial = trial.cwiseMax(-1.0).cwiseMin(1.0);
      const double ft = obj.value(trial);
      if (ft <= f + 1e-4 * t * dir.dot(grad)) {
        moved = ft < f || (trial - x).norm() == 0.0;
        x = trial;
        f = std::min(f, ft);
        break;
      }
      t *= 0.5;
    }
    est.objective_trace.push_back(f);
    if (!moved || t * dir.norm() < 1e-14) {
      est.converged = grad.cwiseAbs().maxCoeff() <= 1e-6;
      break;
    }
  }

  Matrix rho = Matrix::Identity(n, n);
  for (Eigen::Index a = 0; a < np; ++a) {
    const auto [i, j] = obj.pairs[static_cast<std::size_t>(a)];
    rho(i, j) = rho(j, i) = x(a);
  }
  est.rho = nearest_correlation(rho, &est.psd_repaired);
  est.condition = correlation_condition(est.rho);
  est.ci_halfwidth = Matrix::Zero(n, n);
  for (Eigen::Index a = 0; a < np; ++a) {
    const auto [i, j] = obj.pairs[static_cast<std::size_t>(a)];
    const double gap = std::abs(hurst[static_cast<std::size_t>(i)] - hurst[static_cast<std::size_t>(j)]);
    const double info = cfg.ci_constant * std::sqrt(static_cast<double>(cfg.strikes)) * (gap + cfg.epsilon);
    est.ci_halfwidth(i, j) = est.ci_halfwidth(j, i) = normal_quantile(0.975) / std::sqrt(info);
  }
  return est;
}

/// Realised covariance of log(S_T^i / S_0^i) across sample rows.
inline Matrix log_return_covariance(const Matrix& terminal, const std::vector<double>& spots) {
  require(terminal.cols() == static_cast<Eigen::Index>(spots.size()) && terminal.rows() >= 2,
          "log_return_covariance: shape mismatch");
  Matrix x(terminal.rows(), terminal.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    x.col(j) = (terminal.col(j) / spots[static_cast<std::size_t>(j)]).array().log().matrix();
  const Matrix c = x.rowwise() - x.colwise().mean();
  return c.transpose() * c / static_cast<double>(x.rows() - 1);
}

// ---------------------------------------------------------------------------
// Copula
// ---------------------------------------------------------------------------

struct CopulaConfig {
  std::size_t calibration_samples = 20000;
  std::uint64_t seed = 7;
};

namespace detail {

struct DiscreteQuantile {
  std::vector<double> atoms;  // sorted
  std::vector<double> cum;    // cumulative weights

  explicit DiscreteQuantile(const TiltedMeasure& m) {
    std::vector<std::size_t> order(m.atoms.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m.atoms[a] < m.atoms[b]; });
    double c = 0.0;
    for (std::size_t i : order) {
      if (m.weights[i] <= 0.0) continue;
      c += m.weights[i];
      atoms.push_back(m.atoms[i]);
      cum.push_back(c);
    }
    for (auto& v : cum) v /= c;
  }

  double operator()(double u) const {
    const auto it = std::lower_bound(cum.begin(), cum.end(), u);
    return atoms[std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), atoms.size() - 1)];
  }
};

}  // namespace detail

/// Gaussian-copula rank coupling of the marginal laws. The copula correlation
/// of each pair is root-found so that the log-price correlation hits the
/// target.
class RoughCopula {
public:
  RoughCopula(std::vector<TiltedMeasure> marginals, const Matrix& target, const CopulaConfig& cfg = {})
      : marginals_(std::move(marginals)), target_(target) {
    const auto n = static_cast<Eigen::Index>(marginals_.size());
    require(n >= 1, "build_copula: no marginals");
    require(target.rows() == n && target.cols() == n, "build_copula: correlation shape mismatch");
    require(cfg.calibration_samples >= 100, "build_copula: need at least 100 calibration samples");
    for (const auto& m : marginals_) {
      require(m.atoms.size() == m.weights.size() && !m.atoms.empty(), "build_copula: invalid marginal");
      for (double a : m.atoms) require(a > 0.0, "build_copula: marginal atoms must be positive");
      quantiles_.emplace_back(m);
    }
    bool target_repaired = false;
    const Matrix tgt = nearest_correlation(target, &target_repaired);
    // Common normals for every pair make the root find deterministic and smooth.
    const std::size_t ns = cfg.calibration_samples;
    std::vector<double> g1(ns), g2(ns);
    RandomStream rng(cfg.seed, 0);
    for (std::size_t k = 0; k < ns; ++k) {
      g1[k] = rng.normal();
      g2[k] = rng.normal();
    }
    gaussian_ = Matrix::Identity(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) {
        auto corr_at = [&](double r) { return log_correlation(static_cast<std::size_t>(i), static_cast<std::size_t>(j), r, g1, g2); };
        const double want = tgt(i, j);
        const double hi = corr_at(1.0), lo = corr_at(-1.0);
        double r;
        if (want >= hi) r = 1.0;
        else if (want <= lo) r = -1.0;
        else {
          std::uintmax_t max_it = 100;
          const auto root = boost::math::tools::toms748_solve(
              [&](double x) { return corr_at(x) - want; }, -1.0, 1.0, lo - want, hi - want,
              [](double a, double b) { return std::abs(b - a) < 1e-10; }, max_it);
          r = 0.5 * (root.first + root.second);
        }
        gaussian_(i, j) = gaussian_(j, i) = r;
      }
    bool repaired = false;
    gaussian_ = nearest_correlation(gaussian_, &repaired);
    psd_repaired_ = repaired || target_repaired;
    Eigen::SelfAdjointEigenSolver<Matrix> es(gaussian_);
    root_ = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  }

  std::size_t dimension() const { return marginals_.size(); }
  const std::vector<TiltedMeasure>& marginals() const { return marginals_; }
  const Matrix& target() const { return target_; }
  const Matrix& gaussian_correlation() const { return gaussian_; }
  bool psd_repaired() const { return psd_repaired_; }

  /// n x N matrix of joint draws of S_T.
  Matrix sample(std::size_t n, std::uint64_t seed) const {
    const auto d = static_cast<Eigen::Index>(marginals_.size());
    Matrix out(static_cast<Eigen::Index>(n), d);
    parallel_for(n, [&](std::size_t row) {
      RandomStream rng(seed, row);
      Vector g(d);
      for (Eigen::Index i = 0; i < d; ++i) g(i) = rng.normal();
      const Vector z = root_ * g;
      for (Eigen::Index i = 0; i < d; ++i)
        out(static_cast<Eigen::Index>(row), i) = quantiles_[static_cast<std::size_t>(i)](normal_cdf(z(i)));
    });
    return out;
  }

private:
  double log_correlation(std::size_t i, std::size_t j, double r, const std::vector<double>& g1,
                         const std::vector<double>& g2) const {
    const double c = std::sqrt(std::max(1.0 - r * r, 0.0));
    const std::size_t ns = g1.size();
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t k = 0; k < ns; ++k) {
      const double x = std::log(quantiles_[i](normal_cdf(g1[k])));
      const double y = std::log(quantiles_[j](normal_cdf(r * g1[k] + c * g2[k])));
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
    }
    const double m = static_cast<double>(ns);
    const double vx = sxx / m - (sx / m) * (sx / m), vy = syy / m - (sy / m) * (sy / m);
    if (vx <= 0.0 || vy <= 0.0) return 0.0;
    return (sxy / m - sx * sy / (m * m)) / std::sqrt(vx * vy);
  }

  std::vector<TiltedMeasure> marginals_;
  std::vector<detail::DiscreteQuantile> quantiles_;
  Matrix target_;
  Matrix gaussian_;
  Matrix root_;
  bool psd_repaired_ = false;
};

inline RoughCopula build_copula(std::vector<TiltedMeasure> marginals, const CorrelationEstimate& rho,
                                const CopulaConfig& cfg = {}) {
  return RoughCopula(std::move(marginals), rho.rho, cfg);
}

// ---------------------------------------------------------------------------
// Basket bounds
// ---------------------------------------------------------------------------

struct BasketSpec {
  std::vector<double> weights;
  double strike = 0.0;

  void validate(std::size_t n_assets) const {
    require(weights.size() == n_assets, "BasketSpec: weights must match the asset count");
    bool any = false;
    for (double w : weights) {
      require(std::isfinite(w), "BasketSpec: weights must be finite");
      any = any || w != 0.0;
    }
    require(any, "BasketSpec: at least one weight must be non-zero");
    require(std::isfinite(strike) && strike >= 0.0, "BasketSpec: strike must be finite and non-negative");
  }

  double payoff(const double* s) const {
    double b = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) b += weights[i] * s[i];
    return std::max(b - strike, 0.0);
  }
};

struct BasketConfig {
  std::size_t samples = 30000;
  std::uint64_t seed = 11;
  double kl_radius = 0.05;
  TiltOptions tilt{};
};

struct BasketBoundResult {
  BoundResult bound;
  double relative_spread = 0.0;  // (upper - lower) / mid
  double forward = 0.0;          // sum_i w_i F_i
};

/// Bounds of the basket call over the KL ball around the copula's joint law,
/// under per-asset martingale and market constraints. A basket with a single
/// non-zero weight is priced by the single-asset bounds on that marginal.
inline BasketBoundResult basket_bounds(const RoughCopula& copula, const BasketSpec& basket,
                                       const std::vector<MarketSlice>& chains, const BasketConfig& cfg = {}) {
  const std::size_t n = copula.dimension();
  basket.validate(n);
  require(chains.size() == n, "basket_bounds: one chain per asset is required");
  const double maturity = chains.front().maturity;
  for (const auto& c : chains) {
    c.validate();
    require(std::abs(c.maturity - maturity) < 1e-12, "basket_bounds: chains must share a maturity");
  }
  const double rate = chains.front().rate;
  const double df = std::exp(-rate * maturity);
  BasketBoundResult out;
  for (std::size_t i = 0; i < n; ++i) out.forward += basket.weights[i] * chains[i].spot * std::exp(rate * maturity);

  std::size_t nonzero = 0, which = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (basket.weights[i] != 0.0) {
      ++nonzero;
      which = i;
    }
  if (nonzero == 1) {
    const auto& m = copula.marginals()[which];
    const double w = basket.weights[which];
    require(w > 0.0, "basket_bounds: a single short leg is not a call on the asset");
    TerminalDistribution prior{chains[which].spot, maturity, rate, m.atoms, m.weights};
    BoundsConfig bc;
    bc.kl_radius = cfg.kl_radius;
    bc.tilt = cfg.tilt;
    const double k = basket.strike / w;
    out.bound = [&] {
      auto b = bounds(prior, chains[which], [k](double s) { return std::max(s - k, 0.0); }, k, bc);
      b.lower *= w;
      b.upper *= w;
      b.mid *= w;
      b.strike = basket.strike;
      return b;
    }();
  } else {
    const Matrix draws = copula.sample(cfg.samples, cfg.seed);
    const auto ns = static_cast<std::size_t>(draws.rows());
    std::vector<double> prior(ns, 1.0 / static_cast<double>(ns)), g(ns);
    for (std::size_t r = 0; r < ns; ++r) {
      double b = 0.0;
      for (std::size_t i = 0; i < n; ++i) b += basket.weights[i] * draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
      g[r] = std::max(b - basket.strike, 0.0);
    }
    std::vector<PayoffConstraint> cons;
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto col = draws.col(static_cast<Eigen::Index>(i));
      std::vector<double> s(col.data(), col.data() + col.size());
      const double fwd = chains[i].spot * std::exp(rate * maturity);
      scale += std::abs(basket.weights[i]) * fwd;
      cons.push_back({"martingale " + std::to_string(i), s, fwd, 0.0});
      for (std::size_t k = 0; k < chains[i].size(); ++k)
        cons.push_back({"asset " + std::to_string(i) + " call K=" + std::to_string(chains[i].strikes[k]),
                        call_payoff(s, chains[i].strikes[k]), chains[i].prices[k] / df, chains[i].noise[k] / df});
    }
    TiltOptions opt = cfg.tilt;
    opt.kl_radius = cfg.kl_radius;
    opt.allow_saturation = true;
    opt.target_payoff = g;
    opt.direction = Direction::None;
    const auto mid = gibbs_tilt(prior, cons, scale, opt);
    opt.direction = Direction::Upper;
    const auto up = gibbs_tilt(prior, cons, scale, opt);
    opt.direction = Direction::Lower;
    const auto dn = gibbs_tilt(prior, cons, scale, opt);
    auto expect = [&](const std::vector<double>& q) {
      double s = 0.0;
      for (std::size_t r = 0; r < ns; ++r) s += q[r] * g[r];
      return df * s;
    };
    out.bound.strike = basket.strike;
    out.bound.mid = expect(mid.weights);
    out.bound.upper = expect(up.weights);
    out.bound.lower = expect(dn.weights);
    out.bound.kl_upper = up.kl;
    out.bound.kl_lower = dn.kl;
    out.bound.dual_gradient_norm = std::max({mid.dual_gradient_norm, up.dual_gradient_norm, dn.dual_gradient_norm});
    for (const auto* sol : {&up, &dn})
      for (const auto& c : cons) {
        double e = 0.0;
        for (std::size_t r = 0; r < ns; ++r) e += sol->weights[r] * c.values[r];
        out.bound.max_constraint_residual =
            std::max(out.bound.max_constraint_residual, std::max(std::abs(e - c.target) - c.tolerance, 0.0));
      }
  }
  out.relative_spread = out.bound.mid > 0.0 ? (out.bound.upper - out.bound.lower) / out.bound.mid
                                            : std::numeric_limits<double>::infinity();
  return out;
}

/// Slope of log W_T on log T.
inline LinearFit width_decay(const std::vector<double>& maturities, const std::vector<double>& widths) {
  require(maturities.size() == widths.size() && maturities.size() >= 2, "width_decay: need two or more points");
  std::vector<double> x, y;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    require(maturities[i] > 0.0 && widths[i] > 0.0, "width_decay: maturities and widths must be positive");
    x.push_back(std::log(maturities[i]));
    y.push_back(std::log(widths[i]));
  }
  return linear_fit(x, y);
}

}  // namespace rmot
