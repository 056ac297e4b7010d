#pragma once

// Vector-valued adaptive Gauss-Kronrod (G7/K15) quadrature.
//
// The integrand is evaluated in batches: one call receives every node of an
// interval and returns a (n_outputs x n_nodes) matrix, so expensive shared
// work (a characteristic function evaluated once for all strikes) is done
// once per node. The error of an interval is the largest |K15 - G7| over the
// outputs.

#include "rmot/core.hpp"

#include <array>
#include <queue>

namespace rmot {

namespace detail {
inline constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
inline constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
// Gauss weights for kKronrodNodes[1], [3], [5], [7].
inline constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};
}  // namespace detail

/// A frozen set of nodes and weights; integrating on it is a plain weighted sum.
struct QuadratureMesh {
  std::vector<double> nodes;
  std::vector<double> weights;
};

struct QuadratureResult {
  Vector value;
  double error_estimate = 0.0;
  std::size_t intervals = 0;
  QuadratureMesh mesh;
};

class QuadratureError : public NumericalError {
public:
  QuadratureError(const std::string& what, double achieved)
      : NumericalError(what + " (achieved error " + std::to_string(achieved) + ")"),
        achieved_error(achieved) {}
  double achieved_error;
};

struct GaussKronrodConfig {
  double abs_tol = 1e-10;
  std::size_t max_subdivisions = 400;
};

namespace detail {

struct GkInterval {
  double a, b;
  Vector kronrod;
  double error;
  bool operator<(const GkInterval& o) const { return error < o.error; }
};

inline std::array<double, 15> gk_nodes(double a, double b) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  std::array<double, 15> x{};
  for (int i = 0; i < 7; ++i) {
    x[2 * i] = c - h * kKronrodNodes[i];
    x[2 * i + 1] = c + h * kKronrodNodes[i];
  }
  x[14] = c;
  return x;
}

template <class BatchFn>
GkInterval gk_interval(BatchFn& fn, double a, double b) {
  const auto x = gk_nodes(a, b);
  const Matrix f = fn(std::vector<double>(x.begin(), x.end()));
  const double h = 0.5 * (b - a);
  Vector k = kKronrodWeights[7] * f.col(14);
  Vector g = kGaussWeights[3] * f.col(14);
  for (int i = 0; i < 7; ++i) {
    const Vector pair = f.col(2 * i) + f.col(2 * i + 1);
    k += kKronrodWeights[i] * pair;
    if (i % 2 == 1) g += kGaussWeights[i / 2] * pair;
  }
  k *= h;
  g *= h;
  return {a, b, k, (k - g).cwiseAbs().maxCoeff()};
}

inline void append_mesh(QuadratureMesh& mesh, double a, double b) {
  const auto x = gk_nodes(a, b);
  const double h = 0.5 * (b - a);
  for (int i = 0; i < 7; ++i) {
    mesh.nodes.push_back(x[2 * i]);
    mesh.weights.push_back(h * kKronrodWeights[i]);
    mesh.nodes.push_back(x[2 * i + 1]);
    mesh.weights.push_back(h * kKronrodWeights[i]);
  }
  mesh.nodes.push_back(x[14]);
  mesh.weights.push_back(h * kKronrodWeights[7]);
}

}  // namespace detail

/// Adaptive integration over [a, b].
template <class BatchFn>
QuadratureResult integrate_gk(BatchFn&& fn, double a, double b, const GaussKronrodConfig& cfg = {}) {
  std::priority_queue<detail::GkInterval> queue;
  queue.push(detail::gk_interval(fn, a, b));
  double total_error = queue.top().error;
  std::size_t count = 1;
  while (total_error > cfg.abs_tol) {
    if (count >= cfg.max_subdivisions)
      throw QuadratureError("integrate_gk: subdivision limit reached", total_error);
    detail::GkInterval worst = queue.top();
    queue.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    auto left = detail::gk_interval(fn, worst.a, mid);
    auto right = detail::gk_interval(fn, mid, worst.b);
    total_error += left.error + right.error - worst.error;
    queue.push(std::move(left));
    queue.push(std::move(right));
    ++count;
  }
  QuadratureResult out;
  out.intervals = count;
  out.error_estimate = total_error;
  std::vector<detail::GkInterval> all;
  while (!queue.empty()) {
    all.push_back(queue.top());
    queue.pop();
  }
  std::sort(all.begin(), all.end(), [](const auto& l, const auto& r) { return l.a < r.a; });
  out.value = Vector::Zero(all.front().kronrod.size());
  for (const auto& iv : all) {
    out.value += iv.kronrod;
    detail::append_mesh(out.mesh, iv.a, iv.b);
  }
  return out;
}

/// Integration over [0, inf): consecutive segments [0,U], [U,2U], [2U,4U], ...
/// are integrated adaptively until a segment contributes less than the
/// tolerance.
template <class BatchFn>
QuadratureResult integrate_gk_half_line(BatchFn&& fn, double first_segment,
                                        const GaussKronrodConfig& cfg = {},
                                        std::size_t max_segments = 40) {
  require(first_segment > 0.0, "integrate_gk_half_line: first segment must be positive");
  QuadratureResult out;
  double a = 0.0, b = first_segment;
  GaussKronrodConfig seg_cfg = cfg;
  seg_cfg.abs_tol = 0.25 * cfg.abs_tol;
  for (std::size_t s = 0; s < max_segments; ++s) {
    QuadratureResult seg = integrate_gk(fn, a, b, seg_cfg);
    if (out.value.size() == 0) out.value = Vector::Zero(seg.value.size());
    out.value += seg.value;
    out.error_estimate += seg.error_estimate;
    out.intervals += seg.intervals;
    out.mesh.nodes.insert(out.mesh.nodes.end(), seg.mesh.nodes.begin(), seg.mesh.nodes.end());
    out.mesh.weights.insert(out.mesh.weights.end(), seg.mesh.weights.begin(), seg.mesh.weights.end());
    if (s > 0 && seg.value.cwiseAbs().maxCoeff() < seg_cfg.abs_tol) return out;
    a = b;
    b *= 2.0;
  }
  throw QuadratureError("integrate_gk_half_line: tail did not decay", out.error_estimate);
}

/// Weighted sum over a frozen mesh.
template <class BatchFn>
Vector integrate_on_mesh(BatchFn&& fn, const QuadratureMesh& mesh) {
  const Matrix f = fn(mesh.nodes);
  return f * Eigen::Map<const Vector>(mesh.weights.data(), static_cast<Eigen::Index>(mesh.weights.size()));
}

}  // namespace rmot
