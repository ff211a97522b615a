#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "connlab/distributions.hpp"
#include "connlab/grad.hpp"
#include "connlab/graph.hpp"
#include "connlab/model.hpp"
#include "connlab/rng.hpp"

namespace testing_support {

using connlab::Graph;
using connlab::Matrix;

/// Boolean power by repeated multiplication, no squaring.
inline connlab::BitMatrix naive_power(const connlab::BitMatrix& a, int k) {
  auto out = connlab::BitMatrix::identity(a.size());
  for (int i = 0; i < k; ++i) out = out * a;
  return out;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, connlab::Engine& engine, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(engine);
  }
  return m;
}

inline connlab::ModelParams random_dense(int depth, int n, connlab::Engine& engine, double lo, double hi) {
  auto p = connlab::ModelParams::zeros(depth, n);
  for (auto& w : p.weights) w = random_matrix(w.rows(), w.cols(), engine, lo, hi);
  return p;
}

inline connlab::ModelParams random_structured(int depth, int n, connlab::Engine& engine, double lo, double hi) {
  auto p = connlab::ModelParams::zeros(depth, n, connlab::WeightMode::kStructured);
  for (auto& s : p.structured) {
    s.a = random_matrix(s.a.rows(), s.a.cols(), engine, lo, hi);
    s.b = random_matrix(s.b.rows(), s.b.cols(), engine, lo, hi);
  }
  p.nonneg = lo >= 0.0;
  connlab::sync_weights(p);
  return p;
}

inline Graph random_connected(int n, double p, std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    auto g = connlab::sample_er(n, p, connlab::derive_seed(seed, attempt));
    if (connlab::connectivity_bits(g).count() == n * n) return g;
  }
}

inline double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace testing_support


namespace testing_support {

struct GradCheck {
  double max_rel_error = 0.0;
  long coordinates = 0;
};

using Wide = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

/// Independent extended-precision forward pass, used by finite-difference
/// oracles so that roundoff in differences stays far below the step.
inline Wide wide_output(const std::vector<Wide>& weights, const Matrix& adjacency) {
  const auto n = adjacency.rows();
  Wide h(n, 2 * n);
  h.leftCols(n) = Wide::Identity(n, n);
  h.rightCols(n) = adjacency.cast<long double>();
  for (const auto& w : weights) {
    const Wide s = (h * w * h.transpose()).cwiseMax(0.0L);
    const Wide next_block = s * h / static_cast<long double>(n);
    Wide next(n, 2 * h.cols());
    next << h, next_block;
    h = std::move(next);
  }
  Wide z = Wide::Zero(n, n);
  for (Eigen::Index c = 0; c < h.cols(); c += n) z += h.middleCols(c, n);
  return z;
}

inline std::vector<Wide> widen(const connlab::ModelParams& params) {
  std::vector<Wide> out;
  for (const auto& w : params.weights) out.push_back(w.cast<long double>());
  return out;
}

inline long double wide_loss(const std::vector<Wide>& weights, const connlab::Graph& g,
                             const connlab::LinkParams& lp) {
  const int n = g.n();
  const Matrix r = connlab::connectivity(g).values;
  const Wide z = wide_output(weights, connlab::augmented_adjacency(g).values);
  long double total = 0.0L;
  const long double alpha = lp.alpha;
  const long double keep = 1.0L - static_cast<long double>(lp.epsilon);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const long double zz = z(i, j);
      if (r(i, j) > 0.0) {
        total -= std::log1p(-keep * std::exp(-alpha * zz));
      } else {
        total -= std::log(keep) - alpha * zz;
      }
    }
  }
  return total;
}

/// Central differences with per-coordinate step 1e-6 * max(1, |w|) on the
/// extended-precision loss. The relative error of a coordinate is
/// |g - fd| / max(|g|, |fd|, floor) where floor = 1e-6 * max_k |fd_k| keeps
/// coordinates that are exactly or numerically zero from dividing noise by noise.
inline GradCheck check_gradient(const connlab::ModelParams& params, const connlab::Graph& g,
                                const connlab::LinkParams& lp) {
  using namespace connlab;
  const auto analytic = backward(params, g, lp).grads;
  std::vector<Wide> wide = widen(params);
  std::vector<Matrix> numeric;
  double scale = 0.0;
  for (int l = 0; l < params.depth; ++l) {
    Matrix fd(params.weights[l].rows(), params.weights[l].cols());
    for (Eigen::Index k = 0; k < fd.size(); ++k) {
      const long double w = wide[l](k);
      const long double step = 1e-6L * std::max(1.0L, std::abs(w));
      wide[l](k) = w + step;
      const long double plus = wide_loss(wide, g, lp);
      wide[l](k) = w - step;
      const long double minus = wide_loss(wide, g, lp);
      wide[l](k) = w;
      fd(k) = static_cast<double>((plus - minus) / (2.0L * step));
    }
    scale = std::max(scale, fd.cwiseAbs().maxCoeff());
    numeric.push_back(std::move(fd));
  }
  GradCheck out;
  const double floor = std::max(1e-6 * scale, 1e-12);
  for (int l = 0; l < params.depth; ++l) {
    for (Eigen::Index k = 0; k < numeric[l].size(); ++k) {
      const double a = analytic.dw[l](k);
      const double f = numeric[l](k);
      const double denom = std::max({std::abs(a), std::abs(f), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - f) / denom);
      ++out.coordinates;
    }
  }
  return out;
}

}  // namespace testing_support
