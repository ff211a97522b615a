#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "connlab/errors.hpp"
#include "connlab/graph.hpp"
#include "connlab/rng.hpp"

namespace connlab {

enum class WeightMode { kDense, kStructured };

/// Number of n-wide column blocks in h_l: 2^(l+1).
constexpr int block_count(int layer) { return 1 << (layer + 1); }

/// Width of h_l: 2^(l+1) * n.
constexpr int hidden_dim(int layer, int n) { return block_count(layer) * n; }

/// Side length of the per-layer channel matrices A_l, B_l: 2^l.
constexpr int channel_dim(int layer) { return 1 << layer; }

struct StructuredLayer {
  Matrix a;  // I-channel coefficients
  Matrix b;  // J-channel coefficients
};

/// Weights of a disentangled transformer. `weights[l-1]` holds W_l of size
/// d_{l-1} x d_{l-1}. In structured mode `structured[l-1]` holds (A_l, B_l)
/// and `weights` is kept equal to their Kronecker expansion.
struct ModelParams {
  int depth = 1;
  int n = 8;
  WeightMode mode = WeightMode::kDense;
  bool nonneg = false;
  std::vector<Matrix> weights;
  std::vector<StructuredLayer> structured;

  static ModelParams zeros(int depth, int n, WeightMode mode = WeightMode::kDense) {
    if (depth < 1) throw ConfigError("model depth must be >= 1");
    if (n < 1 || n > kMaxNodes) throw ConfigError("model n out of range");
    ModelParams p;
    p.depth = depth;
    p.n = n;
    p.mode = mode;
    for (int l = 1; l <= depth; ++l) {
      const int d = hidden_dim(l - 1, n);
      p.weights.push_back(Matrix::Zero(d, d));
      if (mode == WeightMode::kStructured) {
        const int k = channel_dim(l);
        p.structured.push_back({Matrix::Zero(k, k), Matrix::Zero(k, k)});
      }
    }
    return p;
  }

  bool is_structured() const noexcept { return mode == WeightMode::kStructured; }
};

inline std::string to_string(WeightMode m) { return m == WeightMode::kDense ? "dense" : "structured"; }

inline WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "dense") return WeightMode::kDense;
  if (s == "structured") return WeightMode::kStructured;
  throw ConfigError("unknown weight mode '" + s + "'");
}

/// A (x) I_n + B (x) J_n.
inline Matrix materialize(const Matrix& a, const Matrix& b, int n) {
  if (a.rows() != a.cols() || b.rows() != a.rows() || b.cols() != a.cols()) {
    throw ShapeError("materialize: A and B must be equal square matrices");
  }
  const auto k = a.rows();
  Matrix w(k * n, k * n);
  for (Eigen::Index u = 0; u < k; ++u) {
    for (Eigen::Index v = 0; v < k; ++v) {
      auto block = w.block(u * n, v * n, n, n);
      block.setConstant(b(u, v));
      block.diagonal().array() += a(u, v);
    }
  }
  return w;
}

/// Rebuilds the dense weights from the structured pairs.
inline void sync_weights(ModelParams& p) {
  if (!p.is_structured()) return;
  for (int l = 0; l < p.depth; ++l) {
    p.weights[l] = materialize(p.structured[l].a, p.structured[l].b, p.n);
  }
}

/// Dense copy of structured params.
inline ModelParams materialize(const ModelParams& p) {
  ModelParams out = p;
  sync_weights(out);
  out.mode = WeightMode::kDense;
  out.structured.clear();
  return out;
}

inline void check_shapes(const ModelParams& p) {
  if (static_cast<int>(p.weights.size()) != p.depth) throw ShapeError("weights: wrong layer count");
  for (int l = 1; l <= p.depth; ++l) {
    const int d = hidden_dim(l - 1, p.n);
    const auto& w = p.weights[l - 1];
    if (w.rows() != d || w.cols() != d) {
      throw ShapeError("W_" + std::to_string(l) + " must be " + std::to_string(d) + "x" + std::to_string(d));
    }
    if (p.is_structured()) {
      const int k = channel_dim(l);
      if (static_cast<int>(p.structured.size()) != p.depth) throw ShapeError("structured: wrong layer count");
      const auto& s = p.structured[l - 1];
      if (s.a.rows() != k || s.a.cols() != k || s.b.rows() != k || s.b.cols() != k) {
        throw ShapeError("A_l/B_l must be " + std::to_string(k) + "x" + std::to_string(k));
      }
    }
  }
}

inline bool all_nonneg(const ModelParams& p) {
  for (const auto& w : p.weights) {
    if ((w.array() < 0.0).any()) return false;
  }
  return true;
}

/// Entrywise max(., 0). In structured mode both channels are clamped, which
/// keeps the materialized weight nonnegative.
inline ModelParams clamp_nonneg(ModelParams p) {
  for (auto& w : p.weights) w = w.cwiseMax(0.0);
  for (auto& s : p.structured) {
    s.a = s.a.cwiseMax(0.0);
    s.b = s.b.cwiseMax(0.0);
  }
  sync_weights(p);
  return p;
}

// ---------------------------------------------------------------------------
// Initialization

struct IdentityInit {};
struct UniformInit {
  double lo = 0.0;
  double hi = 0.01;
};
/// Entries ~ N(mean, std^2); with scale_by_sqrt_dim the std is divided by sqrt(d_{l-1}).
struct GaussianInit {
  double mean = 0.0;
  double std = 0.02;
  bool scale_by_sqrt_dim = true;
};
/// Structured, nonnegative: A_l ~ U[0, scale), B_l = 0.
struct StructuredZeroBInit {
  double scale = 0.01;
};

using InitScheme = std::variant<IdentityInit, UniformInit, GaussianInit, StructuredZeroBInit>;

inline ModelParams init_params(int depth, int n, const InitScheme& scheme, std::uint64_t seed) {
  auto engine = make_engine(seed);
  struct Visitor {
    int depth;
    int n;
    Engine& engine;
    ModelParams operator()(const IdentityInit&) const {
      auto p = ModelParams::zeros(depth, n);
      for (auto& w : p.weights) w.setIdentity();
      return p;
    }
    ModelParams operator()(const UniformInit& s) const {
      if (!(s.lo < s.hi)) throw ConfigError("uniform init: need lo < hi");
      auto p = ModelParams::zeros(depth, n);
      std::uniform_real_distribution<double> dist(s.lo, s.hi);
      for (auto& w : p.weights) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
          for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(engine);
        }
      }
      return p;
    }
    ModelParams operator()(const GaussianInit& s) const {
      auto p = ModelParams::zeros(depth, n);
      for (auto& w : p.weights) {
        const double sd = s.scale_by_sqrt_dim ? s.std / std::sqrt(static_cast<double>(w.rows())) : s.std;
        std::normal_distribution<double> dist(s.mean, sd);
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
          for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(engine);
        }
      }
      return p;
    }
    ModelParams operator()(const StructuredZeroBInit& s) const {
      auto p = ModelParams::zeros(depth, n, WeightMode::kStructured);
      p.nonneg = true;
      std::uniform_real_distribution<double> dist(0.0, s.scale);
      for (auto& layer : p.structured) {
        for (Eigen::Index i = 0; i < layer.a.rows(); ++i) {
          for (Eigen::Index j = 0; j < layer.a.cols(); ++j) layer.a(i, j) = dist(engine);
        }
      }
      sync_weights(p);
      return p;
    }
  };
  return std::visit(Visitor{depth, n, engine}, scheme);
}

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardTrace {
  std::vector<Matrix> hidden;  // h_0..h_L
  std::vector<Matrix> scores;  // pre-ReLU h_{l-1} W_l h_{l-1}^T, l = 1..L
  Matrix output;               // Z = h_L W_O^T
};

inline Matrix input_hidden(const AdjacencyMatrix& adjacency) {
  const int n = adjacency.n();
  Matrix h0(n, 2 * n);
  h0.leftCols(n).setIdentity();
  h0.rightCols(n) = adjacency.values;
  return h0;
}

/// (1/n) ReLU(h W h^T) h.
inline Matrix attn(const Matrix& h, const Matrix& w) {
  if (w.rows() != h.cols() || w.cols() != h.cols()) throw ShapeError("attn: W must be d x d for h of width d");
  const double inv_n = 1.0 / static_cast<double>(h.rows());
  const Matrix scores = h * w * h.transpose();
  return (scores.cwiseMax(0.0) * h) * inv_n;
}

/// h W_O^T with W_O = [I_n, ..., I_n]: the sum of the n-wide column blocks.
inline Matrix block_sum(const Matrix& h, int n) {
  if (h.cols() % n != 0) throw ShapeError("block_sum: width is not a multiple of n");
  Matrix z = h.leftCols(n);
  for (Eigen::Index c = n; c < h.cols(); c += n) z += h.middleCols(c, n);
  return z;
}

inline ForwardTrace forward(const ModelParams& params, const AdjacencyMatrix& adjacency) {
  if (adjacency.n() != params.n || adjacency.values.cols() != params.n) {
    throw ShapeError("forward: adjacency is " + std::to_string(adjacency.n()) + "x" +
                     std::to_string(adjacency.values.cols()) + " but model n=" + std::to_string(params.n));
  }
  check_shapes(params);
  const int n = params.n;
  const double inv_n = 1.0 / static_cast<double>(n);
  ForwardTrace t;
  t.hidden.reserve(params.depth + 1);
  t.scores.reserve(params.depth);
  t.hidden.push_back(input_hidden(adjacency));
  for (int l = 1; l <= params.depth; ++l) {
    const Matrix& h = t.hidden.back();
    Matrix s = h * params.weights[l - 1] * h.transpose();
    Matrix next(n, 2 * h.cols());
    next.leftCols(h.cols()) = h;
    next.rightCols(h.cols()).noalias() = (s.cwiseMax(0.0) * h) * inv_n;
    t.scores.push_back(std::move(s));
    t.hidden.push_back(std::move(next));
  }
  t.output = block_sum(t.hidden.back(), n);
  if (!t.output.allFinite()) throw NumericError("forward: non-finite output (overflow)");
  return t;
}

inline Matrix model_output(const ModelParams& params, const AdjacencyMatrix& adjacency) {
  return forward(params, adjacency).output;
}

}  // namespace connlab
