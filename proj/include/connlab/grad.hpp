#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "connlab/channels.hpp"
#include "connlab/errors.hpp"
#include "connlab/graph.hpp"
#include "connlab/model.hpp"
#include "connlab/permutation.hpp"

namespace connlab {

/// phi_eps(z) = 1 - (1 - eps) exp(-alpha z).
struct LinkParams {
  double alpha = 1.0;
  double epsilon = 1e-4;

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("link: alpha must be > 0");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("link: epsilon must lie in (0,1)");
  }
};

inline double link(double z, const LinkParams& lp) {
  if (z < 0.0) throw NumericError("link: negative score " + std::to_string(z));
  // eps + (1 - eps)(1 - e^{-alpha z}); exact at z = 0.
  return lp.epsilon - (1.0 - lp.epsilon) * std::expm1(-lp.alpha * z);
}

/// Entrywise Bernoulli cross-entropy of phi_eps(Z) against R, summed over all pairs.
inline double loss(const Matrix& z, const Matrix& r, const LinkParams& lp) {
  if (z.rows() != r.rows() || z.cols() != r.cols()) throw ShapeError("loss: Z and R differ in shape");
  if (!z.allFinite()) throw NumericError("loss: non-finite score");
  const double log_keep = std::log1p(-lp.epsilon);
  double total = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double zi = z(i, j);
      if (zi < 0.0) throw NumericError("loss: negative score");
      if (r(i, j) > 0.5) {
        total -= std::log1p(-(1.0 - lp.epsilon) * std::exp(-lp.alpha * zi));
      } else {
        total -= log_keep - lp.alpha * zi;  // log(1 - phi) = log(1-eps) - alpha z
      }
    }
  }
  return total;
}

/// dL/dZ = alpha (1 - R / phi_eps(Z)).
inline Matrix loss_grad_z(const Matrix& z, const Matrix& r, const LinkParams& lp) {
  if (z.rows() != r.rows() || z.cols() != r.cols()) throw ShapeError("loss_grad_z: Z and R differ in shape");
  Matrix g(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      g(i, j) = lp.alpha * (1.0 - r(i, j) / link(z(i, j), lp));
    }
  }
  return g;
}

/// Per-layer gradients; dA/dB are filled for structured params.
struct GradientSet {
  std::vector<Matrix> dw;
  std::vector<Matrix> da;
  std::vector<Matrix> db;

  static GradientSet zeros_like(const ModelParams& p) {
    GradientSet g;
    for (const auto& w : p.weights) g.dw.push_back(Matrix::Zero(w.rows(), w.cols()));
    for (const auto& s : p.structured) {
      g.da.push_back(Matrix::Zero(s.a.rows(), s.a.cols()));
      g.db.push_back(Matrix::Zero(s.b.rows(), s.b.cols()));
    }
    return g;
  }

  GradientSet& operator+=(const GradientSet& o) {
    for (std::size_t l = 0; l < dw.size(); ++l) dw[l] += o.dw[l];
    for (std::size_t l = 0; l < da.size(); ++l) {
      da[l] += o.da[l];
      db[l] += o.db[l];
    }
    return *this;
  }

  GradientSet& operator*=(double s) {
    for (auto& m : dw) m *= s;
    for (auto& m : da) m *= s;
    for (auto& m : db) m *= s;
    return *this;
  }
};

/// Contracts a dense layer gradient against the Kronecker basis:
/// dA[p][q] = <dW, E_pq (x) I>, dB[p][q] = <dW, E_pq (x) J>.
inline void contract_structured(const Matrix& dw, int n, Matrix& da, Matrix& db) {
  const auto k = dw.rows() / n;
  da.resize(k, k);
  db.resize(k, k);
  for (Eigen::Index p = 0; p < k; ++p) {
    for (Eigen::Index q = 0; q < k; ++q) {
      const auto block = dw.block(p * n, q * n, n, n);
      da(p, q) = block.trace();
      db(p, q) = block.sum();
    }
  }
}

struct LossAndGrad {
  double loss = 0.0;
  GradientSet grads;
};

/// Reverse-mode pass through the disentangled recursion from an existing trace.
/// ReLU uses subgradient 0 where the score is exactly zero.
inline GradientSet backward_from_trace(const ModelParams& params, const ForwardTrace& trace, const Matrix& dz) {
  const int n = params.n;
  const double inv_n = 1.0 / static_cast<double>(n);
  GradientSet g;
  g.dw.resize(params.depth);

  // dL/dh_L: every n-wide block receives dL/dZ.
  const int width = static_cast<int>(trace.hidden.back().cols());
  Matrix dh(n, width);
  for (int c = 0; c < width; c += n) dh.middleCols(c, n) = dz;

  for (int l = params.depth; l >= 1; --l) {
    const Matrix& h = trace.hidden[l - 1];
    const Matrix& s = trace.scores[l - 1];
    const Matrix& w = params.weights[l - 1];
    const auto d = h.cols();
    const Matrix da = dh.rightCols(d);

    Matrix ds = (da * h.transpose()) * inv_n;
    ds = (s.array() > 0.0).select(ds, 0.0);
    const Matrix dsh = ds * h;
    g.dw[l - 1].noalias() = h.transpose() * dsh;

    if (l > 1) {
      Matrix dprev = dh.leftCols(d);
      dprev.noalias() += (s.cwiseMax(0.0) * inv_n).transpose() * da;
      dprev.noalias() += dsh * w.transpose();
      dprev.noalias() += ds.transpose() * (h * w);
      dh = std::move(dprev);
    }
  }

  if (params.is_structured()) {
    g.da.resize(params.depth);
    g.db.resize(params.depth);
    for (int l = 0; l < params.depth; ++l) contract_structured(g.dw[l], n, g.da[l], g.db[l]);
  }
  for (const auto& m : g.dw) {
    if (!m.allFinite()) throw NumericError("backward: non-finite gradient");
  }
  return g;
}

inline LossAndGrad backward(const ModelParams& params, const AdjacencyMatrix& adjacency, const Matrix& r,
                            const LinkParams& lp) {
  const auto trace = forward(params, adjacency);
  LossAndGrad out;
  out.loss = loss(trace.output, r, lp);
  out.grads = backward_from_trace(params, trace, loss_grad_z(trace.output, r, lp));
  return out;
}

inline LossAndGrad backward(const ModelParams& params, const Graph& g, const LinkParams& lp) {
  return backward(params, augmented_adjacency(g), connectivity(g).values, lp);
}

/// Allocation-free forward + reverse pass for batch training. Computes the
/// same quantities as backward() but adds dW straight into caller-owned
/// accumulators; buffers are sized once per (depth, n).
class GradientWorkspace {
 public:
  GradientWorkspace(int depth, int n) : depth_(depth), n_(n) {
    for (int l = 0; l <= depth; ++l) hidden_.emplace_back(n, n * (2 << l));
    for (int l = 0; l < depth; ++l) {
      hw_.emplace_back(n, n * (2 << l));
      scores_.emplace_back(n, n);
    }
    const int width = n * (2 << depth);
    dh_.resize(n, width);
    dprev_.resize(n, width);
    z_.resize(n, n);
    dz_.resize(n, n);
    ds_.resize(n, n);
    dsh_.resize(n, width / 2);
  }

  /// Returns the summed loss of one graph and adds its dW_l into dw[l].
  double accumulate(const ModelParams& params, const Matrix& adjacency, const Matrix& reach, const LinkParams& lp,
                    std::vector<Matrix>& dw) {
    const int n = n_;
    const double inv_n = 1.0 / static_cast<double>(n);
    hidden_[0].leftCols(n).setIdentity();
    hidden_[0].rightCols(n) = adjacency;
    for (int l = 1; l <= depth_; ++l) {
      const Matrix& h = hidden_[l - 1];
      const auto d = h.cols();
      hw_[l - 1].noalias() = h * params.weights[l - 1];
      scores_[l - 1].noalias() = hw_[l - 1] * h.transpose();
      hidden_[l].leftCols(d) = h;
      hidden_[l].rightCols(d).noalias() = (scores_[l - 1].cwiseMax(0.0) * inv_n) * h;
    }
    const Matrix& top = hidden_[depth_];
    z_ = top.leftCols(n);
    for (Eigen::Index c = n; c < top.cols(); c += n) z_ += top.middleCols(c, n);
    if (!z_.allFinite()) throw NumericError("forward: non-finite output (overflow)");

    const double log_keep = std::log1p(-lp.epsilon);
    double total = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double zi = z_(i, j);
        if (reach(i, j) > 0.5) {
          const double miss = (1.0 - lp.epsilon) * std::exp(-lp.alpha * zi);
          total -= std::log1p(-miss);
          dz_(i, j) = lp.alpha * (1.0 - 1.0 / (1.0 - miss));
        } else {
          total -= log_keep - lp.alpha * zi;
          dz_(i, j) = lp.alpha;
        }
      }
    }

    auto width = top.cols();
    for (Eigen::Index c = 0; c < width; c += n) dh_.middleCols(c, n) = dz_;
    for (int l = depth_; l >= 1; --l) {
      const Matrix& h = hidden_[l - 1];
      const Matrix& s = scores_[l - 1];
      const auto d = h.cols();
      const auto da = dh_.middleCols(d, d);
      ds_.noalias() = (da * inv_n) * h.transpose();
      ds_ = (s.array() > 0.0).select(ds_, 0.0);
      auto dsh = dsh_.leftCols(d);
      dsh.noalias() = ds_ * h;
      dw[l - 1].noalias() += h.transpose() * dsh;
      if (l > 1) {
        auto dprev = dprev_.leftCols(d);
        dprev = dh_.leftCols(d);
        dprev.noalias() += (s.cwiseMax(0.0) * inv_n).transpose() * da;
        dprev.noalias() += dsh * params.weights[l - 1].transpose();
        dprev.noalias() += ds_.transpose() * hw_[l - 1];
        dh_.leftCols(d) = dprev;
        width = d;
      }
    }
    return total;
  }

 private:
  int depth_;
  int n_;
  std::vector<Matrix> hidden_;
  std::vector<Matrix> hw_;
  std::vector<Matrix> scores_;
  Matrix dh_;
  Matrix dprev_;
  Matrix z_;
  Matrix dz_;
  Matrix ds_;
  Matrix dsh_;
};

// ---------------------------------------------------------------------------
// J-channel diagnostics

/// One-sided tangent dZ/dB_layer[delta]: the forward-mode derivative of Z along
/// W_layer -> W_layer + t (delta (x) J_n), t -> 0+. Requires nonnegative weights
/// (so ReLU is inactive on every score) and delta >= 0.
inline Matrix jvp_b(const ModelParams& params, const AdjacencyMatrix& adjacency, int layer, const Matrix& delta) {
  if (layer < 1 || layer > params.depth) throw ConfigError("jvp_b: layer out of range");
  const int k = channel_dim(layer);
  if (delta.rows() != k || delta.cols() != k) throw ShapeError("jvp_b: delta must be 2^l x 2^l");
  if ((delta.array() < 0.0).any()) throw ConfigError("jvp_b: delta must be nonnegative");
  if (!all_nonneg(params)) throw ConfigError("jvp_b: requires nonnegative weights");
  if (adjacency.n() != params.n) throw ShapeError("jvp_b: adjacency size mismatch");

  const int n = params.n;
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix h = input_hidden(adjacency);
  Matrix dh = Matrix::Zero(n, h.cols());
  const Matrix dw_layer = materialize(Matrix::Zero(k, k), delta, n);
  for (int l = 1; l <= params.depth; ++l) {
    const Matrix& w = params.weights[l - 1];
    const Matrix hw = h * w;
    const Matrix s = hw * h.transpose();
    Matrix ds = dh * w * h.transpose() + hw * dh.transpose();
    if (l == layer) ds.noalias() += h * dw_layer * h.transpose();
    const Matrix a = (s * h) * inv_n;
    const Matrix da = (ds * h + s * dh) * inv_n;
    Matrix next_h(n, 2 * h.cols());
    Matrix next_dh(n, 2 * h.cols());
    next_h << h, a;
    next_dh << dh, da;
    h = std::move(next_h);
    dh = std::move(next_dh);
  }
  return block_sum(dh, n);
}

struct ChannelPush {
  double cross_penalty = 0.0;  // alpha * sum_{R=0} D
  double within_reward = 0.0;  // alpha * sum_{R=1} (1-phi)/phi * D
  double total = 0.0;          // directional derivative of the loss along delta
};

inline ChannelPush channel_push(const ModelParams& params, const Graph& g, int layer, const Matrix& delta,
                                const LinkParams& lp) {
  const auto adjacency = augmented_adjacency(g);
  const Matrix d = jvp_b(params, adjacency, layer, delta);
  const Matrix z = model_output(params, adjacency);
  const auto r = connectivity_bits(g);
  ChannelPush out;
  for (int i = 0; i < g.n(); ++i) {
    for (int j = 0; j < g.n(); ++j) {
      if (r(i, j)) {
        const double phi = link(z(i, j), lp);
        out.within_reward += (1.0 - phi) / phi * d(i, j);
      } else {
        out.cross_penalty += d(i, j);
      }
    }
  }
  out.cross_penalty *= lp.alpha;
  out.within_reward *= lp.alpha;
  out.total = out.cross_penalty - out.within_reward;
  return out;
}

/// Averages dW_l over every input P A P^T (graphs x permutations) and returns,
/// per layer, the share of the averaged gradient's Frobenius energy lying
/// outside span{E_pq (x) I, E_pq (x) J}.
inline std::vector<double> grad_in_algebra_residual(std::span<const Graph> graphs, const ModelParams& params,
                                                    std::span<const Permutation> perms, const LinkParams& lp) {
  if (graphs.empty() || perms.empty()) throw ConfigError("grad_in_algebra_residual: empty input");
  GradientSet sum = GradientSet::zeros_like(params);
  for (const auto& g : graphs) {
    for (const auto& p : perms) sum += backward(params, permute_graph(g, p), lp).grads;
  }
  std::vector<double> out;
  for (const auto& dw : sum.dw) out.push_back(residual_energy_share(dw, params.n));
  return out;
}

}  // namespace connlab
