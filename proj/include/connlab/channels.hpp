#pragma once

#include <Eigen/Dense>

#include <vector>

#include "connlab/errors.hpp"
#include "connlab/graph.hpp"
#include "connlab/model.hpp"

namespace connlab {

/// Least-squares fit M ~ a I_n + b J_n of one n x n block.
struct BlockProjection {
  double a = 0.0;
  double b = 0.0;
  Matrix residual;
};

/// Closed-form 2x2 normal equations
///   n a + n b   = trace(M)
///   n a + n^2 b = sum(M)
/// I and J are not orthogonal (<I, J> = n), so a is not simply the mean diagonal.
inline BlockProjection project_block(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("project_block: block must be square");
  const auto n = static_cast<double>(m.rows());
  if (m.rows() < 2) throw ConfigError("project_block: n = 1 makes I and J coincide");
  const double trace = m.trace();
  const double total = m.sum();
  BlockProjection out;
  out.b = (total - trace) / (n * n - n);
  out.a = trace / n - out.b;
  out.residual = m;
  out.residual.array() -= out.b;
  out.residual.diagonal().array() -= out.a;
  return out;
}

struct LayerChannels {
  Matrix a_hat;
  Matrix b_hat;
  double residual_norm = 0.0;
  double share_i = 0.0;
  double share_j = 0.0;
  double share_residual = 0.0;
  // Auxiliary: pure projection energies ||A^ (x) I||^2 / ||W||^2 and ||B^ (x) J||^2 / ||W||^2.
  double proj_energy_i = 0.0;
  double proj_energy_j = 0.0;
};

struct ChannelReport {
  std::vector<LayerChannels> layers;
};

struct EnergyShares {
  double share_i = 0.0;
  double share_j = 0.0;
  double share_residual = 0.0;
};

/// <W, A^ (x) I>/||W||^2 and <W, B^ (x) J>/||W||^2; the residual share is the remainder.
inline EnergyShares energy_shares(const Matrix& w, const Matrix& a_hat, const Matrix& b_hat) {
  const auto k = a_hat.rows();
  if (w.rows() != w.cols() || w.rows() % k != 0) throw ShapeError("energy_shares: shape mismatch");
  const auto n = w.rows() / k;
  const double norm2 = w.squaredNorm();
  if (!(norm2 > 0.0)) throw ConfigError("energy_shares: zero-norm weight");
  double inner_i = 0.0;
  double inner_j = 0.0;
  for (Eigen::Index u = 0; u < k; ++u) {
    for (Eigen::Index v = 0; v < k; ++v) {
      const auto block = w.block(u * n, v * n, n, n);
      inner_i += a_hat(u, v) * block.trace();
      inner_j += b_hat(u, v) * block.sum();
    }
  }
  EnergyShares s;
  s.share_i = inner_i / norm2;
  s.share_j = inner_j / norm2;
  s.share_residual = 1.0 - s.share_i - s.share_j;
  return s;
}

/// Projects one layer weight block-by-block onto span{I_n, J_n}.
inline LayerChannels project_layer(const Matrix& w, int n) {
  if (w.rows() != w.cols() || w.rows() % n != 0) throw ShapeError("project_layer: shape mismatch");
  const auto k = w.rows() / n;
  LayerChannels out;
  out.a_hat.resize(k, k);
  out.b_hat.resize(k, k);
  double residual2 = 0.0;
  for (Eigen::Index u = 0; u < k; ++u) {
    for (Eigen::Index v = 0; v < k; ++v) {
      auto proj = project_block(w.block(u * n, v * n, n, n));
      out.a_hat(u, v) = proj.a;
      out.b_hat(u, v) = proj.b;
      residual2 += proj.residual.squaredNorm();
    }
  }
  out.residual_norm = std::sqrt(residual2);
  const double norm2 = w.squaredNorm();
  if (norm2 > 0.0) {
    const auto s = energy_shares(w, out.a_hat, out.b_hat);
    out.share_i = s.share_i;
    out.share_j = s.share_j;
    out.share_residual = s.share_residual;
    const double dn = static_cast<double>(n);
    out.proj_energy_i = out.a_hat.squaredNorm() * dn / norm2;
    out.proj_energy_j = out.b_hat.squaredNorm() * dn * dn / norm2;
  }
  return out;
}

inline ChannelReport project_weights(const ModelParams& params) {
  check_shapes(params);
  ChannelReport report;
  for (const auto& w : params.weights) report.layers.push_back(project_layer(w, params.n));
  return report;
}

/// ||residual||^2 / ||W||^2 after projecting onto the I/J algebra (0 for a zero matrix).
inline double residual_energy_share(const Matrix& w, int n) {
  const double norm2 = w.squaredNorm();
  if (norm2 == 0.0) return 0.0;
  const auto layer = project_layer(w, n);
  return layer.residual_norm * layer.residual_norm / norm2;
}

}  // namespace connlab
