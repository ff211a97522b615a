#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "connlab/graph.hpp"
#include "connlab/rng.hpp"

namespace connlab {

/// Node relabeling pi, acting as the matrix P with P[i][pi(i)] = 1, so that
/// (P M P^T)[i][j] = M[pi(i)][pi(j)].
using Permutation = std::vector<int>;

inline Permutation identity_permutation(int n) {
  Permutation p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

inline Permutation inverse(const Permutation& p) {
  Permutation inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = static_cast<int>(i);
  return inv;
}

/// Uniform draw from S_n by Fisher-Yates.
inline Permutation random_permutation(int n, Engine& engine) {
  Permutation p = identity_permutation(n);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(p[i], p[pick(engine)]);
  }
  return p;
}

/// All n! permutations in lexicographic order.
inline std::vector<Permutation> all_permutations(int n) {
  std::vector<Permutation> out;
  Permutation p = identity_permutation(n);
  do {
    out.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));
  return out;
}

/// The graph with adjacency P A P^T.
inline Graph permute_graph(const Graph& g, const Permutation& p) {
  const auto inv = inverse(p);
  Graph out(g.n());
  for (const auto& e : g.edges()) out.add_edge(inv[e.u], inv[e.v]);
  return out;
}

/// P M P^T for an n x n matrix.
inline Matrix conjugate(const Matrix& m, const Permutation& p) {
  const auto n = m.rows();
  Matrix out(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) out(i, j) = m(p[i], p[j]);
  }
  return out;
}

/// P h (I_K (x) P^T) for a hidden state with n-wide column blocks.
inline Matrix permute_hidden(const Matrix& h, const Permutation& p) {
  const auto n = h.rows();
  Matrix out(n, h.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < h.cols(); c += n) {
      for (Eigen::Index j = 0; j < n; ++j) out(i, c + j) = h(p[i], c + p[j]);
    }
  }
  return out;
}

/// (I_K (x) P) W (I_K (x) P^T) for a weight acting on n-wide blocks.
inline Matrix conjugate_blocks(const Matrix& w, const Permutation& p) {
  const auto n = static_cast<Eigen::Index>(p.size());
  Matrix out(w.rows(), w.cols());
  for (Eigen::Index r = 0; r < w.rows(); r += n) {
    for (Eigen::Index c = 0; c < w.cols(); c += n) {
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) out(r + i, c + j) = w(r + p[i], c + p[j]);
      }
    }
  }
  return out;
}

}  // namespace connlab
