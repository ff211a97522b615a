#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "connlab/distributions.hpp"
#include "connlab/errors.hpp"
#include "connlab/model.hpp"
#include "connlab/permutation.hpp"

namespace connlab {

struct EquivarianceScore {
  double mean = 0.0;
  int num_perms = 0;
  int num_graphs = 0;
  int skipped = 0;  // draws where one side had zero norm
};

/// <x, y>_F / (||x|| ||y||), or nullopt-like NaN when either side vanishes.
inline double frobenius_cosine(const Matrix& x, const Matrix& y) {
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) return std::nan("");
  return (x.array() * y.array()).sum() / (nx * ny);
}

/// Mean Frobenius cosine between M(P A P^T) and P M(A) P^T over graphs x perms.
inline EquivarianceScore cons_frob(const ModelParams& params, std::span<const Graph> graphs,
                                   std::span<const Permutation> perms) {
  EquivarianceScore score;
  score.num_graphs = static_cast<int>(graphs.size());
  score.num_perms = static_cast<int>(perms.size());
  double sum = 0.0;
  int used = 0;
  for (const auto& g : graphs) {
    const Matrix z = model_output(params, augmented_adjacency(g));
    for (const auto& p : perms) {
      const Matrix lhs = model_output(params, augmented_adjacency(permute_graph(g, p)));
      const double c = frobenius_cosine(lhs, conjugate(z, p));
      if (std::isnan(c)) {
        ++score.skipped;
        continue;
      }
      sum += c;
      ++used;
    }
  }
  if (used == 0) throw NumericError("cons_frob: every draw was degenerate");
  score.mean = sum / used;
  return score;
}

/// Monte-Carlo ConsFrob: num_graphs graphs from `spec`, num_perms uniform permutations per graph.
inline EquivarianceScore cons_frob(const ModelParams& params, const DistributionSpec& spec, int num_graphs,
                                   int num_perms, std::uint64_t seed) {
  const auto graphs = sample_many(spec, static_cast<std::size_t>(num_graphs), derive_seed(seed, 0));
  auto engine = make_engine(derive_seed(seed, 1));
  std::vector<Permutation> perms;
  for (int i = 0; i < num_perms; ++i) perms.push_back(random_permutation(params.n, engine));
  return cons_frob(params, graphs, perms);
}

/// Per layer l: mean cosine between Attn(P h (I (x) P^T); W_l) and
/// P Attn(h; W_l) (I (x) P^T) at h = h_{l-1}(A). NaN marks a layer whose
/// every draw was degenerate.
inline std::vector<double> layerwise_cons_frob(const ModelParams& params, const Graph& g,
                                               std::span<const Permutation> perms) {
  const auto trace = forward(params, augmented_adjacency(g));
  std::vector<double> out;
  for (int l = 1; l <= params.depth; ++l) {
    const Matrix& h = trace.hidden[l - 1];
    const Matrix& w = params.weights[l - 1];
    const Matrix base = attn(h, w);
    double sum = 0.0;
    int used = 0;
    for (const auto& p : perms) {
      const double c = frobenius_cosine(attn(permute_hidden(h, p), w), permute_hidden(base, p));
      if (std::isnan(c)) continue;
      sum += c;
      ++used;
    }
    out.push_back(used == 0 ? std::nan("") : sum / used);
  }
  return out;
}

/// Layerwise scores averaged over a graph list (NaN entries skipped).
inline std::vector<double> layerwise_cons_frob(const ModelParams& params, std::span<const Graph> graphs,
                                               std::span<const Permutation> perms) {
  std::vector<double> sum(static_cast<std::size_t>(params.depth), 0.0);
  std::vector<int> used(static_cast<std::size_t>(params.depth), 0);
  for (const auto& g : graphs) {
    const auto s = layerwise_cons_frob(params, g, perms);
    for (int l = 0; l < params.depth; ++l) {
      if (std::isnan(s[l])) continue;
      sum[l] += s[l];
      ++used[l];
    }
  }
  for (int l = 0; l < params.depth; ++l) sum[l] = used[l] == 0 ? std::nan("") : sum[l] / used[l];
  return sum;
}

}  // namespace connlab
