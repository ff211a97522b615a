#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "connlab/errors.hpp"

namespace connlab {

inline constexpr int kMaxNodes = 128;

using Matrix = Eigen::MatrixXd;

/// One row of an n x n boolean matrix, n <= 128.
class BitRow {
 public:
  static constexpr int kWords = kMaxNodes / 64;

  bool test(int j) const noexcept { return (words_[j >> 6] >> (j & 63)) & 1u; }
  void set(int j) noexcept { words_[j >> 6] |= std::uint64_t{1} << (j & 63); }
  void reset(int j) noexcept { words_[j >> 6] &= ~(std::uint64_t{1} << (j & 63)); }

  BitRow& operator|=(const BitRow& other) noexcept {
    for (int w = 0; w < kWords; ++w) words_[w] |= other.words_[w];
    return *this;
  }
  BitRow operator&(const BitRow& other) const noexcept {
    BitRow out;
    for (int w = 0; w < kWords; ++w) out.words_[w] = words_[w] & other.words_[w];
    return out;
  }
  BitRow operator~() const noexcept {
    BitRow out;
    for (int w = 0; w < kWords; ++w) out.words_[w] = ~words_[w];
    return out;
  }
  int count() const noexcept {
    int c = 0;
    for (auto w : words_) c += std::popcount(w);
    return c;
  }
  bool any() const noexcept {
    for (auto w : words_) {
      if (w != 0) return true;
    }
    return false;
  }

  /// Calls fn(j) for every set bit in increasing order.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (int w = 0; w < kWords; ++w) {
      std::uint64_t bits = words_[w];
      while (bits != 0) {
        fn(w * 64 + std::countr_zero(bits));
        bits &= bits - 1;
      }
    }
  }

  friend bool operator==(const BitRow&, const BitRow&) = default;

 private:
  std::array<std::uint64_t, kWords> words_{};
};

/// Dense n x n boolean matrix stored as per-row bitsets.
class BitMatrix {
 public:
  BitMatrix() = default;
  explicit BitMatrix(int n) : n_(n), rows_(static_cast<std::size_t>(n)) {}

  static BitMatrix identity(int n) {
    BitMatrix m(n);
    for (int i = 0; i < n; ++i) m.rows_[i].set(i);
    return m;
  }

  /// Support (entries > 0) of a real matrix.
  static BitMatrix support(const Matrix& values) {
    if (values.rows() != values.cols()) throw ShapeError("support: matrix is not square");
    BitMatrix m(static_cast<int>(values.rows()));
    for (int i = 0; i < m.n_; ++i) {
      for (int j = 0; j < m.n_; ++j) {
        if (values(i, j) > 0.0) m.rows_[i].set(j);
      }
    }
    return m;
  }

  int size() const noexcept { return n_; }
  bool operator()(int i, int j) const noexcept { return rows_[i].test(j); }
  void set(int i, int j) noexcept { rows_[i].set(j); }
  const BitRow& row(int i) const noexcept { return rows_[i]; }

  /// Product in the boolean semiring.
  BitMatrix operator*(const BitMatrix& rhs) const {
    if (rhs.n_ != n_) throw ShapeError("BitMatrix product: size mismatch");
    BitMatrix out(n_);
    for (int i = 0; i < n_; ++i) {
      BitRow acc;
      rows_[i].for_each([&](int k) { acc |= rhs.rows_[k]; });
      out.rows_[i] = acc;
    }
    return out;
  }

  Matrix to_dense() const {
    Matrix out = Matrix::Zero(n_, n_);
    for (int i = 0; i < n_; ++i) rows_[i].for_each([&](int j) { out(i, j) = 1.0; });
    return out;
  }

  int count() const noexcept {
    int c = 0;
    for (const auto& r : rows_) c += r.count();
    return c;
  }

  friend bool operator==(const BitMatrix&, const BitMatrix&) = default;

 private:
  int n_ = 0;
  std::vector<BitRow> rows_;
};

struct Edge {
  int u;
  int v;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Finite simple undirected graph on vertices 0..n-1. No self-loops are stored.
class Graph {
 public:
  explicit Graph(int n) : n_(n), rows_(static_cast<std::size_t>(n)) {
    if (n < 1 || n > kMaxNodes) {
      throw ConfigError("graph vertex count must be in [1, " + std::to_string(kMaxNodes) +
                        "], got " + std::to_string(n));
    }
  }

  static Graph from_edges(int n, std::span<const Edge> edges) {
    Graph g(n);
    for (const auto& e : edges) g.add_edge(e.u, e.v);
    return g;
  }

  void add_edge(int u, int v) {
    if (u < 0 || v < 0 || u >= n_ || v >= n_) {
      throw ConfigError("edge endpoint out of range: {" + std::to_string(u) + "," +
                        std::to_string(v) + "} for n=" + std::to_string(n_));
    }
    if (u == v) throw ConfigError("self-loop edges are not stored: " + std::to_string(u));
    rows_[u].set(v);
    rows_[v].set(u);
  }

  int n() const noexcept { return n_; }
  bool has_edge(int u, int v) const noexcept { return u != v && rows_[u].test(v); }
  const BitRow& neighbors(int u) const noexcept { return rows_[u]; }

  int num_edges() const noexcept {
    int c = 0;
    for (const auto& r : rows_) c += r.count();
    return c / 2;
  }

  /// Edges with u < v, sorted lexicographically.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (int u = 0; u < n_; ++u) {
      rows_[u].for_each([&](int v) {
        if (u < v) out.push_back({u, v});
      });
    }
    return out;
  }

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  int n_;
  std::vector<BitRow> rows_;
};

/// Self-loop-augmented adjacency, entries in {0,1}, unit diagonal.
struct AdjacencyMatrix {
  Matrix values;
  int n() const noexcept { return static_cast<int>(values.rows()); }
};

/// R[i][j] = 1 iff i and j lie in the same component (R[i][i] = 1).
struct ConnectivityMatrix {
  Matrix values;
  int n() const noexcept { return static_cast<int>(values.rows()); }
};

/// All-pairs shortest-path hop counts; kUnreachable across components.
class DistanceMatrix {
 public:
  static constexpr int kUnreachable = std::numeric_limits<int>::max();

  explicit DistanceMatrix(int n)
      : n_(n), d_(static_cast<std::size_t>(n) * n, kUnreachable) {}

  int n() const noexcept { return n_; }
  int operator()(int i, int j) const noexcept { return d_[static_cast<std::size_t>(i) * n_ + j]; }
  int& at(int i, int j) noexcept { return d_[static_cast<std::size_t>(i) * n_ + j]; }
  bool finite(int i, int j) const noexcept { return (*this)(i, j) != kUnreachable; }

 private:
  int n_;
  std::vector<int> d_;
};

inline BitMatrix adjacency_bits(const Graph& g) {
  BitMatrix m = BitMatrix::identity(g.n());
  for (int u = 0; u < g.n(); ++u) g.neighbors(u).for_each([&](int v) { m.set(u, v); });
  return m;
}

inline AdjacencyMatrix augmented_adjacency(const Graph& g) {
  return {adjacency_bits(g).to_dense()};
}

/// Boolean-semiring k-th power of the augmented adjacency: the support of A^k.
inline BitMatrix power_support(const BitMatrix& adjacency, long long k) {
  if (k < 0) throw ConfigError("power_support: negative exponent");
  const int n = adjacency.size();
  BitMatrix result = BitMatrix::identity(n);
  BitMatrix base = adjacency;
  // Support of A^k is monotone in k and saturates once k >= n - 1.
  if (k > n) k = n;
  while (k > 0) {
    if (k & 1) result = result * base;
    k >>= 1;
    if (k > 0) base = base * base;
  }
  return result;
}

inline BitMatrix power_support(const AdjacencyMatrix& adjacency, long long k) {
  return power_support(BitMatrix::support(adjacency.values), k);
}

/// Breadth-first search from every vertex.
inline DistanceMatrix distances(const Graph& g) {
  const int n = g.n();
  DistanceMatrix d(n);
  for (int s = 0; s < n; ++s) {
    BitRow visited;
    BitRow frontier;
    visited.set(s);
    frontier.set(s);
    d.at(s, s) = 0;
    for (int hop = 1; frontier.any(); ++hop) {
      BitRow next;
      frontier.for_each([&](int u) { next |= g.neighbors(u); });
      next = next & ~visited;
      next.for_each([&](int v) { d.at(s, v) = hop; });
      visited |= next;
      frontier = next;
    }
  }
  return d;
}

/// Component label per vertex; labels are 0,1,... in order of smallest member.
inline std::vector<int> component_labels(const Graph& g) {
  const int n = g.n();
  std::vector<int> label(static_cast<std::size_t>(n), -1);
  int next_label = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (label[s] >= 0) continue;
    label[s] = next_label;
    stack.assign(1, s);
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      g.neighbors(u).for_each([&](int v) {
        if (label[v] < 0) {
          label[v] = next_label;
          stack.push_back(v);
        }
      });
    }
    ++next_label;
  }
  return label;
}

inline BitMatrix connectivity_bits(const Graph& g) {
  const auto label = component_labels(g);
  const int n = g.n();
  BitMatrix r(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (label[i] == label[j]) r.set(i, j);
    }
  }
  return r;
}

inline ConnectivityMatrix connectivity(const Graph& g) { return {connectivity_bits(g).to_dense()}; }

/// Largest intra-component shortest-path distance; 0 for an edgeless graph.
inline int diameter(const DistanceMatrix& d) {
  int best = 0;
  for (int i = 0; i < d.n(); ++i) {
    for (int j = 0; j < d.n(); ++j) {
      if (d.finite(i, j)) best = std::max(best, d(i, j));
    }
  }
  return best;
}

inline int diameter(const Graph& g) { return diameter(distances(g)); }

/// 3^L, the largest diameter an L-layer model decides perfectly.
constexpr long long capacity(int depth) {
  long long c = 1;
  for (int i = 0; i < depth; ++i) c *= 3;
  return c;
}

enum class PairClass : std::uint8_t { kWithin, kBeyond, kDisconnected };

/// Row-major n*n pair labels relative to the depth-L capacity.
inline std::vector<PairClass> capacity_mask(const Graph& g, int depth) {
  if (depth < 1) throw ConfigError("capacity_mask: depth must be >= 1");
  const auto d = distances(g);
  const long long cap = capacity(depth);
  const int n = g.n();
  std::vector<PairClass> mask(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      PairClass c = PairClass::kDisconnected;
      if (d.finite(i, j)) c = d(i, j) <= cap ? PairClass::kWithin : PairClass::kBeyond;
      mask[static_cast<std::size_t>(i) * n + j] = c;
    }
  }
  return mask;
}

struct PairFractions {
  double beyond = 0.0;        // finite distance > 3^L
  double disconnected = 0.0;  // infinite distance
};

/// Mean fraction of ordered pairs (denominator n^2) that are beyond capacity or disconnected.
inline PairFractions pair_fractions(std::span<const Graph> graphs, int depth) {
  if (graphs.empty()) throw ConfigError("rho: empty graph list");
  PairFractions acc;
  for (const auto& g : graphs) {
    const auto mask = capacity_mask(g, depth);
    const double denom = static_cast<double>(g.n()) * g.n();
    acc.beyond += static_cast<double>(std::count(mask.begin(), mask.end(), PairClass::kBeyond)) / denom;
    acc.disconnected +=
        static_cast<double>(std::count(mask.begin(), mask.end(), PairClass::kDisconnected)) / denom;
  }
  acc.beyond /= static_cast<double>(graphs.size());
  acc.disconnected /= static_cast<double>(graphs.size());
  return acc;
}

inline double rho(std::span<const Graph> graphs, int depth) { return pair_fractions(graphs, depth).beyond; }

inline Graph make_chain(int n, int length) {
  if (length > n) throw ConfigError("chain longer than vertex count");
  Graph g(n);
  for (int i = 0; i + 1 < length; ++i) g.add_edge(i, i + 1);
  return g;
}

inline Graph make_complete(int n) {
  Graph g(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) g.add_edge(i, j);
  }
  return g;
}

}  // namespace connlab
