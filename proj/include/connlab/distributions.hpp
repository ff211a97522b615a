#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <variant>

#include "connlab/errors.hpp"
#include "connlab/graph.hpp"
#include "connlab/permutation.hpp"
#include "connlab/rng.hpp"

namespace connlab {

struct ErSpec {
  int n = 8;
  double p = 0.2;
};

struct TwoChainSpec {
  int n = 8;
  int k = 3;
};

struct TwoCliqueSpec {
  int n = 8;
  int k = 3;
};

struct DiamRestrictedSpec;
struct DiamExcludedSpec;
struct MixtureSpec;
struct RelabeledSpec;

using DistributionSpec = std::variant<ErSpec, TwoChainSpec, TwoCliqueSpec, DiamRestrictedSpec, DiamExcludedSpec,
                                      MixtureSpec, RelabeledSpec>;

/// Base distribution conditioned on diam(G) <= dmax.
struct DiamRestrictedSpec {
  std::shared_ptr<const DistributionSpec> base;
  int dmax = 3;
};

/// Base distribution conditioned on diam(G) > dmin (the beyond-capacity complement).
struct DiamExcludedSpec {
  std::shared_ptr<const DistributionSpec> base;
  int dmin = 3;
};

/// With probability q draw from `within`, otherwise from `beyond`.
struct MixtureSpec {
  double q = 1.0;
  std::shared_ptr<const DistributionSpec> within;
  std::shared_ptr<const DistributionSpec> beyond;
};

/// Base graph with its vertices relabeled by a uniform random permutation.
struct RelabeledSpec {
  std::shared_ptr<const DistributionSpec> base;
};

inline constexpr long long kRejectionBudget = 1'000'000;

inline DistributionSpec restricted(DistributionSpec base, int dmax) {
  return DiamRestrictedSpec{std::make_shared<const DistributionSpec>(std::move(base)), dmax};
}

inline DistributionSpec excluded(DistributionSpec base, int dmin) {
  return DiamExcludedSpec{std::make_shared<const DistributionSpec>(std::move(base)), dmin};
}

inline DistributionSpec mixture(double q, DistributionSpec within, DistributionSpec beyond) {
  return MixtureSpec{q, std::make_shared<const DistributionSpec>(std::move(within)),
                     std::make_shared<const DistributionSpec>(std::move(beyond))};
}

inline DistributionSpec relabeled(DistributionSpec base) {
  return RelabeledSpec{std::make_shared<const DistributionSpec>(std::move(base))};
}

/// Vertex count of every graph the distribution emits.
inline int spec_nodes(const DistributionSpec& spec) {
  struct Visitor {
    int operator()(const ErSpec& s) const { return s.n; }
    int operator()(const TwoChainSpec& s) const { return s.n; }
    int operator()(const TwoCliqueSpec& s) const { return s.n; }
    int operator()(const DiamRestrictedSpec& s) const { return spec_nodes(*s.base); }
    int operator()(const DiamExcludedSpec& s) const { return spec_nodes(*s.base); }
    int operator()(const MixtureSpec& s) const { return spec_nodes(*s.within); }
    int operator()(const RelabeledSpec& s) const { return spec_nodes(*s.base); }
  };
  return std::visit(Visitor{}, spec);
}

inline void validate(const DistributionSpec& spec) {
  struct Visitor {
    void operator()(const ErSpec& s) const {
      if (!(s.p >= 0.0 && s.p <= 1.0)) throw ConfigError("ER: p must lie in [0,1]");
      (void)Graph(s.n);
    }
    void operator()(const TwoChainSpec& s) const {
      if (s.k < 1 || 2 * s.k > s.n) throw ConfigError("2Chain: need 1 <= k and 2k <= n");
      (void)Graph(s.n);
    }
    void operator()(const TwoCliqueSpec& s) const {
      if (s.k < 1 || 2 * s.k > s.n) throw ConfigError("2Clique: need 1 <= k and 2k <= n");
      (void)Graph(s.n);
    }
    void operator()(const DiamRestrictedSpec& s) const {
      if (!s.base) throw ConfigError("restricted: missing base");
      if (s.dmax < 0) throw ConfigError("restricted: dmax must be >= 0");
      validate(*s.base);
    }
    void operator()(const DiamExcludedSpec& s) const {
      if (!s.base) throw ConfigError("excluded: missing base");
      validate(*s.base);
    }
    void operator()(const MixtureSpec& s) const {
      if (!(s.q >= 0.0 && s.q <= 1.0)) throw ConfigError("mixture: q must lie in [0,1]");
      if (!s.within || !s.beyond) throw ConfigError("mixture: missing component");
      validate(*s.within);
      validate(*s.beyond);
      if (spec_nodes(*s.within) != spec_nodes(*s.beyond)) {
        throw ConfigError("mixture: components disagree on n");
      }
    }
    void operator()(const RelabeledSpec& s) const {
      if (!s.base) throw ConfigError("relabeled: missing base");
      validate(*s.base);
    }
  };
  std::visit(Visitor{}, spec);
}

inline Graph sample_er(int n, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("ER: p must lie in [0,1]");
  Graph g(n);
  auto engine = make_engine(seed);
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      if (uniform01(engine) < p) g.add_edge(u, v);
    }
  }
  return g;
}

inline Graph make_two_chain(int n, int k) {
  if (k < 1 || 2 * k > n) throw ConfigError("2Chain: need 1 <= k and 2k <= n");
  Graph g(n);
  for (int i = 0; i + 1 < k; ++i) {
    g.add_edge(i, i + 1);
    g.add_edge(k + i, k + i + 1);
  }
  return g;
}

inline Graph make_two_clique(int n, int k) {
  if (k < 1 || 2 * k > n) throw ConfigError("2Clique: need 1 <= k and 2k <= n");
  Graph g(n);
  for (int c = 0; c < 2; ++c) {
    for (int i = 0; i < k; ++i) {
      for (int j = i + 1; j < k; ++j) g.add_edge(c * k + i, c * k + j);
    }
  }
  return g;
}

struct Sample {
  Graph graph;
  bool from_within = true;  // mixture bookkeeping; true for non-mixture specs
};

inline Sample sample_tagged(const DistributionSpec& spec, std::uint64_t seed);

inline Graph sample(const DistributionSpec& spec, std::uint64_t seed) {
  return sample_tagged(spec, seed).graph;
}

namespace detail {

template <typename Accept>
Sample rejection_sample(const DistributionSpec& base, std::uint64_t seed, Accept accept) {
  for (long long attempt = 0; attempt < kRejectionBudget; ++attempt) {
    auto s = sample_tagged(base, derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    if (accept(diameter(s.graph))) return s;
  }
  throw ConfigError("rejection budget exceeded: base distribution almost never satisfies the diameter condition");
}

}  // namespace detail

inline Graph sample_restricted(const DiamRestrictedSpec& spec, std::uint64_t seed) {
  return detail::rejection_sample(*spec.base, seed, [&](int d) { return d <= spec.dmax; }).graph;
}

inline Sample sample_mixture(const MixtureSpec& spec, std::uint64_t seed) {
  auto engine = make_engine(derive_seed(seed, 0));
  const bool within = uniform01(engine) < spec.q;
  auto s = sample_tagged(within ? *spec.within : *spec.beyond, derive_seed(seed, 1));
  s.from_within = within;
  return s;
}

inline Sample sample_tagged(const DistributionSpec& spec, std::uint64_t seed) {
  struct Visitor {
    std::uint64_t seed;
    Sample operator()(const ErSpec& s) const { return {sample_er(s.n, s.p, seed), true}; }
    Sample operator()(const TwoChainSpec& s) const { return {make_two_chain(s.n, s.k), true}; }
    Sample operator()(const TwoCliqueSpec& s) const { return {make_two_clique(s.n, s.k), true}; }
    Sample operator()(const DiamRestrictedSpec& s) const {
      return {sample_restricted(s, seed), true};
    }
    Sample operator()(const DiamExcludedSpec& s) const {
      return detail::rejection_sample(*s.base, seed, [&](int d) { return d > s.dmin; });
    }
    Sample operator()(const MixtureSpec& s) const { return sample_mixture(s, seed); }
    Sample operator()(const RelabeledSpec& s) const {
      auto inner = sample_tagged(*s.base, derive_seed(seed, 0));
      auto engine = make_engine(derive_seed(seed, 1));
      inner.graph = permute_graph(inner.graph, random_permutation(inner.graph.n(), engine));
      return inner;
    }
  };
  return std::visit(Visitor{seed}, spec);
}

/// `count` graphs, item i drawn with seed derive_seed(seed, i).
inline std::vector<Graph> sample_many(const DistributionSpec& spec, std::size_t count, std::uint64_t seed) {
  std::vector<Graph> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample(spec, derive_seed(seed, i)));
  return out;
}

// JSON form: {"kind": "er", "n": 8, "p": 0.2}, {"kind": "restricted", "base": {...}, "dmax": 3}, ...

inline nlohmann::json spec_to_json(const DistributionSpec& spec) {
  struct Visitor {
    nlohmann::json operator()(const ErSpec& s) const { return {{"kind", "er"}, {"n", s.n}, {"p", s.p}}; }
    nlohmann::json operator()(const TwoChainSpec& s) const {
      return {{"kind", "two_chain"}, {"n", s.n}, {"k", s.k}};
    }
    nlohmann::json operator()(const TwoCliqueSpec& s) const {
      return {{"kind", "two_clique"}, {"n", s.n}, {"k", s.k}};
    }
    nlohmann::json operator()(const DiamRestrictedSpec& s) const {
      return {{"kind", "restricted"}, {"base", spec_to_json(*s.base)}, {"dmax", s.dmax}};
    }
    nlohmann::json operator()(const DiamExcludedSpec& s) const {
      return {{"kind", "excluded"}, {"base", spec_to_json(*s.base)}, {"dmin", s.dmin}};
    }
    nlohmann::json operator()(const MixtureSpec& s) const {
      return {{"kind", "mixture"},
              {"q", s.q},
              {"within", spec_to_json(*s.within)},
              {"beyond", spec_to_json(*s.beyond)}};
    }
    nlohmann::json operator()(const RelabeledSpec& s) const {
      return {{"kind", "relabeled"}, {"base", spec_to_json(*s.base)}};
    }
  };
  return std::visit(Visitor{}, spec);
}

inline DistributionSpec spec_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    DistributionSpec spec;
    if (kind == "er") {
      spec = ErSpec{j.at("n").get<int>(), j.at("p").get<double>()};
    } else if (kind == "two_chain") {
      spec = TwoChainSpec{j.at("n").get<int>(), j.at("k").get<int>()};
    } else if (kind == "two_clique") {
      spec = TwoCliqueSpec{j.at("n").get<int>(), j.at("k").get<int>()};
    } else if (kind == "restricted") {
      spec = restricted(spec_from_json(j.at("base")), j.at("dmax").get<int>());
    } else if (kind == "excluded") {
      spec = excluded(spec_from_json(j.at("base")), j.at("dmin").get<int>());
    } else if (kind == "mixture") {
      spec = mixture(j.at("q").get<double>(), spec_from_json(j.at("within")),
                     spec_from_json(j.at("beyond")));
    } else if (kind == "relabeled") {
      spec = relabeled(spec_from_json(j.at("base")));
    } else {
      throw ConfigError("unknown distribution kind '" + kind + "'");
    }
    validate(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed distribution spec: ") + e.what());
  }
}

}  // namespace connlab
