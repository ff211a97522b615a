#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "connlab/distributions.hpp"
#include "connlab/errors.hpp"
#include "connlab/graph.hpp"

namespace connlab {

struct GraphMeta {
  int diam = 0;
  std::uint64_t seed = 0;
};

struct DatasetRecord {
  Graph graph;
  std::optional<GraphMeta> meta;
};

/// {"n": int, "edges": [[u,v], ...], "meta": {...}} with edges sorted, compact.
inline std::string to_jsonl_line(const Graph& g, const std::optional<GraphMeta>& meta = std::nullopt) {
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (const auto& e : g.edges()) edges.push_back(nlohmann::ordered_json::array({e.u, e.v}));
  nlohmann::ordered_json line;
  line["n"] = g.n();
  line["edges"] = std::move(edges);
  if (meta) {
    line["meta"]["diam"] = meta->diam;
    line["meta"]["seed"] = meta->seed;
  }
  return line.dump();
}

inline DatasetRecord from_jsonl_line(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed dataset line: ") + e.what());
  }
  try {
    Graph g(j.at("n").get<int>());
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("dataset edge must be a pair");
      g.add_edge(e[0].get<int>(), e[1].get<int>());
    }
    std::optional<GraphMeta> meta;
    if (j.contains("meta")) {
      const auto& m = j["meta"];
      meta = GraphMeta{m.value("diam", 0), m.value("seed", std::uint64_t{0})};
    }
    return {std::move(g), meta};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed dataset record: ") + e.what());
  }
}

inline void write_jsonl(std::ostream& os, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) os << to_jsonl_line(r.graph, r.meta) << '\n';
}

inline std::vector<DatasetRecord> read_jsonl(std::istream& is) {
  std::vector<DatasetRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(from_jsonl_line(line));
  }
  return out;
}

/// The graphs of sample_many(spec, count, seed); meta.seed is the per-graph
/// seed, so sample(spec, meta.seed) regenerates the record.
inline std::vector<DatasetRecord> generate_dataset(const DistributionSpec& spec, std::size_t count,
                                                   std::uint64_t seed) {
  std::vector<DatasetRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = derive_seed(seed, i);
    auto g = sample(spec, s);
    const int d = diameter(g);
    out.push_back({std::move(g), GraphMeta{d, s}});
  }
  return out;
}

}  // namespace connlab
