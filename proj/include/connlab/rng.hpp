#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace connlab {

using Engine = std::mt19937_64;

/// Stateless 64-bit mixer (splitmix64 finalizer).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed for item `index` of the stream rooted at `base`. Independent of the
/// order in which items are generated.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) noexcept {
  return mix64(mix64(base) ^ mix64(index + 0x632BE59BD9B4E019ull));
}

inline Engine make_engine(std::uint64_t seed) { return Engine{mix64(seed)}; }

inline double uniform01(Engine& engine) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine);
}

inline std::string engine_state(const Engine& engine) {
  std::ostringstream os;
  os << engine;
  return os.str();
}

inline Engine engine_from_state(const std::string& state) {
  Engine engine;
  std::istringstream is(state);
  is >> engine;
  return engine;
}

}  // namespace connlab
