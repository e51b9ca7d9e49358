#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace seqvi {

// Every random draw in the toolkit comes from a named substream of one seed,
// so that data generation, initialization, rollouts and evaluation can be
// replayed independently of each other.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream,
                          std::initializer_list<std::uint64_t> keys = {});

// FNV-1a over the bit patterns of the values.
std::uint64_t content_hash(std::span<const double> values);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream, std::initializer_list<std::uint64_t> keys = {})
      : engine_(derive_seed(seed, stream, keys)) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::vector<double> normals(std::size_t n);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace seqvi
