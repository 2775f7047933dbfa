#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace cablevae {

std::uint64_t splitmix64(std::uint64_t x);

/// Seed of the sub-stream `label` expanded from a root seed.
std::uint64_t derive_seed(std::uint64_t root, std::string_view label);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

/// Seeded generator whose output sequence is fixed across platforms.
/// std::mt19937_64 is fully specified; the distributions on top of it are
/// implemented here because the standard library ones are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double lognormal(double log_mean, double log_std) {
    return std::exp(normal(log_mean, log_std));
  }
  /// Draw an index with probability proportional to `weights`.
  std::size_t categorical(std::span<const double> weights);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cablevae
