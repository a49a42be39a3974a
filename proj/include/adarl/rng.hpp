#pragma once

#include <cstdint>
#include <random>

namespace adarl {

/// Seeded source of randomness. Every stochastic routine takes one of these
/// (or a seed) so runs are reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix(seed)) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  int uniform_int(int lo, int hi_inclusive) {
    return std::uniform_int_distribution<int>(lo, hi_inclusive)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  /// Derives an independent stream, e.g. one per domain or per worker.
  Rng split(std::uint64_t salt) { return Rng(engine_() ^ mix(salt + 0x9e3779b97f4a7c15ULL)); }

  std::mt19937_64& engine() { return engine_; }

  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

/// Seed for a named sub-stream of a run: stable across processes.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return Rng::mix(Rng::mix(seed) ^ Rng::mix(a * 1000003ULL + b));
}

}  // namespace adarl
