#pragma once

// Seeded RNG with hand-rolled distributions. The standard library's
// distribution objects are implementation-defined, so every draw here is
// spelled out to keep traces and training runs reproducible across
// toolchains.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace attendlight {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : engine_(splitmix64(seed)), stream_base_(splitmix64(seed)) {}

  // Derives an independent stream, e.g. one per parallel rollout.
  Rng fork(std::uint64_t stream) const {
    return Rng(stream_base_ ^ splitmix64(stream + 0x51ed2701ull));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Exponential with the given mean (inter-arrival draw).
  double exponential(double mean) {
    return -mean * std::log1p(-uniform());
  }

  // Index drawn according to `weights` (need not be normalized).
  std::size_t weighted_index(const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    double acc = 0;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.empty() ? 0 : weights.size() - 1;
  }

  // Fisher-Yates sample of k distinct indices from [0, n).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = i + uniform_index(n - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t stream_base_ = 0;
};

}  // namespace attendlight
