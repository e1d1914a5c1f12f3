#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace cglm {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// xoshiro256++ generator with deterministic substream derivation.
///
/// Substreams are keyed by up to three 64-bit indices mixed into the master
/// seed through splitmix64 rounds, so (master_seed, cell, replication) maps
/// to a reproducible stream independent of scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0x853c49e6748fea9bull) { reseed(seed); }

  static Rng substream(std::uint64_t master, std::uint64_t k1, std::uint64_t k2 = 0,
                       std::uint64_t k3 = 0) {
    std::uint64_t s = master;
    std::uint64_t h = splitmix64(s);
    s = h ^ (0xd1342543de82ef95ull * (k1 + 1));
    h = splitmix64(s);
    s = h ^ (0xaf251af3b0f025b5ull * (k2 + 1));
    h = splitmix64(s);
    s = h ^ (0x9e6c63d0876a9a47ull * (k3 + 1));
    return Rng(splitmix64(s));
  }

  void reseed(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform draw in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform draw in (0, 1); safe as a log/inverse-CDF argument.
  double uniform_pos() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  /// Uniform integer in [0, bound).
  std::uint64_t uniform_int(std::uint64_t bound) {
    // Rejection to kill modulo bias.
    const std::uint64_t limit = bound * (~0ull / bound);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % bound;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (no cached spare; one value per call).
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Exponential with the given rate, by inverse CDF.
  double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

  /// Zero-mean Laplace with the given rate (density rate/2 * exp(-rate|x|)).
  double laplace(double rate) {
    const double e = exponential(rate);
    return bernoulli(0.5) ? e : -e;
  }

  /// Pareto with shape alpha and minimum x_m, by inverse CDF.
  double pareto(double alpha, double x_m) {
    return x_m * std::pow(uniform_pos(), -1.0 / alpha);
  }

  /// Gamma with integer shape as a sum of exponentials (exact).
  double gamma_integer(std::uint64_t shape, double rate) {
    double log_prod = 0.0;
    for (std::uint64_t i = 0; i < shape; ++i) log_prod += std::log(uniform_pos());
    return -log_prod / rate;
  }

  /// Poisson draw. Knuth's product method for small means; larger means are
  /// split in half and added, which is exact by infinite divisibility.
  std::uint64_t poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 30.0) {
      const double limit = std::exp(-mean);
      std::uint64_t k = 0;
      double p = 1.0;
      do {
        ++k;
        p *= uniform();
      } while (p > limit);
      return k - 1;
    }
    const std::uint64_t a = poisson(0.5 * mean);
    return a + poisson(mean - 0.5 * mean);
  }

  /// Sorted sample of `k` distinct indices from {0, ..., pool-1}.
  std::vector<std::uint32_t> distinct_indices(std::uint32_t k, std::uint32_t pool) {
    std::vector<std::uint32_t> out;
    out.reserve(k);
    while (out.size() < k) {
      const auto cand = std::uint32_t(uniform_int(pool));
      bool dup = false;
      for (auto v : out) dup |= (v == cand);
      if (!dup) out.push_back(cand);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace cglm
