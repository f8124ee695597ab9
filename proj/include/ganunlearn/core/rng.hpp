#pragma once

#include <cmath>
#include <cstdint>

#include "ganunlearn/core/common.hpp"

namespace gu {

// splitmix64; used to expand seeds and to derive per-stage streams.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Every pipeline stage draws from its own stream so that re-ordering or
// skipping stages never perturbs another stage's randomness:
//   stage_seed = splitmix64(master_seed ^ fnv1a64(stage_name))
inline uint64_t stage_seed(uint64_t master, const std::string& stage) {
  uint64_t s = master ^ fnv1a64(stage);
  return splitmix64(s);
}

// xoshiro256++ with a splitmix64-seeded state. Self-contained so that
// sampled datasets, initializations and training batches are bit-identical
// across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x853c49e6748fea9bull) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
    have_gauss_ = false;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int64_t below(int64_t n) { return int64_t(next_u64() % uint64_t(n)); }

  // Standard normal via Box-Muller; caches the second draw.
  double gauss() {
    if (have_gauss_) {
      have_gauss_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_gauss_ = true;
    return r * std::cos(a);
  }

  // Derives an independent child stream; consumes one draw.
  Rng split() { return Rng(next_u64()); }

  template <class It>
  void shuffle(It first, It last) {
    auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      auto j = below(i + 1);
      std::swap(first[i], first[j]);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
  double cached_ = 0.0;
  bool have_gauss_;
};

}  // namespace gu
