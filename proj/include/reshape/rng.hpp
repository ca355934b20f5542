#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

#include "reshape/tensor.hpp"

namespace reshape {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stable sub-seed derivation: hash (seed, purpose) so that independent
/// consumers of one user-facing seed never share a stream.
inline uint64_t derive_seed(uint64_t seed, std::string_view purpose) {
  uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (char c : purpose) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view purpose, uint64_t index) {
  uint64_t h = derive_seed(seed, purpose) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
  return splitmix64(h);
}

/// xoshiro256** generator. Self-contained so that streams are identical
/// across standard libraries and serializable into checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform double in [0,1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes two uniforms per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(
        (static_cast<unsigned __int128>(next_u64()) * static_cast<uint64_t>(n)) >> 64);
  }

  void fill_normal(Tensor& t, float mean, float stddev) {
    for (int64_t i = 0; i < t.size(); ++i)
      t[i] = mean + stddev * static_cast<float>(normal());
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> s_{};
};

}  // namespace reshape
