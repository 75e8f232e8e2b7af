#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace gfslt {

// SplitMix64 step. Used both as the RNG core and as the stream-derivation mixer
// so that every random decision in the pipeline is a pure function of
// (seed, purpose, indices). Nothing depends on libc or libstdc++ distributions.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_u64(std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  return splitmix64(s);
}

inline std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a 64
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derive an independent stream seed from a base seed, a purpose tag and indices.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return mix_u64(seed, hash_str(tag));
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a) {
  return mix_u64(derive_seed(seed, tag), a);
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a,
                                 std::uint64_t b) {
  return mix_u64(derive_seed(seed, tag, a), b);
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a,
                                 std::uint64_t b, std::uint64_t c) {
  return mix_u64(derive_seed(seed, tag, a, b), c);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Lemire multiply-shift; slight bias is irrelevant
  // at the ranges used here (n << 2^32) and the mapping is fully deterministic.
  std::uint32_t uniform_u32(std::uint32_t n) {
    const std::uint64_t x = next_u64() >> 32;
    return static_cast<std::uint32_t>((x * n) >> 32);
  }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(uniform_u32(static_cast<std::uint32_t>(hi_inclusive - lo + 1)));
  }

  double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller without a cached spare: two uniforms per draw, stateless apart
  // from the counter, which keeps parallel replays trivially reproducible.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0,1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_u32(static_cast<std::uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace gfslt
