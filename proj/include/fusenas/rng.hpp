#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fusenas {

// Counter-based deterministic generator built on the SplitMix64 mixer
// (constants 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9, 0x94D049BB133111EB).
// Output depends only on (key, counter), so streams are reproducible
// byte-for-byte across platforms and independent of call interleaving.
class DetRng {
 public:
  explicit DetRng(std::uint64_t key) : key_(key), counter_(0) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return mix(key_ ^ (0xA0761D6478BD642FULL * ++counter_)); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  // Box-Muller; draws two uniforms per call, no cached state.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

// Order-sensitive combination of seed material (master seed, cycle, expert
// indices, role tags). Same inputs always give the same derived key.
inline std::uint64_t derive_seed(std::uint64_t master) { return DetRng::mix(master); }

template <typename... Rest>
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t next, Rest... rest) {
  return derive_seed(DetRng::mix(master ^ (next + 0x9E3779B97F4A7C15ULL)), rest...);
}

inline std::uint64_t seed_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace fusenas
