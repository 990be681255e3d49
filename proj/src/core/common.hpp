#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace groupflow {

// Thrown when an integrated coordinate leaves the sane range (|x| or |y|
// beyond kDivergenceLimit) or becomes non-finite.  Training catches this to
// abort while keeping the last checkpoint on disk.
class FlowDivergedError : public std::runtime_error {
 public:
  explicit FlowDivergedError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown by load paths on malformed or truncated files.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr double kDivergenceLimit = 1e3;

// --- deterministic RNG -----------------------------------------------------
//
// Self-contained so that generated datasets and initialized weights are
// bit-identical across platforms and standard-library versions (std::
// distributions are not portable).  splitmix64 whitens seeds and derives
// independent per-sequence streams; xoshiro256++ is the workhorse generator.

inline uint64_t splitmix64_next(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stream seed for item `index` under `master`.  Used so regenerating any one
// sequence of a dataset does not depend on the others.
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
  uint64_t s = master;
  // burn `index + 1` whitening steps so index 0 differs from the raw master
  uint64_t out = 0;
  for (uint64_t i = 0; i <= index; ++i) out = splitmix64_next(s);
  return out;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) w = splitmix64_next(s);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    // rejection sampling to avoid modulo bias
    const uint64_t bound = ~uint64_t{0} - (~uint64_t{0} % uint64_t(n));
    uint64_t x = next_u64();
    while (x >= bound) x = next_u64();
    return int(x % uint64_t(n));
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = last - first;
    for (auto i = n - 1; i > 0; --i) std::swap(first[i], first[uniform_int(int(i + 1))]);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> state_{};
};

// --- hashing ---------------------------------------------------------------

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xF];
  return s;
}

}  // namespace groupflow
