#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "pecon/error.hpp"

namespace pecon {

namespace detail {

// splitmix64 finalizer; also used to derive child seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

// Deterministic 64-bit-state generator (splitmix64). Streams for distinct
// purposes are derived with split(), so adding a consumer never shifts the
// draws of another. Sequences are reproducible within one build; no
// cross-language bit contract is claimed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return detail::mix64(state_);
  }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // unbiased integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) fail(ErrorKind::invalid_argument, "next_below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; the sine partner is discarded so each
  // draw consumes exactly two uniforms.
  double next_gaussian() {
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Rng split(std::uint64_t tag) const {
    return Rng(detail::mix64(state_ ^ detail::mix64(tag + 0xa0761d6478bd642full)));
  }

  Rng split(std::string_view tag) const { return split(detail::fnv1a(tag)); }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// Seed for a (purpose, index) stream below a base seed; used for per-epoch
// shuffles and per-component initialization.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose,
                                 std::uint64_t index = 0) {
  return Rng(base).split(purpose).split(index).state();
}

// Fisher-Yates permutation of {0..n-1}; pure function of the rng state.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace pecon
