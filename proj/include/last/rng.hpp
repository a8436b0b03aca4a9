#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "last/tensor.hpp"

namespace last {

// splitmix64; all randomness in the toolkit flows through this generator so
// results are reproducible across standard libraries and platforms.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1), 53-bit resolution.
  real uniform() { return real((next_u64() >> 11) * (1.0 / 9007199254740992.0)); }

  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; two fresh uniforms per draw.
  real normal() {
    double u1 = ((next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    double u2 = (next_u64() >> 11) * (1.0 / 9007199254740992.0);
    return real(std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2));
  }

  real rademacher() { return (next_u64() & 1ull) ? real(1) : real(-1); }

  std::size_t below(std::size_t n) { return std::size_t(next_u64() % n); }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = below(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

private:
  std::uint64_t state_;
};

// One root seed, split per consumer. Purposes are short literal tags
// ("init", "attack", "data", ...) hashed with FNV-1a and mixed back in.
std::uint64_t split_seed(std::uint64_t root, std::string_view purpose);
std::uint64_t split_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index);

}  // namespace last
