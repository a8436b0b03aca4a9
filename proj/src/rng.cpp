#include "last/rng.hpp"

namespace last {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= std::uint64_t(static_cast<unsigned char>(c));
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t split_seed(std::uint64_t root, std::string_view purpose) {
  return mix(root ^ fnv1a(purpose));
}

std::uint64_t split_seed(std::uint64_t root, std::string_view purpose, std::uint64_t index) {
  return mix(split_seed(root, purpose) + 0x9e3779b97f4a7c15ull * (index + 1));
}

}  // namespace last
