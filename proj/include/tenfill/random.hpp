#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tenfill {

// All generators in the library are std::mt19937_64 engines. Each consumer
// draws from its own stream, seeded by sub_seed(user_seed, tag) where tag
// names the stream ("factors", "mask", "noise", "init", ...). The mix is
// FNV-1a over the tag followed by two rounds of splitmix64, so streams are
// decorrelated and stable across releases.
using Engine = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace detail

constexpr std::uint64_t sub_seed(std::uint64_t seed, std::string_view tag) noexcept {
  return detail::splitmix64(detail::splitmix64(seed) ^ detail::fnv1a(tag));
}

inline Engine make_engine(std::uint64_t seed, std::string_view tag) {
  return Engine(sub_seed(seed, tag));
}

}  // namespace tenfill
