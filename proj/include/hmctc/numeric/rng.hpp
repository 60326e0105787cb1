#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hmctc {

// Independent generator streams derived from one run seed, so that adding a
// consumer (e.g. an extra output head) never shifts another consumer's draws.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the stream name
  for (unsigned char c : stream) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (h | 1);  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view stream) {
  return std::mt19937_64(derive_seed(seed, stream));
}

}  // namespace hmctc
