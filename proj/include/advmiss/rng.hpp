#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace advmiss {

/// splitmix64 finalizer; used to derive independent substreams from a base seed.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based seed derivation: the result depends only on (seed, keys), never on
/// how many other streams were derived before it.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(seed);
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

/// Uniform double in [0, 1) from a 64-bit counter hash.
inline double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
  return static_cast<double>(derive_seed(seed, {counter}) >> 11) * 0x1.0p-53;
}

/// FNV-1a over a string, for keying substreams by name.
constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace advmiss
