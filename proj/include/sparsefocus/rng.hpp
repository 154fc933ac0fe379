#ifndef SPARSEFOCUS_RNG_HPP
#define SPARSEFOCUS_RNG_HPP

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace sparsefocus {

// splitmix64; used to mix seeds and derive independent sub-streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d49bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic sub-stream seed from a master seed and a textual scope
// (e.g. "train/17" or "aug/3/12"). Independent of call order.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view scope) {
  return splitmix64(master ^ splitmix64(fnv1a64(scope)));
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::string_view scope) {
  return std::mt19937_64(derive_seed(master, scope));
}

}  // namespace sparsefocus

#endif  // SPARSEFOCUS_RNG_HPP
