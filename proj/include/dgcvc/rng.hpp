#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace dgcvc {

// Deterministic seed derivation. Every module draws its initial parameters
// from a stream keyed by (global seed, module path), so adding or removing
// one module never shifts another's initialization. Per-step training
// streams are keyed by (seed, step), which makes checkpoint resume replay
// the exact batch sequence of an uninterrupted run.

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_str(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::mt19937_64 make_rng(uint64_t seed, const std::string& stream) {
  return std::mt19937_64(splitmix64(seed ^ hash_str(stream)));
}

inline std::mt19937_64 make_rng(uint64_t seed, const std::string& stream, uint64_t step) {
  return std::mt19937_64(splitmix64(splitmix64(seed ^ hash_str(stream)) + step));
}

}  // namespace dgcvc
