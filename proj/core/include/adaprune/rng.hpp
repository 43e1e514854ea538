#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace adaprune {

/// splitmix64; used to derive independent seed streams from one master seed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
  return mix64(master ^ mix64(stream));
}

inline std::mt19937_64 make_rng(uint64_t master, uint64_t stream) {
  return std::mt19937_64(derive_seed(master, stream));
}

inline void fill_uniform(std::mt19937_64& rng, std::span<double> out, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : out) v = dist(rng);
}

inline void fill_normal(std::mt19937_64& rng, std::span<double> out, double mean, double stddev) {
  if (stddev <= 0.0) {
    for (double& v : out) v = mean;
    return;
  }
  std::normal_distribution<double> dist(mean, stddev);
  for (double& v : out) v = dist(rng);
}

}  // namespace adaprune
