#pragma once

#include <cstddef>
#include <cstdint>

#include <Eigen/Dense>

#include "robustpref/errors.hpp"

namespace robustpref {

// SplitMix64 finalizer. Bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for an independent substream. `stream` tags the pipeline stage,
// `index` the record, so every record owns its generator and datasets come
// out identical no matter how sampling work is ordered or parallelized.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index) {
  std::uint64_t h = mix64(seed ^ 0x8f1bbcdcbfa53e0bULL);
  h = mix64(h ^ (stream + 0x2545f4914f6cdd1dULL));
  h = mix64(h ^ (index + 0x9e3779b97f4a7c15ULL));
  return h;
}

// Counter-based SplitMix64 generator. Word sequence is a pure function of
// the seed, which keeps every artifact bit-reproducible across runs.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform index in [0, n) via 128-bit multiply; bounded bias < 2^-64.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw InvalidInputError("uniform_index: n must be positive");
    unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::size_t>(wide >> 64);
  }

  // CDF inversion over a probability vector. Entries must be >= 0 and sum
  // to ~1; the final bucket absorbs rounding slack.
  Eigen::Index categorical(const Eigen::VectorXd& probs) {
    const double u = next_double();
    double acc = 0.0;
    for (Eigen::Index i = 0; i + 1 < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;
  }

  bool bernoulli(double p) { return next_double() < p; }

 private:
  std::uint64_t state_;
};

}  // namespace robustpref
