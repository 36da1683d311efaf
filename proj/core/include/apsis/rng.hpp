// Deterministic random streams with stable output across platforms.
#pragma once

#include <cstdint>
#include <string_view>

namespace apsis {

// splitmix64 generator with Box-Muller normals. Streams for subsystems are
// derived from a base seed and a text label so draw order stays decoupled.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n);

  // Standard normal via Box-Muller; generates in pairs.
  double normal();

  // Seed for a labeled substream (FNV-1a over the label, mixed with seed).
  static std::uint64_t derive(std::uint64_t seed, std::string_view label);

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace apsis
