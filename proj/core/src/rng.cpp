#include "apsis/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace apsis {

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n <= 0");
  // Rejection sampling to avoid modulo bias.
  std::uint64_t bound = ~0ull - (~0ull % static_cast<std::uint64_t>(n));
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= bound);
  return static_cast<int>(x % static_cast<std::uint64_t>(n));
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = uniform();
  while (u1 == 0.0) u1 = uniform();
  double u2 = uniform();
  double mag = std::sqrt(-2.0 * std::log(u1));
  double ang = 2.0 * std::numbers::pi * u2;
  cached_ = mag * std::sin(ang);
  has_cached_ = true;
  return mag * std::cos(ang);
}

std::uint64_t Rng::derive(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  // Mix with the base seed through one splitmix round.
  std::uint64_t z = seed ^ h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace apsis
