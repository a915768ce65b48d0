#pragma once

// Deterministic random number generation. Everything in the simulator draws
// from Rng streams derived with stream_seed(), never from std:: distributions,
// so a (seed, config, dataset) triple reproduces a run bit-for-bit on any
// platform.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace fellas {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
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

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  a ^= b + 0x9e3779b97f4a7c15ULL + (a << 12) + (a >> 4);
  return splitmix64(a);
}

// Derives an independent stream seed from a root seed, a purpose tag and up
// to two integer coordinates (user id, round, ...).
inline std::uint64_t stream_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  return hash_combine(hash_combine(hash_combine(root, fnv1a64(tag)), a), b);
}

// xoshiro256++ (Blackman & Vigna), state expanded from the seed via splitmix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) {
      x += 0x9e3779b97f4a7c15ULL;
      w = splitmix64(x);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1), 53 bits of entropy.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n) by rejection, exact for any n >= 1.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller; consumes exactly two uniforms.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  void fill_normal(std::span<double> out) {
    std::size_t i = 0;
    while (i + 1 < out.size()) {
      double u1 = 1.0 - uniform();
      double u2 = uniform();
      double r = std::sqrt(-2.0 * std::log(u1));
      double a = 2.0 * std::numbers::pi * u2;
      out[i++] = r * std::cos(a);
      out[i++] = r * std::sin(a);
    }
    if (i < out.size()) out[i] = normal();
  }

  double exponential(double rate) {
    if (!(rate > 0.0)) throw std::invalid_argument("exponential: rate <= 0");
    return -std::log(1.0 - uniform()) / rate;
  }

  // Gamma(shape, rate) for integer shape as a sum of exponentials. Exact
  // density, fixed uniform consumption (shape draws).
  double gamma_int(int shape, double rate) {
    if (shape < 1) throw std::invalid_argument("gamma_int: shape < 1");
    double acc = 0.0;
    for (int i = 0; i < shape; ++i) acc += -std::log(1.0 - uniform());
    return acc / rate;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace fellas
