#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace glann {

// Deterministic RNG used everywhere. std::mt19937_64 is fully specified by
// the standard; the distributions are hand-rolled because the standard
// library ones are implementation-defined and would break cross-platform
// reproducibility of frozen test values.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1): 53 mantissa bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; caches the second draw.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  float normal_f() { return static_cast<float>(normal()); }
  float uniform_f() { return static_cast<float>(uniform()); }

  // Uniform integer in [0, n). n must be > 0. Modulo bias is negligible for
  // the pool/permutation sizes used here.
  uint64_t below(uint64_t n) { return engine_() % n; }

  // Fisher-Yates with the explicit draw above, so permutations are identical
  // across standard libraries.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  void fill_normal(float* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = normal_f();
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Stable sub-seed derivation: one global seed fans out to independent
// streams for datasets, latents, pools, samplers, ...
inline uint64_t derive_seed(uint64_t seed, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return splitmix64(seed ^ h);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index) {
  return splitmix64(derive_seed(seed, tag) + 0x632be59bd9b4e019ull * (index + 1));
}

}  // namespace glann
