#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>

namespace coverbias {

// SplitMix64 finalizer; maps (seed, stream index) to a well-mixed child seed.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::mt19937_64& engine() noexcept { return engine_; }

  // Uniform on [0, 1) from the top 53 bits.
  double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal(double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(engine_);
  }

  template <typename T>
  void shuffle(std::span<T> values) {
    // Fisher-Yates with uniform() so the permutation does not depend on the
    // standard library's distribution implementation.
    for (std::size_t i = values.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform() * static_cast<double>(i));
      if (j >= i) j = i - 1;
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace coverbias
