#pragma once

#include <cmath>
#include <random>

#include "carpe/tensor.hpp"

namespace carpe {

// Uniform draw in [-bound, bound) built from one raw 32-bit output so the
// value stream depends only on the mt19937 seed, not on the standard
// library's distribution implementation.
inline double uniform_symmetric(std::mt19937& rng, double bound) {
  const double u = static_cast<double>(rng()) * (1.0 / 4294967296.0);  // [0, 1)
  return (2.0 * u - 1.0) * bound;
}

// Fills a weight tensor with uniform values scaled by 1/sqrt(fan_in), the
// usual flat init for small fully-connected and conv layers.
template <class S>
void fill_fan_in_uniform(Tensor<S>& t, int fan_in, std::mt19937& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (S& v : t.values()) {
    v = static_cast<S>(uniform_symmetric(rng, bound));
  }
}

// In-place Fisher-Yates shuffle driven by raw mt19937 draws (rejection
// sampling for unbiased indices), again to stay identical across standard
// libraries.
template <class T>
void deterministic_shuffle(std::vector<T>& items, std::mt19937& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = (std::uint64_t{1} << 32) - ((std::uint64_t{1} << 32) % bound);
    std::uint64_t draw = rng();
    while (draw >= limit) {
      draw = rng();
    }
    std::swap(items[i - 1], items[draw % bound]);
  }
}

}  // namespace carpe
