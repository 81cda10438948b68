#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "vist/tensor.hpp"

namespace vist {

/// Seeded parameter initializer. Draws in double and narrows, so float and
/// double models built from one seed agree up to rounding.
class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : rng_(seed) {}

  template <typename T>
  Tensor<T> uniform(Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> data(shape_size(shape));
    for (auto& v : data) v = static_cast<T>(dist(rng_));
    return Tensor<T>(std::move(shape), std::move(data), true);
  }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  template <typename T>
  Tensor<T> fan_in(Shape shape, std::size_t fan_in) {
    return uniform<T>(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)));
  }

  template <typename T>
  Tensor<T> constant(Shape shape, double value) {
    return Tensor<T>::full(std::move(shape), static_cast<T>(value), true);
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace vist
