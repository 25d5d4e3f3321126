#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mtsmae/ndarray.hpp"

namespace mtsmae {

/// Normal(0, std) draws resampled until they fall within two standard deviations.
template <typename T>
NDArray<T> truncated_normal(Shape shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = static_cast<T>(z * std);
  }
  return NDArray<T>::from(std::move(shape), std::move(values), true);
}

constexpr double kInitStd = 0.02;

}  // namespace mtsmae
