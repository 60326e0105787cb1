#pragma once

#include "hmctc/numeric/tensor.hpp"

#include <random>

namespace hmctc::testing {

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::zeros(rows, cols);
  for (auto& x : t.values()) x = n(rng);
  return t;
}

}  // namespace hmctc::testing
