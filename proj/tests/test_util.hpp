#pragma once

#include <cstdint>
#include <random>

#include "fedda/autodiff/tensor.hpp"

namespace fedda::testing {

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  ad::Tensor t(std::move(shape));
  for (auto& x : t.data()) x = dist(rng);
  return t;
}

// Values bounded away from zero, for ops with a kink or pole at 0.
inline ad::Tensor random_away_from_zero(ad::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  ad::Tensor t(std::move(shape));
  for (auto& x : t.data()) x = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

}  // namespace fedda::testing
