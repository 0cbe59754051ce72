#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedda/model/config.hpp"

namespace fedda::diag {

struct GradCaseResult {
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool finite = true;
  double tolerance = 0.0;

  bool passed() const { return finite && max_rel_error < tolerance; }
};

inline constexpr double kPrimitiveTolerance = 1e-5;
inline constexpr double kModelTolerance = 1e-4;

// Central-difference checks of every differentiable primitive and loss on
// random inputs drawn from `seed`.
std::vector<GradCaseResult> primitive_grad_suite(std::uint64_t seed);

// End-to-end check of dice + attention + LMMD loss through the whole model
// with respect to all parameters, perturbing `coords_per_array` random
// entries of each named array.
GradCaseResult model_grad_check(const model::ModelConfig& cfg, std::uint64_t seed,
                                std::size_t coords_per_array = 6);

// The V=8, P=4, T=2, L=2 geometry used by the end-to-end check.
model::ModelConfig small_check_config();

}  // namespace fedda::diag
