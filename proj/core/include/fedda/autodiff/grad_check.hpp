#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "fedda/autodiff/tape.hpp"

namespace fedda::ad {

// Builds a scalar loss on `tape` from the leaf `x`.
using ScalarFn = std::function<Var(Tape& tape, const Var& x)>;

struct GradCheckResult {
  // max over checked coordinates of |analytic - numeric| / max(1, |analytic|)
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  // False when some central-difference estimate was NaN or infinite.
  bool finite = true;
};

// Central-difference check of the reverse-mode gradient of f at x. When
// `coordinates` is non-empty only those flat indices are perturbed.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5,
                           std::span<const std::size_t> coordinates = {});

}  // namespace fedda::ad
