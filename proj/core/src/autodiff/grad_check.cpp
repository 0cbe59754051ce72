#include "fedda/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace fedda::ad {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  Var xv = tape.constant(x);
  return f(tape, xv).value().item();
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps,
                           std::span<const std::size_t> coordinates) {
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.param(x);
    Var loss = f(tape, xv);
    analytic = tape.backward(loss).of(xv);
  }

  std::vector<std::size_t> all;
  if (coordinates.empty()) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coordinates = all;
  }

  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t idx : coordinates) {
    const double orig = probe[idx];
    probe[idx] = orig + eps;
    const double up = evaluate(f, probe);
    probe[idx] = orig - eps;
    const double down = evaluate(f, probe);
    probe[idx] = orig;

    const double numeric = (up - down) / (2.0 * eps);
    ++result.checked;
    if (!std::isfinite(numeric)) {
      result.finite = false;
      result.max_rel_error = INFINITY;
      result.worst_index = idx;
      continue;
    }
    const double err =
        std::fabs(analytic[idx] - numeric) / std::max(1.0, std::fabs(analytic[idx]));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_index = idx;
    }
  }
  return result;
}

}  // namespace fedda::ad
