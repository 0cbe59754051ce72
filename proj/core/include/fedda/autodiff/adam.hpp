#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fedda/autodiff/tensor.hpp"

namespace fedda::ad {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected adaptive-moment state. Moment buffers are created lazily,
// shaped like the parameter they track.
struct OptimizerState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

using NamedTensors = std::map<std::string, Tensor>;

// One update of every parameter in `params`. Each name must have a gradient
// of the same shape in `grads`.
void adam_step(NamedTensors& params, const NamedTensors& grads, OptimizerState& state);

}  // namespace fedda::ad
