#include "fedda/autodiff/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace fedda::ad {

void adam_step(NamedTensors& params, const NamedTensors& grads, OptimizerState& state) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("adam_step: missing gradient for " + name);
    if (it->second.shape() != p.shape()) {
      throw ShapeError("adam_step: gradient shape " + to_string(it->second.shape()) +
                       " does not match parameter " + name + " " + to_string(p.shape()));
    }
  }

  const AdamOptions& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);

  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    auto [m_it, m_new] = state.first_moment.try_emplace(name, p.shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, p.shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

}  // namespace fedda::ad
