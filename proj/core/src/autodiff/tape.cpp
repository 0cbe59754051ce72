#include "fedda/autodiff/tape.hpp"

#include <algorithm>
#include <stdexcept>

namespace fedda::ad {

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("use of unbound Var");
  return tape_->nodes_[id_].value;
}

bool Var::requires_grad() const {
  if (!tape_) throw std::logic_error("use of unbound Var");
  return tape_->nodes_[id_].requires_grad;
}

Tensor Gradients::of(const Var& v) const {
  if (reached(v)) return grads_[v.id()];
  return Tensor::zeros(v.shape());
}

bool Gradients::reached(const Var& v) const {
  return v.id() < present_.size() && present_[v.id()];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward,
                 const char* op_name) {
  Node node;
  node.value = std::move(value);
  node.op_name = op_name;
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape_ != this) {
      throw std::logic_error(std::string(op_name) + ": input from another tape");
    }
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) {
    node.backward = std::move(backward);
    ++op_count_;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(const Var& loss) const {
  if (loss.tape_ != this) throw std::logic_error("backward: loss from another tape");
  if (nodes_.empty()) throw std::logic_error("backward: empty tape");
  const Node& root = nodes_[loss.id_];
  if (root.value.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " +
                     to_string(root.value.shape()));
  }

  Gradients out;
  out.grads_.resize(loss.id_ + 1);
  out.present_.assign(loss.id_ + 1, false);
  out.grads_[loss.id_] = Tensor::ones(root.value.shape());
  out.present_[loss.id_] = true;

  std::vector<Tensor*> input_grads;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    if (!out.present_[id]) continue;
    const Node& node = nodes_[id];
    if (!node.backward) continue;

    input_grads.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (!out.present_[in]) {
        out.grads_[in] = Tensor::zeros(nodes_[in].value.shape());
        out.present_[in] = true;
      }
      input_grads[k] = &out.grads_[in];
    }
    node.backward(node.value, out.grads_[id], input_grads);

    // Interior gradients are no longer needed once propagated.
    if (!node.inputs.empty()) {
      out.grads_[id] = Tensor();
      out.present_[id] = false;
    }
  }
  return out;
}

void Tape::note_attention_buffer(std::size_t elements) {
  peak_attention_ = std::max(peak_attention_, elements);
}

}  // namespace fedda::ad
