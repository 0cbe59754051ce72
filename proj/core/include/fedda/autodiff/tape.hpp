#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedda/autodiff/tensor.hpp"

namespace fedda::ad {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradients produced by one backward pass, indexed by node id.
class Gradients {
 public:
  // Gradient w.r.t. v; zeros shaped like v when v is not on any path to the loss.
  Tensor of(const Var& v) const;
  bool reached(const Var& v) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

// Receives a node's forward value and output gradient, and accumulates into
// its inputs. Entries of `input_grads` are null for inputs that do not
// require grad.
using BackwardFn = std::function<void(const Tensor& out, const Tensor& grad_out,
                                      std::span<Tensor* const> input_grads)>;

// Ordered record of executed primitives. Node ids are assigned in execution
// order, so every op's inputs precede it. Single-threaded; use one tape per
// concurrent context.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var param(Tensor value) { return leaf(std::move(value), true); }

  // Records an op result. The backward closure is kept only when some input
  // requires grad; otherwise the result is a constant.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward,
             const char* op_name);

  // Reverse pass from a scalar node. May be called more than once.
  Gradients backward(const Var& loss) const;

  std::size_t size() const { return nodes_.size(); }
  // Number of recorded differentiable ops.
  std::size_t op_count() const { return op_count_; }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op_name; }
  // Ids of the inputs of node `id`, in call order.
  const std::vector<std::size_t>& inputs_of(std::size_t id) const {
    return nodes_.at(id).inputs;
  }

  // Largest attention score buffer (elements) materialized on this tape.
  void note_attention_buffer(std::size_t elements);
  std::size_t peak_attention_buffer() const { return peak_attention_; }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const char* op_name = "leaf";
  };

  // Deque keeps value references stable while the tape grows.
  std::deque<Node> nodes_;
  std::size_t op_count_ = 0;
  std::size_t peak_attention_ = 0;
};

}  // namespace fedda::ad
