#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "protoseg/tensor.hpp"

namespace protoseg {

// Reverse-mode autodiff over Tensor values. A Var is a cheap handle to a node
// in a dynamically built graph; ops record their parents and a closure that
// pushes the node's gradient into them.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor<T>& g);
  Tensor<T>& grad_buffer();
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Gradient after backward(); zeros of the right shape if nothing flowed in.
  Tensor<T> grad() const;
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad();

  // Leaf parameters are updated in place by optimizers.
  Tensor<T>& mutable_value() { return node_->value; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  // Internal: builds a result node. When grad recording is off or no parent
  // needs a gradient the result is a constant leaf.
  static Var make(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> backward);

 private:
  std::shared_ptr<Node<T>> node_;
};

// Runs backpropagation from `root`, seeding with ones (scalar losses) or the
// supplied seed tensor.
template <typename T>
void backward(const Var<T>& root);
template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed);

// Detached copy: same value, no history.
template <typename T>
Var<T> detach(const Var<T>& v) {
  return Var<T>(v.value(), false);
}

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace protoseg
