#include "protoseg/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace protoseg {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void expect_shape(const Shape& actual, const Shape& expected, const char* what) {
  if (actual != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " + shape_str(actual));
  }
}

void expect_rank(const Shape& actual, int rank, const char* what) {
  if (static_cast<int>(actual.size()) != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(actual));
  }
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty() && value.size() > 0) grad = Tensor<T>(value.shape());
  if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  auto& buf = grad_buffer();
  expect_shape(g.shape(), buf.shape(), "gradient accumulation");
  auto dst = buf.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (!node_) return {};
  if (node_->grad.empty()) return Tensor<T>(node_->value.shape());
  return node_->grad;
}

template <typename T>
void Var<T>::zero_grad() {
  if (node_) node_->grad = Tensor<T>();
}

template <typename T>
Var<T> Var<T>::make(Tensor<T> value, std::vector<Var> parents, std::function<void(Node<T>&)> backward) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

template <typename T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  if (!root.requires_grad()) return;
  expect_shape(seed.shape(), root.shape(), "backward seed");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  // Interior gradients are not needed after the pass.
  for (Node<T>* node : order) {
    if (node->backward) node->grad = Tensor<T>();
  }
}

template <typename T>
void backward(const Var<T>& root) {
  backward(root, Tensor<T>(root.shape(), T(1)));
}

#define PROTOSEG_INSTANTIATE(T)                                 \
  template bool all_finite<T>(const Tensor<T>&);                \
  template struct Node<T>;                                      \
  template class Var<T>;                                        \
  template void backward<T>(const Var<T>&);                     \
  template void backward<T>(const Var<T>&, const Tensor<T>&);

PROTOSEG_INSTANTIATE(float)
PROTOSEG_INSTANTIATE(double)

}  // namespace protoseg
