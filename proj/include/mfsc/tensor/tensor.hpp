#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfsc::tensor {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised by any primitive whose operands have incompatible extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b);
[[noreturn]] void shape_error(const char* op, const Shape& a, const std::string& what);

template <typename T>
struct Node {
  std::vector<T> data;
  Shape shape;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

/// Shared handle to a node in the dynamic computation graph.
///
/// Values are immutable once an op has produced them. Leaf tensors
/// (parameters) may be mutated in place by an optimizer between graphs.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }
  const char* op_name() const { return impl_->op; }

  const std::shared_ptr<Node<T>>& node() const { return impl_; }
  static Tensor from_node(std::shared_ptr<Node<T>> node) {
    Tensor t;
    t.impl_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<Node<T>> impl_;
};

// Graph recording is on by default; NoGradGuard disables it on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op output node, wiring parents only when recording is enabled
/// and some input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward);

/// Topologically ordered record of every node reachable from a root that
/// participates in differentiation. Replaying it in reverse propagates
/// adjoints from the root to the leaves.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);

  void replay() const;
  std::size_t size() const { return order_.size(); }
  std::vector<std::string> op_names() const;

 private:
  std::vector<std::shared_ptr<Node<T>>> order_;
};

/// Seeds d(loss)/d(loss) = 1 and accumulates grads into every reachable
/// requires_grad tensor. Throws if loss is not a scalar.
template <typename T>
void backward(const Tensor<T>& loss);

/// Degenerate-input counters raised by normalizing primitives.
struct Diagnostics {
  std::uint64_t zero_norm_rows = 0;
};
Diagnostics& diagnostics();

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mfsc::tensor
