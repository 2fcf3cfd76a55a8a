#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bifrn/errors.hpp"

namespace bifrn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Storage shared between Tensor handles. `grad` is empty until a backward
/// pass reaches the node.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T{0});
  }
};

/// Dense row-major tensor handle. Copies share storage; use `clone()` or
/// `detach()` for an independent buffer.
template <typename T>
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  /// Raw write access. Only meant for leaves (optimizer updates, test
  /// perturbations); mutating a recorded intermediate corrupts backward.
  std::span<T> mutable_values() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }

  T item() const;
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t i, std::size_t j) const;

  /// Same values, no history, requires_grad off.
  Tensor detach() const;
  /// Same values and requires_grad flag, fresh storage, no history.
  Tensor clone() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

/// Thread-local switch that stops ops from recording onto the tape.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();
};

/// Ordered record of differentiable ops executed on this thread since the
/// last backward pass. Entries are appended as ops run, so the sequence is
/// already topologically sorted.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const TensorNode<T>& out)>;

  struct Entry {
    std::shared_ptr<TensorNode<T>> output;
    BackwardFn backward;
  };

  static Tape& current();

  void record(std::shared_ptr<TensorNode<T>> output, BackwardFn fn);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1, replays the recorded ops in reverse, then
  /// frees the tape. Leaf gradients accumulate across calls.
  void backward(const Tensor<T>& loss);

 private:
  std::vector<Entry> entries_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>::current().backward(loss);
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace bifrn
