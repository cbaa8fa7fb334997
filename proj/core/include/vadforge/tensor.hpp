#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vadforge {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// N-dimensional row-major array with an optional gradient accumulator.
///
/// Tensor is a handle: copies share storage, which is what lets the tape refer
/// back to the inputs of an operation. Use clone() for an independent copy.
/// float is the production type; double exists for gradient checking.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  // Constness is shallow, as with std::shared_ptr: a const handle still
  // refers to mutable storage.
  std::span<T> data() const { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() const { return impl_->grad; }
  /// Allocates a zero gradient on first use and returns it.
  std::span<T> ensure_grad() const;
  void zero_grad() const;
  void drop_grad() const { impl_->grad.clear(); }

  Tensor clone() const;
  bool same(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of executed operations. Because entries are appended in
/// execution order, replaying them in reverse is a valid topological order and
/// visits every recorded node exactly once.
template <typename T>
class GradTape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& output)>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(Tensor<T> output, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable tensor that
  /// requires grad. Leaf gradients accumulate across calls; intermediate
  /// gradients are reset first. The tape is cleared unless retain is set.
  void backward(const Tensor<T>& loss, bool retain = false);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  void clear() { entries_.clear(); }

  /// Tape that operations on this thread currently record into, or null.
  static GradTape* active();

 private:
  template <typename>
  friend class TapeScope;

  struct Entry {
    Tensor<T> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

/// Makes a tape active for the current thread for the scope's lifetime.
/// Without an active tape, operations run without recording (inference).
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(GradTape<T>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape<T>* previous_;
};

/// Temporarily disables recording (e.g. validation inside a training loop).
template <typename T>
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  GradTape<T>* previous_;
};

namespace detail {

template <typename T>
GradTape<T>*& active_tape() {
  thread_local GradTape<T>* tape = nullptr;
  return tape;
}

}  // namespace detail

}  // namespace vadforge
