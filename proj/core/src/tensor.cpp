#include "vadforge/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "vadforge/error.hpp"

namespace vadforge {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<Impl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
  if (shape_numel(shape) != values.size()) {
    fail(ErrorCode::kDimension, "tensor shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) fail(ErrorCode::kUsage, "item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() const {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor<T>(impl_->shape, impl_->data);
}

template <typename T>
void GradTape<T>::record(Tensor<T> output, BackwardFn backward) {
  entries_.push_back(Entry{std::move(output), std::move(backward)});
}

template <typename T>
void GradTape<T>::backward(const Tensor<T>& loss, bool retain) {
  if (!loss.defined() || loss.numel() != 1) {
    fail(ErrorCode::kUsage, "backward() needs a scalar loss, got shape " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  bool on_tape = false;
  for (auto& e : entries_) {
    e.output.drop_grad();
    on_tape = on_tape || e.output.same(loss);
  }
  if (!on_tape && !loss.requires_grad()) {
    fail(ErrorCode::kUsage, "backward() on a loss that was not recorded on this tape");
  }
  Tensor<T> seed = loss;
  seed.ensure_grad()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward(it->output);
  }
  if (!retain) entries_.clear();
}

template <typename T>
GradTape<T>* GradTape<T>::active() {
  return detail::active_tape<T>();
}

template <typename T>
TapeScope<T>::TapeScope(GradTape<T>& tape) : previous_(detail::active_tape<T>()) {
  detail::active_tape<T>() = &tape;
}

template <typename T>
TapeScope<T>::~TapeScope() {
  detail::active_tape<T>() = previous_;
}

template <typename T>
NoGradScope<T>::NoGradScope() : previous_(detail::active_tape<T>()) {
  detail::active_tape<T>() = nullptr;
}

template <typename T>
NoGradScope<T>::~NoGradScope() {
  detail::active_tape<T>() = previous_;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template class NoGradScope<float>;
template class NoGradScope<double>;

}  // namespace vadforge
