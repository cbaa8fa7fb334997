#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>

#include "vadforge/error.hpp"
#include "vadforge/tensor.hpp"

namespace vadforge::detail {

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (!GradTape<T>::active()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T, typename Fn>
void record(Tensor<T>& out, Fn&& backward) {
  out.set_requires_grad(true);
  GradTape<T>::active()->record(out, std::forward<Fn>(backward));
}

template <typename T>
bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

// Heaviside step written without a comparison: compare-and-select loops
// do not vectorize under the default trapping-math rules, copysign does.
// +0 maps to 1 and -0 to 0, either of which is a valid subgradient.
template <typename T>
inline T step(T x) {
  return T(0.5) + T(0.5) * std::copysign(T(1), x);
}

// Deterministic sum of f(0..n-1): short blocks are summed in T (vectorizable),
// block totals in double.
template <typename T, typename F>
double block_sum(std::size_t n, F&& f) {
  constexpr std::size_t kBlock = 16;
  double total = 0.0;
  std::size_t j = 0;
  for (; j + kBlock <= n; j += kBlock) {
    T part = 0;
    for (std::size_t k = 0; k < kBlock; ++k) part += f(j + k);
    total += double(part);
  }
  for (; j < n; ++j) total += double(f(j));
  return total;
}

[[noreturn]] inline void dimension_error(const std::string& op, const std::string& detail) {
  fail(ErrorCode::kDimension, op + ": " + detail);
}

}  // namespace vadforge::detail
