#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "gfslt/errors.hpp"

namespace gfslt {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Dense row-major tensor. The scalar type is templated so the gradient checker
// can replay the exact same graph in double precision; the product path is the
// float instantiation throughout. Copying a Tensor copies handles, not data.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    t.shape = std::move(shape);
    const auto n = static_cast<std::size_t>(shape_numel(t.shape));
    t.data = std::make_shared<std::vector<T>>(n, T(0));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<T>>(n, T(0));
    return t;
  }

  static Tensor from_values(std::vector<int> shape, std::vector<T> values,
                            bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw DimError("tensor init: shape " + shape_str(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<T>>(t.data->size(), T(0));
    return t;
  }

  std::int64_t numel() const { return shape_numel(shape); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // Buffers are shared handles; a const Tensor still exposes mutable storage,
  // matching the tape's view of tensors as cheap references into the graph.
  T* ptr() const { return data->data(); }
  T* grad_ptr() const { return grad->data(); }

  bool defined() const { return static_cast<bool>(data); }

  T item() const {
    if (numel() != 1) throw DimError("item() on non-scalar tensor " + shape_str(shape));
    return (*data)[0];
  }

  void ensure_grad() {
    if (!grad) grad = std::make_shared<std::vector<T>>(data->size(), T(0));
  }

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), T(0));
  }
};

template <class T>
Tensor<T> scalar_tensor(T v, bool requires_grad = false) {
  return Tensor<T>::from_values({1}, {v}, requires_grad);
}

// Exact-cast helper between scalar types (float -> double embeds exactly).
template <class TO, class TI>
Tensor<TO> tensor_cast(const Tensor<TI>& x) {
  Tensor<TO> out;
  out.shape = x.shape;
  out.data = std::make_shared<std::vector<TO>>(x.data->size());
  for (std::size_t i = 0; i < x.data->size(); ++i)
    (*out.data)[i] = static_cast<TO>((*x.data)[i]);
  out.requires_grad = false;
  return out;
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace gfslt
