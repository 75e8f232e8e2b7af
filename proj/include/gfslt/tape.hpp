#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "gfslt/errors.hpp"
#include "gfslt/tensor.hpp"

namespace gfslt {

// Reverse-mode tape. Ops append their backward closures in execution order,
// which is a topological order of the graph, so the backward pass is a single
// reverse sweep visiting each node exactly once. A tape is single-use:
// a second backward without rebuilding the graph is an error.
template <class T>
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad() const { return grad_enabled_; }

  void record(std::function<void()> fn) {
    if (grad_enabled_) nodes_.push_back(std::move(fn));
  }

  // Standard entry point: seed d(root)/d(root) = 1 on a scalar and sweep.
  void backward(Tensor<T>& root) {
    if (root.numel() != 1) throw DimError("backward: root must be scalar, got " + shape_str(root.shape));
    if (!root.requires_grad || !root.grad)
      throw InputError("backward: root does not require grad");
    (*root.grad)[0] = T(1);
    backward_seeded();
  }

  // Sweep assuming output gradients were already seeded by a downstream tape.
  void backward_seeded() {
    if (consumed_) throw InputError("backward: tape already consumed; rebuild the graph");
    consumed_ = true;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<std::function<void()>> nodes_;
  bool grad_enabled_ = true;
  bool consumed_ = false;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace gfslt
