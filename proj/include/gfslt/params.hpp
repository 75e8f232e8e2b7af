#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "gfslt/errors.hpp"
#include "gfslt/rng.hpp"
#include "gfslt/tensor.hpp"

namespace gfslt {

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
};

// Named, shaped float parameter arrays. Values are owned here; gradients live
// in GradSink instances so independent forward/backward evaluations (one per
// batch sample) can accumulate without touching each other.
class ParameterStore {
 public:
  int add(const std::string& name, std::vector<int> shape) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    return add(name, std::move(shape), std::vector<float>(n, 0.0f));
  }

  int add(const std::string& name, std::vector<int> shape, std::vector<float> values) {
    if (index_.count(name)) throw ConfigError("parameter '" + name + "' registered twice");
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw DimError("parameter '" + name + "': shape " + shape_str(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " + std::to_string(values.size()));
    const int idx = static_cast<int>(infos_.size());
    infos_.push_back({name, std::move(shape)});
    values_.push_back(std::make_shared<std::vector<float>>(std::move(values)));
    index_[name] = idx;
    return idx;
  }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  int require(const std::string& name) const {
    const int i = index_of(name);
    if (i < 0) throw ConfigError("parameter '" + name + "' not found");
    return i;
  }

  int count() const { return static_cast<int>(infos_.size()); }
  const ParamInfo& info(int i) const { return infos_[static_cast<std::size_t>(i)]; }
  const std::shared_ptr<std::vector<float>>& value(int i) const { return values_[static_cast<std::size_t>(i)]; }
  std::shared_ptr<std::vector<float>>& value(int i) { return values_[static_cast<std::size_t>(i)]; }

  std::int64_t total_elems() const {
    std::int64_t n = 0;
    for (const auto& info : infos_) n += shape_numel(info.shape);
    return n;
  }

 private:
  std::vector<ParamInfo> infos_;
  std::vector<std::shared_ptr<std::vector<float>>> values_;
  std::unordered_map<std::string, int> index_;
};

// One gradient buffer per parameter tensor. A training step owns one sink per
// batch sample plus one for batch-level ops; reducing them in fixed sample
// order keeps results independent of thread count.
class GradSink {
 public:
  explicit GradSink(const ParameterStore& store) {
    grads_.reserve(static_cast<std::size_t>(store.count()));
    for (int i = 0; i < store.count(); ++i)
      grads_.push_back(std::make_shared<std::vector<float>>(store.value(i)->size(), 0.0f));
  }

  const std::shared_ptr<std::vector<float>>& grad(int i) const { return grads_[static_cast<std::size_t>(i)]; }

  void zero() {
    for (auto& g : grads_) std::fill(g->begin(), g->end(), 0.0f);
  }

  int count() const { return static_cast<int>(grads_.size()); }

  // Accumulate other's gradients into this sink (fixed element order).
  void accumulate(const GradSink& other) {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      auto& dst = *grads_[i];
      const auto& src = *other.grads_[i];
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }

 private:
  std::vector<std::shared_ptr<std::vector<float>>> grads_;
};

// Binds the store (and optionally a sink) into tensor handles usable on a tape.
// The double binding deep-copies values for the finite-difference oracle.
template <class T>
class ParamView {
 public:
  ParamView() = default;

  const Tensor<T>& operator[](int i) const { return tensors_[static_cast<std::size_t>(i)]; }
  int count() const { return static_cast<int>(tensors_.size()); }

  void perturb(int i, std::int64_t elem, T delta) {
    (*tensors_[static_cast<std::size_t>(i)].data)[static_cast<std::size_t>(elem)] += delta;
  }

  std::vector<Tensor<T>> tensors_;
};

// Training / analytic-gradient binding: tensors alias store values and write
// gradients into the sink. Pass nullptr for forward-only evaluation.
inline ParamView<float> bind(const ParameterStore& store, GradSink* sink) {
  ParamView<float> v;
  v.tensors_.reserve(static_cast<std::size_t>(store.count()));
  for (int i = 0; i < store.count(); ++i) {
    Tensor<float> t;
    t.shape = store.info(i).shape;
    t.data = store.value(i);
    if (sink) {
      t.grad = sink->grad(i);
      t.requires_grad = true;
    }
    v.tensors_.push_back(std::move(t));
  }
  return v;
}

inline ParamView<double> bind_double(const ParameterStore& store) {
  ParamView<double> v;
  v.tensors_.reserve(static_cast<std::size_t>(store.count()));
  for (int i = 0; i < store.count(); ++i) {
    Tensor<double> t;
    t.shape = store.info(i).shape;
    const auto& src = *store.value(i);
    t.data = std::make_shared<std::vector<double>>(src.begin(), src.end());
    v.tensors_.push_back(std::move(t));
  }
  return v;
}

// Fan-in scaled normal init used by all weight matrices and conv kernels.
inline std::vector<float> normal_init(std::int64_t n, double std_dev, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(rng.normal() * std_dev);
  return v;
}

}  // namespace gfslt
