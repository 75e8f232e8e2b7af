#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gfslt/params.hpp"

namespace gfslt {

// lr = lr_min + (lr_max - lr_min)(1 + cos(pi * step / total)) / 2, with the
// endpoints returned exactly and steps past the horizon clamped to lr_min.
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max, double lr_min) {
  if (step < 0) throw ConfigError("cosine_lr: step must be >= 0");
  if (total_steps < 1) throw ConfigError("cosine_lr: total_steps must be >= 1");
  if (step == 0) return lr_max;
  if (step >= total_steps) return lr_min;
  const double phase = 3.14159265358979323846 * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

inline double global_grad_norm(const GradSink& grads) {
  double sq = 0.0;
  for (int i = 0; i < grads.count(); ++i)
    for (float g : *grads.grad(i)) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

inline void scale_gradients(GradSink& grads, double factor) {
  for (int i = 0; i < grads.count(); ++i)
    for (float& g : *grads.grad(i)) g = static_cast<float>(g * factor);
}

// Clip to max_norm (disabled when max_norm <= 0). Returns the pre-clip norm.
inline double clip_grad_norm(GradSink& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is non-finite");
  if (max_norm > 0 && norm > max_norm) scale_gradients(grads, max_norm / norm);
  return norm;
}

// buf <- momentum * buf + grad; param <- param - lr * buf
class SgdMomentum {
 public:
  explicit SgdMomentum(const ParameterStore& store) {
    buffers_.reserve(static_cast<std::size_t>(store.count()));
    for (int i = 0; i < store.count(); ++i)
      buffers_.emplace_back(store.value(i)->size(), 0.0f);
  }

  void step(ParameterStore& store, const GradSink& grads, double lr, double momentum,
            const std::vector<std::uint8_t>& trainable) {
    if (static_cast<int>(trainable.size()) != store.count())
      throw ConfigError("sgd: trainable mask size mismatch");
    const float m = static_cast<float>(momentum);
    const float step_lr = static_cast<float>(lr);
    for (int i = 0; i < store.count(); ++i) {
      if (!trainable[static_cast<std::size_t>(i)]) continue;
      auto& p = *store.value(i);
      const auto& g = *grads.grad(i);
      auto& buf = buffers_[static_cast<std::size_t>(i)];
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (!std::isfinite(g[j])) throw NumericError("sgd: non-finite gradient in '" + store.info(i).name + "'");
        buf[j] = m * buf[j] + g[j];
        p[j] -= step_lr * buf[j];
      }
    }
  }

  std::vector<std::vector<float>>& buffers() { return buffers_; }
  const std::vector<std::vector<float>>& buffers() const { return buffers_; }

 private:
  std::vector<std::vector<float>> buffers_;
};

// Fraction of rows whose own pairing wins the in-batch retrieval: strict
// argmax over v_i . t_j with ties counted as failures.
inline double in_batch_retrieval_accuracy(const std::vector<std::vector<float>>& v,
                                          const std::vector<std::vector<float>>& t) {
  if (v.size() != t.size() || v.size() < 2)
    throw InputError("retrieval accuracy: need matched batches of size >= 2");
  const int n = static_cast<int>(v.size());
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    double best = -1e300;
    int best_j = -1;
    bool tie = false;
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < v[static_cast<std::size_t>(i)].size(); ++k)
        dot += static_cast<double>(v[static_cast<std::size_t>(i)][k]) * t[static_cast<std::size_t>(j)][k];
      if (dot > best) {
        best = dot;
        best_j = j;
        tie = false;
      } else if (dot == best) {
        tie = true;
      }
    }
    if (best_j == i && !tie) ++hits;
  }
  return static_cast<double>(hits) / n;
}

}  // namespace gfslt
