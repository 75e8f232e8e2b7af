#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>

#include "gfslt/errors.hpp"
#include "gfslt/params.hpp"
#include "gfslt/rng.hpp"
#include "gfslt/tape.hpp"

namespace gfslt {

// A scalar loss over a ParameterStore, evaluable two ways: once with the
// float tape to produce the analytic gradient, and once forward-only in
// double precision at a perturbed coordinate. The double replay exists so the
// central-difference quotient is not drowned by float rounding; the gradient
// being checked is always the float autograd result.
class DifferentiableLoss {
 public:
  virtual ~DifferentiableLoss() = default;
  virtual double analytic(const ParameterStore& params, GradSink& sink) = 0;
  virtual double value(const ParameterStore& params, int tensor, std::int64_t elem,
                       double delta) = 0;
};

template <class FGrad, class FValue>
class LossAdapter final : public DifferentiableLoss {
 public:
  LossAdapter(FGrad g, FValue v) : fgrad_(std::move(g)), fvalue_(std::move(v)) {}
  double analytic(const ParameterStore& p, GradSink& s) override { return fgrad_(p, s); }
  double value(const ParameterStore& p, int t, std::int64_t e, double d) override {
    return fvalue_(p, t, e, d);
  }

 private:
  FGrad fgrad_;
  FValue fvalue_;
};

template <class FGrad, class FValue>
LossAdapter<FGrad, FValue> make_loss(FGrad g, FValue v) {
  return LossAdapter<FGrad, FValue>(std::move(g), std::move(v));
}

struct FdResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  int checked = 0;
};

// Central differences on sample_count randomly sampled parameter coordinates.
// Reports max over samples of |g_a - g_n| / max(1e-8, |g_a| + |g_n|).
FdResult finite_diff_check(const ParameterStore& params, DifferentiableLoss& loss, double step,
                           int sample_count, std::uint64_t seed);

// Convenience wrapper for a loss written once as a generic graph builder:
// build(tape, view) -> scalar tensor, instantiated for float and double.
template <class Builder>
FdResult finite_diff_check_builder(const ParameterStore& params, Builder&& build, double step,
                                   int sample_count, std::uint64_t seed) {
  auto loss = make_loss(
      [&](const ParameterStore& p, GradSink& s) {
        Tape<float> tape;
        ParamView<float> v = bind(p, &s);
        Tensor<float> l = build(tape, v);
        // A loss disconnected from every parameter has an all-zero gradient.
        if (l.requires_grad) tape.backward(l);
        return static_cast<double>(l.item());
      },
      [&](const ParameterStore& p, int t, std::int64_t e, double d) {
        Tape<double> tape(false);
        ParamView<double> v = bind_double(p);
        v.perturb(t, e, d);
        return build(tape, v).item();
      });
  return finite_diff_check(params, loss, step, sample_count, seed);
}

}  // namespace gfslt
