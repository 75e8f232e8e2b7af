#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gfslt/gradcheck.hpp"
#include "gfslt/kernels.hpp"
#include "gfslt/ops.hpp"
#include "gfslt/ref_kernels.hpp"
#include "gfslt/rng.hpp"

using namespace gfslt;

namespace {

TensorF tensor2(std::vector<int> shape, std::vector<float> vals) {
  return TensorF::from_values(std::move(shape), std::move(vals));
}

std::vector<float> random_values(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal() * scale);
  return v;
}

// Finite-difference harness for a single op: inputs become store parameters,
// the loss is sum(op(...)), and the double replay drives central differences.
template <class Builder>
double op_fd_err(const std::vector<std::pair<std::vector<int>, std::vector<float>>>& inputs,
                 Builder&& build, int samples = 32, double step = 1e-3) {
  ParameterStore ps;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    ps.add("in" + std::to_string(i), inputs[i].first, inputs[i].second);
  auto res = finite_diff_check_builder(ps, build, step, samples, /*seed=*/1234);
  return res.max_rel_err;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  TapeF tape;
  auto c1 = matmul(tape, tensor2({2, 2}, {1, 0, 0, 1}), tensor2({2, 2}, {3, 4, 5, 6}));
  CHECK((*c1.data) == std::vector<float>{3, 4, 5, 6});

  auto c2 = matmul(tape, tensor2({1, 2}, {1, 2}), tensor2({2, 1}, {3, 4}));
  CHECK(c2.item() == doctest::Approx(11.0));

  CHECK_THROWS_AS(matmul(tape, tensor2({1, 2}, {1, 2}), tensor2({3, 1}, {1, 2, 3})), DimError);
  CHECK_THROWS_WITH_AS(matmul(tape, tensor2({1, 2}, {1, 2}), tensor2({3, 1}, {1, 2, 3})),
                       doctest::Contains("[1,2]"), DimError);
}

TEST_CASE("matmul gradient matches hand result and finite differences") {
  // d(sum(a*b))/da at a=[[1,2]], b=[[3],[4]] is [[3,4]].
  ParameterStore ps;
  ps.add("a", {1, 2}, {1, 2});
  TapeF tape;
  GradSink sink(ps);
  auto view = bind(ps, &sink);
  auto b = tensor2({2, 1}, {3, 4});
  auto loss = sum_all(tape, matmul(tape, view[0], b));
  tape.backward(loss);
  CHECK((*sink.grad(0))[0] == doctest::Approx(3.0));
  CHECK((*sink.grad(0))[1] == doctest::Approx(4.0));

  const double err = op_fd_err({{{1, 2}, {1, 2}}},
                               [&](auto& tp, const auto& v) {
                                 using T = std::decay_t<decltype(v[0].ptr()[0])>;
                                 auto bb = Tensor<T>::from_values({2, 1}, {T(3), T(4)});
                                 return sum_all(tp, matmul(tp, v[0], bb));
                               });
  CHECK(err <= 1e-3);
}

TEST_CASE("matmul associativity at tolerance on random 8x8") {
  Rng rng(5);
  TapeF tape;
  auto a = tensor2({8, 8}, random_values(64, rng));
  auto b = tensor2({8, 8}, random_values(64, rng));
  auto c = tensor2({8, 8}, random_values(64, rng));
  auto left = matmul(tape, matmul(tape, a, b), c);
  auto right = matmul(tape, a, matmul(tape, b, c));
  for (int i = 0; i < 64; ++i) {
    const double l = (*left.data)[static_cast<std::size_t>(i)];
    const double r = (*right.data)[static_cast<std::size_t>(i)];
    CHECK(std::fabs(l - r) <= 1e-4 * std::max(1.0, std::max(std::fabs(l), std::fabs(r))));
  }
}

TEST_CASE("softmax closed forms") {
  TapeF tape;
  auto s1 = softmax(tape, tensor2({3}, {0, 0, 0}), -1);
  for (float v : *s1.data) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto s2 = softmax(tape, tensor2({2}, {1000, 0}), -1);
  CHECK(std::fabs((*s2.data)[0] - 1.0) <= 1e-12);
  CHECK(std::fabs((*s2.data)[1]) <= 1e-12);

  auto s3 = softmax(tape, tensor2({3}, {std::log(1.0f), std::log(2.0f), std::log(3.0f)}), -1);
  CHECK((*s3.data)[0] == doctest::Approx(1.0 / 6.0));
  CHECK((*s3.data)[1] == doctest::Approx(2.0 / 6.0));
  CHECK((*s3.data)[2] == doctest::Approx(3.0 / 6.0));
}

TEST_CASE("softmax sums to one and is shift invariant") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto vals = random_values(16, rng, 3.0);
    TapeF tape;
    auto y = softmax(tape, tensor2({2, 8}, vals), -1);
    for (int r = 0; r < 2; ++r) {
      double sum = 0;
      for (int j = 0; j < 8; ++j) sum += (*y.data)[static_cast<std::size_t>(r * 8 + j)];
      CHECK(std::fabs(sum - 1.0) <= 1e-6);
    }
    auto shifted = vals;
    for (auto& v : shifted) v += 7.25f;
    auto y2 = softmax(tape, tensor2({2, 8}, shifted), -1);
    for (std::size_t i = 0; i < 16; ++i)
      CHECK(std::fabs((*y.data)[i] - (*y2.data)[i]) <= 1e-6);
  }
}

TEST_CASE("softmax over axis 0 of a 2-D tensor") {
  TapeF tape;
  auto y = softmax(tape, tensor2({2, 2}, {0, 10, 0, 10}), 0);
  CHECK((*y.data)[0] == doctest::Approx(0.5));
  CHECK((*y.data)[2] == doctest::Approx(0.5));
}

TEST_CASE("layer_norm closed forms and gradient") {
  TapeF tape;
  auto gain = tensor2({4}, {1, 1, 1, 1});
  auto bias = tensor2({4}, {0, 0, 0, 0});
  auto y = layer_norm(tape, tensor2({1, 4}, {2, 2, 2, 2}), gain, bias, 1e-5);
  for (float v : *y.data) CHECK(v == doctest::Approx(0.0));

  auto g2 = tensor2({2}, {1, 1});
  auto b2 = tensor2({2}, {0, 0});
  auto y2 = layer_norm(tape, tensor2({1, 2}, {1, 3}), g2, b2, 1e-10);
  CHECK((*y2.data)[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK((*y2.data)[1] == doctest::Approx(1.0).epsilon(1e-4));

  Rng rng(23);
  const double err = op_fd_err(
      {{{3, 6}, random_values(18, rng)}, {{6}, random_values(6, rng, 0.5)}, {{6}, random_values(6, rng, 0.5)}},
      [&](auto& tp, const auto& v) { return sum_all(tp, mul(tp, layer_norm(tp, v[0], v[1], v[2], 1e-5), layer_norm(tp, v[0], v[1], v[2], 1e-5))); });
  CHECK(err <= 1e-3);
}

TEST_CASE("conv1d hand cases and output length") {
  TapeF tape;
  auto y1 = conv1d(tape, tensor2({4, 1}, {1, 2, 3, 4}), tensor2({1, 1, 1}, {2}), 1, 0);
  CHECK((*y1.data) == std::vector<float>{2, 4, 6, 8});

  auto y2 = conv1d(tape, tensor2({4, 1}, {1, 1, 1, 1}), tensor2({3, 1, 1}, {1, 1, 1}), 1, 0);
  CHECK(y2.shape == std::vector<int>{2, 1});
  CHECK((*y2.data) == std::vector<float>{3, 3});

  Rng rng(3);
  auto y3 = conv1d(tape, tensor2({16, 2}, random_values(32, rng)), tensor2({5, 2, 3}, random_values(30, rng)), 1, 2);
  CHECK(y3.dim(0) == 16);

  CHECK_THROWS_AS(conv1d(tape, tensor2({4, 1}, {1, 2, 3, 4}), tensor2({5, 1, 1}, {1, 1, 1, 1, 1}), 1, 0), DimError);
}

TEST_CASE("conv1d gradient vs finite differences") {
  Rng rng(31);
  const double err = op_fd_err(
      {{{7, 3}, random_values(21, rng)}, {{5, 3, 4}, random_values(60, rng, 0.5)}},
      [&](auto& tp, const auto& v) { return sum_all(tp, mul(tp, conv1d(tp, v[0], v[1], 2, 2), conv1d(tp, v[0], v[1], 2, 2))); });
  CHECK(err <= 1e-3);
}

TEST_CASE("conv1d matches the reference kernel") {
  Rng rng(37);
  const auto x = random_values(15 * 3, rng);
  const auto w = random_values(5 * 3 * 4, rng);
  TapeF tape;
  auto y = conv1d(tape, tensor2({15, 3}, x), tensor2({5, 3, 4}, w), 1, 2);
  std::vector<float> ref(static_cast<std::size_t>(15) * 4);
  refk::conv1d_forward(x.data(), w.data(), ref.data(), 15, 3, 5, 4, 1, 2, 15);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK((*y.data)[i] == doctest::Approx(ref[i]).epsilon(1e-4));
}

TEST_CASE("maxpool1d hand cases, tie rule and downsampling factor") {
  TapeF tape;
  auto y1 = maxpool1d(tape, tensor2({4, 1}, {1, 3, 2, 4}), 2, 2);
  CHECK((*y1.data) == std::vector<float>{3, 4});

  // Tie: gradient goes entirely to the lowest index.
  ParameterStore ps;
  ps.add("x", {2, 1}, {5, 5});
  GradSink sink(ps);
  TapeF tape2;
  auto view = bind(ps, &sink);
  auto y2 = maxpool1d(tape2, view[0], 2, 2);
  CHECK(y2.item() == doctest::Approx(5.0));
  auto loss = sum_all(tape2, y2);
  tape2.backward(loss);
  CHECK((*sink.grad(0))[0] == doctest::Approx(1.0));
  CHECK((*sink.grad(0))[1] == doctest::Approx(0.0));

  // T=16 pooled twice at stride 2 gives length 4 = T/4.
  Rng rng(11);
  TapeF tape3;
  auto x = tensor2({16, 2}, random_values(32, rng));
  auto pooled = maxpool1d(tape3, maxpool1d(tape3, x, 2, 2), 2, 2);
  CHECK(pooled.dim(0) == 4);

  CHECK_THROWS_AS(maxpool1d(tape, tensor2({1, 1}, {1}), 2, 2), DimError);
}

TEST_CASE("embedding lookup gather and scatter gradients") {
  ParameterStore ps;
  ps.add("table", {2, 3}, {1, 2, 3, 4, 5, 6});
  GradSink sink(ps);
  TapeF tape;
  auto view = bind(ps, &sink);

  auto rows = embedding_lookup(tape, view[0], {1, 0, 1});
  CHECK((*rows.data) == std::vector<float>{4, 5, 6, 1, 2, 3, 4, 5, 6});

  auto loss = sum_all(tape, rows);
  tape.backward(loss);
  // Row 1 used twice -> 2x upstream; row 0 once.
  CHECK((*sink.grad(0))[0] == doctest::Approx(1.0));
  CHECK((*sink.grad(0))[3] == doctest::Approx(2.0));

  TapeF tape2;
  CHECK_THROWS_WITH_AS(embedding_lookup(tape2, view[0], {2}), doctest::Contains("id 2"), IndexError);
}

TEST_CASE("embedding gradient of unused row stays zero") {
  ParameterStore ps;
  ps.add("table", {3, 2}, {1, 2, 3, 4, 5, 6});
  GradSink sink(ps);
  TapeF tape;
  auto view = bind(ps, &sink);
  auto loss = sum_all(tape, embedding_lookup(tape, view[0], {0, 2}));
  tape.backward(loss);
  CHECK((*sink.grad(0))[2] == 0.0f);
  CHECK((*sink.grad(0))[3] == 0.0f);
}

TEST_CASE("finite_diff_check on closed forms") {
  // Sum of squares: analytic [2,4] at theta = [1,2].
  ParameterStore ps;
  ps.add("theta", {2}, {1, 2});
  auto builder = [](auto& tp, const auto& v) { return sum_all(tp, mul(tp, v[0], v[0])); };
  auto res = finite_diff_check_builder(ps, builder, 1e-3, 32, 7);
  CHECK(res.max_rel_err <= 1e-6);

  GradSink sink(ps);
  TapeF tape;
  auto view = bind(ps, &sink);
  auto loss = sum_all(tape, mul(tape, view[0], view[0]));
  tape.backward(loss);
  CHECK((*sink.grad(0))[0] == doctest::Approx(2.0));
  CHECK((*sink.grad(0))[1] == doctest::Approx(4.0));

  // Constant function: both gradients zero, rel err exactly 0.
  ParameterStore ps2;
  ps2.add("theta", {3}, {1, 2, 3});
  auto const_builder = [](auto& tp, const auto& v) {
    using T = std::decay_t<decltype(v[0].ptr()[0])>;
    (void)v;
    return sum_all(tp, Tensor<T>::from_values({1}, {T(5)}));
  };
  auto res2 = finite_diff_check_builder(ps2, const_builder, 1e-3, 16, 7);
  CHECK(res2.max_rel_err == 0.0);
}

TEST_CASE("per-op finite-difference sweep at step 1e-3") {
  Rng rng(101);
  // softmax + pick-like composite
  CHECK(op_fd_err({{{4, 6}, random_values(24, rng)}},
                  [](auto& tp, const auto& v) { return sum_all(tp, mul(tp, softmax(tp, v[0], -1), softmax(tp, v[0], -1))); }) <= 1e-3);
  // log-softmax
  CHECK(op_fd_err({{{4, 6}, random_values(24, rng)}},
                  [](auto& tp, const auto& v) { return mean_all(tp, log_softmax_rows(tp, v[0])); }) <= 1e-3);
  // conv2d + maxpool2d + gap
  CHECK(op_fd_err({{{2, 6, 6, 2}, random_values(144, rng)}, {{3, 3, 2, 3}, random_values(54, rng, 0.4)}},
                  [](auto& tp, const auto& v) {
                    auto y = conv2d(tp, v[0], v[1], 1, 1);
                    auto p = maxpool2d(tp, y, 2, 2);
                    return sum_all(tp, mul(tp, global_avgpool2d(tp, p), global_avgpool2d(tp, p)));
                  }) <= 1e-3);
  // matmul_nt + transpose + slices
  CHECK(op_fd_err({{{3, 4}, random_values(12, rng)}, {{5, 4}, random_values(20, rng)}},
                  [](auto& tp, const auto& v) {
                    auto s = matmul_nt(tp, v[0], v[1]);
                    auto t = transpose(tp, s);
                    return sum_all(tp, mul(tp, slice_cols(tp, t, 1, 3), slice_cols(tp, t, 1, 3)));
                  }) <= 1e-3);
  // l2_normalize
  CHECK(op_fd_err({{{1, 6}, random_values(6, rng)}},
                  [](auto& tp, const auto& v) {
                    auto y = l2_normalize(tp, v[0]);
                    auto w = Tensor<std::decay_t<decltype(v[0].ptr()[0])>>::from_values(
                        {1, 6}, {1, -2, 3, 0.5, -0.25, 2});
                    return sum_all(tp, mul(tp, y, w));
                  }) <= 1e-3);
  // relu + add_rowvec + layer-norm composite
  CHECK(op_fd_err({{{5, 4}, random_values(20, rng)}, {{4}, random_values(4, rng, 0.3)}},
                  [](auto& tp, const auto& v) {
                    auto y = relu(tp, add_rowvec(tp, v[0], v[1]));
                    return mean_all(tp, mul(tp, y, y));
                  }) <= 1e-3);
  // maxpool1d routes subgradients
  CHECK(op_fd_err({{{8, 3}, random_values(24, rng)}},
                  [](auto& tp, const auto& v) { return sum_all(tp, mul(tp, maxpool1d(tp, v[0], 2, 2), maxpool1d(tp, v[0], 2, 2))); }) <= 1e-3);
  // embedding scatter
  CHECK(op_fd_err({{{5, 3}, random_values(15, rng)}},
                  [](auto& tp, const auto& v) {
                    auto rows = embedding_lookup(tp, v[0], {0, 2, 2, 4});
                    return sum_all(tp, mul(tp, rows, rows));
                  }) <= 1e-3);
}

TEST_CASE("backward on a consumed tape is an error") {
  ParameterStore ps;
  ps.add("x", {2}, {1, 2});
  GradSink sink(ps);
  TapeF tape;
  auto view = bind(ps, &sink);
  auto loss = sum_all(tape, view[0]);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), InputError);
}

TEST_CASE("gradient of a sum of losses equals the sum of gradients") {
  ParameterStore ps;
  Rng rng(77);
  ps.add("x", {2, 3}, random_values(6, rng));
  auto grad_of = [&](bool joint) {
    GradSink sink(ps);
    TapeF tape;
    auto view = bind(ps, &sink);
    auto a = sum_all(tape, mul(tape, view[0], view[0]));
    auto b = mean_all(tape, relu(tape, view[0]));
    if (joint) {
      auto total = add(tape, a, b);
      tape.backward(total);
      return std::vector<float>(*sink.grad(0));
    }
    tape.backward(a);
    std::vector<float> ga(*sink.grad(0));
    GradSink sink2(ps);
    TapeF tape2;
    auto view2 = bind(ps, &sink2);
    auto b2 = mean_all(tape2, relu(tape2, view2[0]));
    tape2.backward(b2);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*sink2.grad(0))[i];
    return ga;
  };
  const auto joint = grad_of(true);
  const auto split = grad_of(false);
  for (std::size_t i = 0; i < joint.size(); ++i)
    CHECK(joint[i] == doctest::Approx(split[i]).epsilon(1e-5));
}

TEST_CASE("non-finite forward values abort with a numeric error") {
  TapeF tape;
  auto x = tensor2({2}, {1.0f, std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(relu(tape, x), NumericError);
  auto big = tensor2({1, 1}, {3e38f});
  CHECK_THROWS_AS(matmul(tape, big, big), NumericError);
}

TEST_CASE("dispatched kernels are bitwise identical serial vs parallel") {
  Rng rng(55);
  const int m = 37, k = 29, n = 41;
  const auto a = random_values(static_cast<std::size_t>(m) * k, rng);
  const auto b = random_values(static_cast<std::size_t>(k) * n, rng);
  std::vector<float> c1(static_cast<std::size_t>(m) * n), c2(c1.size());

  kernels::set_parallel_enabled(false);
  kernels::matmul_nn(a.data(), b.data(), c1.data(), m, k, n, false);
  kernels::set_parallel_enabled(true);
  kernels::matmul_nn(a.data(), b.data(), c2.data(), m, k, n, false);
  CHECK(c1 == c2);

  // And against the reference loops at tolerance (different sum order).
  std::vector<float> ref(c1.size());
  refk::matmul_nn(a.data(), b.data(), ref.data(), m, k, n);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(c1[i] == doctest::Approx(ref[i]).epsilon(1e-4));
}

TEST_CASE("softmax and layer_norm kernels match references") {
  Rng rng(66);
  const int rows = 9, n = 13;
  const auto x = random_values(static_cast<std::size_t>(rows) * n, rng, 2.0);
  std::vector<float> y1(x.size()), y2(x.size());
  kernels::softmax_rows(x.data(), y1.data(), rows, n);
  refk::softmax_rows(x.data(), y2.data(), rows, n);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-5));

  const auto g = random_values(static_cast<std::size_t>(n), rng, 0.5);
  const auto bvec = random_values(static_cast<std::size_t>(n), rng, 0.5);
  std::vector<float> ln1(x.size()), ln2(x.size()), xhat(x.size()), inv(static_cast<std::size_t>(rows));
  kernels::layer_norm_rows(x.data(), g.data(), bvec.data(), ln1.data(), xhat.data(), inv.data(), rows, n, 1e-5);
  refk::layer_norm_rows(x.data(), g.data(), bvec.data(), ln2.data(), rows, n, 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(ln1[i] == doctest::Approx(ln2[i]).epsilon(1e-5));
}
