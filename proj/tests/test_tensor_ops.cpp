// Tensor plumbing, autodiff bookkeeping, hand-computed op values and
// finite-difference gradient checks for every differentiable op.

#include <cmath>
#include <vector>

#include "doctest.h"
#include "ffpdet/gradcheck.hpp"
#include "ffpdet/ops.hpp"
#include "ffpdet/rng.hpp"

using namespace ffpdet;

namespace {

Tensor<double> rnd(Rng& rng, Shape shape, double lo = -1, double hi = 1,
                   bool grad = true) {
  auto t = Tensor<double>::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.ptr()[i] = rng.uniform(lo, hi);
  t.set_requires_grad(grad);
  return t;
}

GradCheckReport fd(const std::vector<Tensor<double>>& leaves,
                   const std::function<Tensor<double>()>& fn) {
  GradCheckOptions o;
  o.step = 1e-5;
  o.rel_tol = 1e-4;
  o.abs_floor = 1e-7;
  return grad_check(leaves, fn, o);
}

}  // namespace

TEST_CASE("tensor construction and validation") {
  auto t = Tensor<float>::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(0) == 2);
  CHECK(t.ptr()[5] == 6.f);
  CHECK_THROWS_AS(Tensor<float>::from_values({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>::scalar(1).dim(1), std::exception);
  CHECK(Tensor<float>::scalar(4.f).item() == 4.f);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("backward accumulates into leaves and resets interior grads") {
  auto x = Tensor<double>::from_values({2}, {1.0, 2.0}, true);
  auto y = scale(x, 3.0);
  auto loss = sum_all(y);
  loss.backward();
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  loss.backward();  // leaf grads accumulate across sweeps
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  CHECK(x.grad()[1] == doctest::Approx(6.0));

  // Interior nodes are scratch: their grad is recomputed per sweep.
  CHECK(y.has_grad());
  CHECK(y.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("no-grad mode stops graph construction") {
  auto x = Tensor<double>::from_values({2}, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    auto y = sum_all(scale(x, 2.0));
    CHECK_FALSE(y.requires_grad());
  }
  auto y = sum_all(scale(x, 2.0));
  CHECK(y.requires_grad());
}

TEST_CASE("activation hand values") {
  auto x = Tensor<double>::from_values({1, 1, 1, 7},
                                       {-4, -3, -1, 0, 1, 3, 4});
  auto hs = hard_swish(x);
  // x * clamp(x+3, 0, 6) / 6
  CHECK(hs.ptr()[0] == doctest::Approx(0.0));
  CHECK(hs.ptr()[1] == doctest::Approx(0.0));
  CHECK(hs.ptr()[2] == doctest::Approx(-1.0 * 2.0 / 6.0));
  CHECK(hs.ptr()[3] == doctest::Approx(0.0));
  CHECK(hs.ptr()[4] == doctest::Approx(4.0 / 6.0));
  CHECK(hs.ptr()[5] == doctest::Approx(3.0));
  CHECK(hs.ptr()[6] == doctest::Approx(4.0));

  auto r = relu(x);
  CHECK(r.ptr()[0] == 0.0);
  CHECK(r.ptr()[4] == 1.0);

  auto s = sigmoid(Tensor<double>::from_values({1}, {0.0}));
  CHECK(s.item() == doctest::Approx(0.5));
  auto e = exp_map(Tensor<double>::from_values({1}, {1.0}));
  CHECK(e.item() == doctest::Approx(std::exp(1.0)));
}

TEST_CASE("conv2d identity and shift kernels place values exactly") {
  // 1x1 kernel with weight 1 reproduces the input plus bias.
  auto x = Tensor<double>::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  auto w = Tensor<double>::from_values({1, 1, 1, 1}, {1.0});
  auto b = Tensor<double>::from_values({1}, {0.5});
  ConvSpec id{1, 1, 1, 1, 0, 1, 1, true};
  auto y = conv2d(x, w, b, id);
  CHECK(y.ptr()[0] == doctest::Approx(1.5));
  CHECK(y.ptr()[3] == doctest::Approx(4.5));

  // A 3x3 kernel with a single off-center tap shifts the image.
  auto w3 = Tensor<double>::zeros({1, 1, 3, 3});
  w3.ptr()[5] = 1.0;  // tap at (row 1, col 2): y(i,j) = x(i, j+1)
  ConvSpec shift{1, 1, 3, 1, 1, 1, 1, false};
  auto ys = conv2d(x, w3, Tensor<double>(), shift);
  CHECK(ys.ptr()[0] == doctest::Approx(2.0));
  CHECK(ys.ptr()[1] == doctest::Approx(0.0));  // zero padding
  CHECK(ys.ptr()[2] == doctest::Approx(4.0));
}

TEST_CASE("conv2d output shape formula") {
  Rng rng(3);
  auto x = rnd(rng, {2, 6, 13, 11}, -1, 1, false);
  struct Case {
    int64_t k, s, p, d, g, co;
  };
  for (const Case c : {Case{3, 1, 1, 1, 1, 4}, Case{3, 2, 1, 1, 1, 4},
                       Case{5, 2, 2, 1, 2, 8}, Case{3, 1, 2, 2, 1, 4},
                       Case{1, 1, 0, 1, 1, 7}}) {
    auto w = rnd(rng, {c.co, 6 / c.g, c.k, c.k}, -1, 1, false);
    auto b = rnd(rng, {c.co}, -1, 1, false);
    ConvSpec spec{6, c.co, c.k, c.s, c.p, c.d, c.g, true};
    auto y = conv2d(x, w, b, spec);
    const int64_t ho = (13 + 2 * c.p - c.d * (c.k - 1) - 1) / c.s + 1;
    const int64_t wo = (11 + 2 * c.p - c.d * (c.k - 1) - 1) / c.s + 1;
    CHECK(y.dim(0) == 2);
    CHECK(y.dim(1) == c.co);
    CHECK(y.dim(2) == ho);
    CHECK(y.dim(3) == wo);
  }
  // channel mismatch rejected
  auto w_bad = rnd(rng, {4, 5, 3, 3}, -1, 1, false);
  CHECK_THROWS_AS(
      conv2d(x, w_bad, Tensor<double>(), ConvSpec{5, 4, 3, 1, 1, 1, 1, false}),
      ShapeError);
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(5);
  auto x1 = rnd(rng, {1, 3, 6, 6}, -1, 1, false);
  auto x2 = rnd(rng, {1, 3, 6, 6}, -1, 1, false);
  auto w = rnd(rng, {4, 3, 3, 3}, -1, 1, false);
  ConvSpec spec{3, 4, 3, 1, 1, 1, 1, false};
  auto parts = add(scale(conv2d(x1, w, Tensor<double>(), spec), 2.0),
                   scale(conv2d(x2, w, Tensor<double>(), spec), -0.5));
  auto combo2 = conv2d(add(scale(x1, 2.0), scale(x2, -0.5)), w,
                       Tensor<double>(), spec);
  for (int64_t i = 0; i < parts.numel(); ++i)
    CHECK(combo2.ptr()[i] ==
          doctest::Approx(parts.ptr()[i]).epsilon(1e-12));
}

TEST_CASE("dense hand value") {
  auto x = Tensor<double>::from_values({1, 3}, {1, 2, 3});
  auto w = Tensor<double>::from_values({2, 3}, {1, 0, -1, 0.5, 0.5, 0.5});
  auto b = Tensor<double>::from_values({2}, {10, 20});
  auto y = dense(x, w, b);
  CHECK(y.ptr()[0] == doctest::Approx(1 - 3 + 10));
  CHECK(y.ptr()[1] == doctest::Approx(0.5 + 1 + 1.5 + 20));
}

TEST_CASE("upsample_nearest_2x places each source pixel in a 2x2 block") {
  auto x = Tensor<double>::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = upsample_nearest_2x(x);
  CHECK(y.dim(2) == 4);
  CHECK(y.dim(3) == 4);
  const double expect[16] = {1, 1, 2, 2, 1, 1, 2, 2,
                             3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(y.ptr()[i] == expect[i]);
}

TEST_CASE("global_avg_pool and channel ops") {
  auto x = Tensor<double>::from_values({1, 2, 2, 2},
                                       {1, 2, 3, 4, 10, 20, 30, 40});
  auto p = global_avg_pool(x);
  CHECK(p.dim(2) == 1);
  CHECK(p.ptr()[0] == doctest::Approx(2.5));
  CHECK(p.ptr()[1] == doctest::Approx(25.0));

  auto g = Tensor<double>::from_values({2}, {2.0, 0.5});
  auto m = mul_channel(x, g);
  CHECK(m.ptr()[0] == doctest::Approx(2.0));
  CHECK(m.ptr()[4] == doctest::Approx(5.0));
  auto a = add_channel(x, g);
  CHECK(a.ptr()[0] == doctest::Approx(3.0));
  CHECK(a.ptr()[4] == doctest::Approx(10.5));

  // Gains broadcast from [N,C,1,1] as well (gate-shaped).
  auto g4 = reshape(Tensor<double>::from_values({2}, {2.0, 0.5}), {1, 2, 1, 1});
  auto m4 = mul_channel(x, g4);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(m4.ptr()[i] == m.ptr()[i]);
}

TEST_CASE("batch norm training normalizes with batch statistics") {
  Rng rng(7);
  auto x = rnd(rng, {4, 3, 5, 5}, -2, 2, false);
  auto gamma = Tensor<double>::filled({3}, 1.0);
  auto beta = Tensor<double>::zeros({3});
  auto rmean = Tensor<double>::zeros({3});
  auto rvar = Tensor<double>::filled({3}, 1.0);
  auto y = batch_norm_train(x, gamma, beta, rmean, rvar, 0.1, 1e-5);

  const int64_t hw = 25, n = 4;
  for (int64_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    for (int64_t b = 0; b < n; ++b)
      for (int64_t i = 0; i < hw; ++i) {
        const double v = y.ptr()[(b * 3 + c) * hw + i];
        sum += v;
        sq += v * v;
      }
    const double mean = sum / (n * hw);
    const double var = sq / (n * hw) - mean * mean;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));

    // Running buffers blend in the batch statistics.
    double xsum = 0, xsq = 0;
    for (int64_t b = 0; b < n; ++b)
      for (int64_t i = 0; i < hw; ++i) {
        const double v = x.ptr()[(b * 3 + c) * hw + i];
        xsum += v;
        xsq += v * v;
      }
    const double bmean = xsum / (n * hw);
    const double bvar = xsq / (n * hw) - bmean * bmean;
    CHECK(rmean.ptr()[c] == doctest::Approx(0.1 * bmean).epsilon(1e-9));
    CHECK(rvar.ptr()[c] ==
          doctest::Approx(0.9 * 1.0 + 0.1 * bvar).epsilon(1e-6));
  }
}

TEST_CASE("batch norm inference applies the stored statistics") {
  auto x = Tensor<double>::from_values({1, 1, 1, 2}, {3.0, 5.0});
  auto gamma = Tensor<double>::from_values({1}, {2.0});
  auto beta = Tensor<double>::from_values({1}, {1.0});
  auto rmean = Tensor<double>::from_values({1}, {4.0});
  auto rvar = Tensor<double>::from_values({1}, {4.0});
  auto y = batch_norm_infer(x, gamma, beta, rmean, rvar, 0.0);
  CHECK(y.ptr()[0] == doctest::Approx(2.0 * (3 - 4) / 2.0 + 1.0));
  CHECK(y.ptr()[1] == doctest::Approx(2.0 * (5 - 4) / 2.0 + 1.0));
}

TEST_CASE("finite differences confirm every op gradient") {
  Rng rng(17);

  SUBCASE("conv2d") {
    auto x = rnd(rng, {2, 3, 6, 5});
    auto w = rnd(rng, {4, 3, 3, 3}, -0.5, 0.5);
    auto b = rnd(rng, {4}, -0.2, 0.2);
    ConvSpec spec{3, 4, 3, 1, 1, 1, 1, true};
    auto rep = fd({x, w, b}, [=] { return sum_all(conv2d(x, w, b, spec)); });
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
  SUBCASE("conv2d strided dilated grouped") {
    auto x = rnd(rng, {1, 4, 7, 7});
    auto w = rnd(rng, {6, 2, 3, 3}, -0.5, 0.5);
    auto b = rnd(rng, {6}, -0.2, 0.2);
    ConvSpec spec{4, 6, 3, 2, 2, 2, 2, true};
    auto rep = fd({x, w, b}, [=] { return sum_all(conv2d(x, w, b, spec)); });
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
  SUBCASE("dense") {
    auto x = rnd(rng, {3, 5});
    auto w = rnd(rng, {4, 5}, -0.5, 0.5);
    auto b = rnd(rng, {4}, -0.2, 0.2);
    auto rep = fd({x, w, b}, [=] { return sum_all(dense(x, w, b)); });
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
  SUBCASE("activations and elementwise") {
    auto x = rnd(rng, {2, 3, 4, 4}, -2, 2);
    for (int64_t i = 0; i < x.numel(); ++i)  // keep clear of relu kink
      if (std::fabs(x.ptr()[i]) < 0.05) x.ptr()[i] = 0.1;
    auto rep = fd({x}, [=] { return sum_all(relu(x)); });
    CHECK_MESSAGE(rep.ok, rep.worst);

    auto h = rnd(rng, {2, 3, 4, 4}, -5, 5);
    for (int64_t i = 0; i < h.numel(); ++i)  // keep clear of +/-3 kinks
      for (double k : {-3.0, 3.0})
        if (std::fabs(h.ptr()[i] - k) < 0.05) h.ptr()[i] = k + 0.1;
    rep = fd({h}, [=] { return sum_all(hard_swish(h)); });
    CHECK_MESSAGE(rep.ok, rep.worst);

    auto s = rnd(rng, {2, 2, 3, 3}, -3, 3);
    rep = fd({s}, [=] { return sum_all(sigmoid(s)); });
    CHECK_MESSAGE(rep.ok, rep.worst);

    auto e = rnd(rng, {1, 4, 3, 3}, -2, 2);
    rep = fd({e}, [=] { return sum_all(exp_map(e)); });
    CHECK_MESSAGE(rep.ok, rep.worst);

    auto a = rnd(rng, {2, 3, 3, 3}, -2, 2);
    auto b = rnd(rng, {2, 3, 3, 3}, -2, 2);
    rep = fd({a, b}, [=] { return sum_all(add(scale(a, 1.7), b)); });
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
  SUBCASE("channel ops, pooling, upsample, reshape") {
    auto x = rnd(rng, {2, 3, 4, 4}, -2, 2);
    auto g = rnd(rng, {3}, 0.5, 1.5);
    auto rep = fd({x, g}, [=] { return sum_all(mul_channel(x, g)); });
    CHECK_MESSAGE(rep.ok, rep.worst);
    rep = fd({x, g}, [=] { return sum_all(add_channel(x, g)); });
    CHECK_MESSAGE(rep.ok, rep.worst);
    // weight the pooled channels so the pool gradient is not uniform
    auto w = rnd(rng, {3}, 0.5, 1.5, false);
    rep = fd({x},
             [=] { return sum_all(mul_channel(global_avg_pool(x), w)); });
    CHECK_MESSAGE(rep.ok, rep.worst);
    rep = fd({x}, [=] { return sum_all(upsample_nearest_2x(x)); });
    CHECK_MESSAGE(rep.ok, rep.worst);
    rep = fd({x}, [=] { return sum_all(reshape(x, {6, 16})); });
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
  SUBCASE("batch norm") {
    auto x = rnd(rng, {3, 2, 4, 4}, -2, 2);
    auto gamma = rnd(rng, {2}, 0.5, 1.5);
    auto beta = rnd(rng, {2}, -0.5, 0.5);
    auto w = rnd(rng, {2}, 0.5, 1.5, false);
    auto rep = fd({x, gamma, beta}, [=] {
      auto rmean = Tensor<double>::zeros({2});
      auto rvar = Tensor<double>::filled({2}, 1.0);
      return sum_all(mul_channel(
          batch_norm_train(x, gamma, beta, rmean, rvar, 0.1, 1e-5), w));
    });
    CHECK_MESSAGE(rep.ok, rep.worst);

    auto rmean = rnd(rng, {2}, -0.5, 0.5, false);
    auto rvar = rnd(rng, {2}, 0.5, 2.0, false);
    rep = fd({x, gamma, beta}, [=] {
      return sum_all(mul_channel(
          batch_norm_infer(x, gamma, beta, rmean, rvar, 1e-5), w));
    });
    CHECK_MESSAGE(rep.ok, rep.worst);
  }
}
