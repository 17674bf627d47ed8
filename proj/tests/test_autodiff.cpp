#include <gtest/gtest.h>

#include "oracles.hpp"
#include "pcqa/autodiff.hpp"
#include "pcqa/grad_check.hpp"
#include "pcqa/random.hpp"

using namespace pcqa;
using namespace pcqa::ad;

namespace {

Tensor random_param(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::parameter(std::move(shape), std::move(v));
}

// Scalar probe: sum(y * c) for a fixed random c, so every output coordinate
// gets a distinct upstream gradient.
Tensor probe(Tape& t, const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> c(y.numel());
  for (auto& x : c) x = rng.uniform(-1, 1);
  const Tensor flat = reshape(t, mul(t, y, Tensor::constant(y.shape(), c)), {y.numel()});
  return sum_over_axis(t, flat, 0);
}

void expect_grad_ok(const ScalarFn& f, std::vector<Tensor> leaves) {
  const GradCheckReport r = grad_check(f, std::move(leaves));
  EXPECT_TRUE(r.passed) << "max rel error " << r.max_rel_error << " at leaf " << r.worst_leaf << " coord "
                        << r.worst_coord;
}

}  // namespace

TEST(Autodiff, MatmulMatchesOracle) {
  Rng rng(1);
  const Tensor a = random_param(rng, {5, 7}), b = random_param(rng, {7, 3});
  Tape t = Tape::inference();
  const Tensor c = matmul(t, a, b);
  oracle::Matrix ma(5, std::vector<double>(7)), mb(7, std::vector<double>(3));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 7; ++j) ma[i][j] = a.at(i, j);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 3; ++j) mb[i][j] = b.at(i, j);
  const auto want = oracle::matmul(ma, mb);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(c.at(i, j), want[i][j], 1e-12);
}

TEST(Autodiff, InferenceTapeRecordsNothing) {
  Rng rng(2);
  const Tensor a = random_param(rng, {3, 3});
  Tape t = Tape::inference();
  const Tensor y = leaky_relu(t, matmul(t, a, a), 0.2);
  EXPECT_EQ(t.size(), 0u);
  EXPECT_EQ(y.numel(), 9u);
}

TEST(Autodiff, TapeErrors) {
  Rng rng(3);
  const Tensor a = random_param(rng, {2, 2});
  {
    Tape t;
    const Tensor y = matmul(t, a, a);
    EXPECT_THROW(t.backward(y), ShapeError);
  }
  {
    Tape t, other;
    const Tensor loss = probe(other, a);
    EXPECT_THROW(t.backward(loss), TapeError);
  }
  {
    Tape t;
    const Tensor loss = probe(t, square(t, a));
    t.backward(loss);
    try {
      t.backward(loss);
      FAIL();
    } catch (const TapeError& e) {
      EXPECT_EQ(e.kind(), "consumed");
    }
  }
}

TEST(Autodiff, ShapeMismatchIsRejected) {
  Rng rng(4);
  Tape t;
  EXPECT_THROW(matmul(t, random_param(rng, {2, 3}), random_param(rng, {2, 3})), ShapeError);
  EXPECT_THROW(add(t, random_param(rng, {2, 3}), random_param(rng, {3, 2})), ShapeError);
  EXPECT_THROW(reshape(t, random_param(rng, {2, 3}), {5}), ShapeError);
}

TEST(Autodiff, NumericsCheckFlagsNonFinite) {
  const bool saved = numerics_checks();
  numerics_checks() = true;
  Tape t;
  const Tensor x = Tensor::constant({2}, {0.0, 1.0});
  EXPECT_THROW(reciprocal(t, x), NumericsError);
  numerics_checks() = saved;
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  Tensor x = Tensor::parameter({1}, {3.0});
  Tape t;
  const Tensor y = add(t, mul(t, x, x), x);  // x^2 + x
  t.backward(sum_over_axis(t, y, 0));
  EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Autodiff, MaxRoutesGradientToFirstArgmax) {
  Tensor x = Tensor::parameter({3, 2}, {1, 5, 4, 5, 4, 0});
  Tape t;
  const Tensor m = max_over_axis(t, x, 0);
  EXPECT_EQ(m[0], 4.0);
  EXPECT_EQ(m[1], 5.0);
  t.backward(sum_over_axis(t, m, 0));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 1, 0, 0, 0}));
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Rng rng(5);
  const Tensor x = random_param(rng, {6, 9}, -30, 30);
  Tape t = Tape::inference();
  const Tensor s = softmax(t, x, 1);
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 9; ++c) sum += s.at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Autodiff, LayerNormCoreStandardizesRows) {
  Rng rng(6);
  const Tensor x = random_param(rng, {4, 33}, -5, 7);
  Tape t = Tape::inference();
  const Tensor y = layer_norm_core(t, x, 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 33; ++c) mu += y.at(r, c);
    mu /= 33;
    for (std::size_t c = 0; c < 33; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu);
    EXPECT_NEAR(mu, 0.0, 1e-10);
    EXPECT_NEAR(var / 33, 1.0, 1e-8);
  }
}

TEST(Autodiff, PrimitiveGradients) {
  Rng rng(7);
  const Tensor a = random_param(rng, {4, 5}), b = random_param(rng, {5, 3}), c = random_param(rng, {4, 5});
  const Tensor v = random_param(rng, {5}), pos = random_param(rng, {4, 5}, 0.5, 2.0);
  const Tensor x3 = random_param(rng, {3, 4, 5});

  expect_grad_ok([&](Tape& t) { return probe(t, matmul(t, a, b)); }, {a, b});
  expect_grad_ok([&](Tape& t) { return probe(t, transpose(t, a)); }, {a});
  expect_grad_ok([&](Tape& t) { return probe(t, add(t, a, c)); }, {a, c});
  expect_grad_ok([&](Tape& t) { return probe(t, sub(t, a, c)); }, {a, c});
  expect_grad_ok([&](Tape& t) { return probe(t, mul(t, a, c)); }, {a, c});
  expect_grad_ok([&](Tape& t) { return probe(t, add_bias(t, a, v)); }, {a, v});
  expect_grad_ok([&](Tape& t) { return probe(t, mul_bias(t, a, v)); }, {a, v});
  expect_grad_ok([&](Tape& t) { return probe(t, scale(t, a, -2.5)); }, {a});
  expect_grad_ok([&](Tape& t) { return probe(t, square(t, a)); }, {a});
  expect_grad_ok([&](Tape& t) { return probe(t, sqrt_eps(t, pos, 1e-5)); }, {pos});
  expect_grad_ok([&](Tape& t) { return probe(t, reciprocal(t, pos)); }, {pos});
  expect_grad_ok([&](Tape& t) { return probe(t, leaky_relu(t, a, 0.2)); }, {a});
  expect_grad_ok([&](Tape& t) { return probe(t, reshape(t, a, {2, 10})); }, {a});
  expect_grad_ok([&](Tape& t) { return probe(t, slice_rows(t, a, 1, 3)); }, {a});
  expect_grad_ok([&](Tape& t) { return probe(t, concat(t, {a, c}, 0)); }, {a, c});
  expect_grad_ok([&](Tape& t) { return probe(t, concat(t, {a, c}, 1)); }, {a, c});
  expect_grad_ok([&](Tape& t) { return probe(t, gather_rows(t, a, {3, 0, 3, 1, 2, 0}, {2, 3})); }, {a});
  for (std::size_t axis = 0; axis < 3; ++axis) {
    expect_grad_ok([&](Tape& t) { return probe(t, max_over_axis(t, x3, axis)); }, {x3});
    expect_grad_ok([&](Tape& t) { return probe(t, sum_over_axis(t, x3, axis)); }, {x3});
    expect_grad_ok([&](Tape& t) { return probe(t, mean_over_axis(t, x3, axis)); }, {x3});
    expect_grad_ok([&](Tape& t) { return probe(t, variance_over_axis(t, x3, axis)); }, {x3});
    expect_grad_ok([&](Tape& t) { return probe(t, softmax(t, x3, axis)); }, {x3});
  }
  expect_grad_ok([&](Tape& t) { return probe(t, layer_norm_core(t, x3, 1e-5)); }, {x3});
}

TEST(Autodiff, GradCheckDetectsWrongGradient) {
  Rng rng(8);
  const Tensor a = random_param(rng, {3, 3});
  GradCheckOptions opt;
  opt.analytic_scale = 1.01;
  const auto r = grad_check([&](Tape& t) { return probe(t, square(t, a)); }, {a}, opt);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.retries_used, 3);
  EXPECT_NEAR(r.max_rel_error, 0.01 / 1.01, 1e-4);
}

TEST(Autodiff, RelativeErrorDenominatorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0), 1e-4);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}
