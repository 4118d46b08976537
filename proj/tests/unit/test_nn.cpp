#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "molrl/nn.hpp"
#include "molrl/random.hpp"
#include "testing.hpp"

using namespace molrl;
using namespace molrl::nn;
using molrl::testing::grad_check;

namespace {

Tensor random_param(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(r) * c);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::parameter(r, c, v);
}

/// Random fixed weights so that every output entry reaches the loss with a distinct factor.
Tensor weighted_sum(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(t.size());
  for (double& x : w) x = rng.uniform(-1, 1);
  return sum(mul(t, Tensor::constant(t.rows(), t.cols(), w)));
}

constexpr double kTol = 1e-4;

}  // namespace

TEST(Tensor, ShapesAndAccess) {
  const Tensor t = Tensor::constant(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2);
  EXPECT_EQ(t.cols(), 3);
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_EQ(t.shape_str(), "[2 x 3]");
  EXPECT_THROW(Tensor::constant(2, 2, {1, 2, 3}), ShapeError);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_TRUE(Tensor::parameter(1, 1, {0}).requires_grad());
}

TEST(Tensor, MatmulValues) {
  const Tensor a = Tensor::constant(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::constant(2, 1, {5, 6});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.at(0, 0), 17.0);
  EXPECT_EQ(c.at(1, 0), 39.0);
  EXPECT_THROW(matmul(b, b), ShapeError);
}

TEST(Tensor, BackwardTwiceThrows) {
  Tensor p = Tensor::parameter(1, 1, {2.0});
  Tensor loss = square(p);
  backward(loss);
  EXPECT_EQ(p.grad()[0], 4.0);
  EXPECT_THROW(backward(loss), std::logic_error);
  EXPECT_THROW(backward(square(Tensor::scalar(1.0))), std::logic_error);
}

TEST(Tensor, GradientsAccumulateUntilZeroed) {
  Tensor p = Tensor::parameter(1, 1, {3.0});
  backward(scale(p, 2.0));
  backward(scale(p, 2.0));
  EXPECT_EQ(p.grad()[0], 4.0);
  p.zero_grad();
  backward(scale(p, 2.0));
  EXPECT_EQ(p.grad()[0], 2.0);
}

TEST(Tensor, NoGradGuardBuildsNoGraph) {
  Tensor p = Tensor::parameter(1, 1, {3.0});
  {
    NoGradGuard g;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(square(p).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(square(p).requires_grad());
}

TEST(GradCheck, Arithmetic) {
  Rng rng(1);
  Tensor a = random_param(rng, 3, 4), b = random_param(rng, 4, 2), c = random_param(rng, 3, 4);
  Tensor bias = random_param(rng, 1, 4), col = random_param(rng, 3, 1), row = random_param(rng, 1, 4);
  const auto r = grad_check({a, b, c, bias, col, row}, [&] {
    Tensor x = add(matmul(add_row(a, bias), b), Tensor::constant(3, 2, {1, 2, 3, 4, 5, 6}));
    Tensor y = sub(mul(a, c), mul_col(c, col));
    Tensor z = add_scalar(scale(repeat_rows(row, 3), -1.7), 0.3);
    return add(weighted_sum(x, 1), add(weighted_sum(y, 2), weighted_sum(mul(z, a), 3)));
  });
  EXPECT_EQ(r.checked, 12u + 8 + 12 + 4 + 3 + 4);
  EXPECT_LE(r.max_rel_err, kTol);
}

TEST(GradCheck, Elementwise) {
  Rng rng(2);
  Tensor a = random_param(rng, 4, 3, -2, 2);
  Tensor b = random_param(rng, 4, 3, -2, 2);
  const auto r = grad_check({a, b}, [&] {
    Tensor t = add(weighted_sum(tanh(a), 1), weighted_sum(sigmoid(b), 2));
    t = add(t, weighted_sum(softplus(a), 3));
    t = add(t, weighted_sum(shifted_softplus(b), 4));
    t = add(t, weighted_sum(exp(scale(a, 0.5)), 5));
    t = add(t, weighted_sum(square(b), 6));
    t = add(t, weighted_sum(clamp(a, -0.5, 0.5), 7));
    t = add(t, weighted_sum(minimum(a, b), 8));
    return add(t, mean(mul(a, b)));
  });
  EXPECT_LE(r.max_rel_err, kTol);
}

TEST(GradCheck, Structure) {
  Rng rng(3);
  Tensor a = random_param(rng, 4, 2), b = random_param(rng, 4, 3);
  const std::vector<int> gather{3, 0, 0, 2, 1};
  const std::vector<int> scatter{1, 0, 1, 2};
  const std::vector<int> cols{4, 0, 2, 1};
  const auto r = grad_check({a, b}, [&] {
    Tensor cat = concat_cols({a, b});
    Tensor t = weighted_sum(gather_rows(cat, gather), 1);
    t = add(t, weighted_sum(scatter_add_rows(b, scatter, 3), 2));
    return add(t, weighted_sum(select_cols(cat, cols), 3));
  });
  EXPECT_LE(r.max_rel_err, kTol);
}

TEST(GradCheck, Distributions) {
  Rng rng(4);
  Tensor logits = random_param(rng, 3, 5, -2, 2);
  Tensor column = random_param(rng, 7, 1, -2, 2);
  Tensor x = random_param(rng, 6, 1), mu = random_param(rng, 6, 1), ls = random_param(rng, 6, 1, -1, 0.5);
  Tensor d = random_param(rng, 5, 1, 0.5, 4.0);
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 0, 0, 0, 1};
  const std::vector<int> segment{0, 0, 1, 1, 1, 2, 0};
  const auto r = grad_check({logits, column, x, mu, ls, d}, [&] {
    Tensor lp = log_softmax_rows(logits, mask);
    Tensor t = weighted_sum(select_cols(lp, std::vector<int>{0, 3, 4}), 1);
    t = add(t, sum(neg_plogp(lp)));
    Tensor seg = segment_log_softmax(column, segment, 3);
    t = add(t, add(weighted_sum(seg, 2), sum(neg_plogp(seg))));
    t = add(t, weighted_sum(gaussian_log_pdf(x, mu, ls), 3));
    return add(t, weighted_sum(radial_basis(d, 6, 5.0, 2.0), 4));
  });
  EXPECT_LE(r.max_rel_err, kTol);
}

TEST(Distributions, LogSoftmaxMasking) {
  const Tensor logits = Tensor::constant(1, 3, {1, 2, 3});
  const std::vector<std::uint8_t> mask{1, 0, 1};
  const Tensor lp = log_softmax_rows(logits, mask);
  EXPECT_EQ(lp.at(0, 1), -std::numeric_limits<double>::infinity());
  EXPECT_NEAR(std::exp(lp.at(0, 0)) + std::exp(lp.at(0, 2)), 1.0, 1e-15);
  EXPECT_EQ(neg_plogp(lp).at(0, 1), 0.0);
  const std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_THROW(log_softmax_rows(logits, none), std::invalid_argument);
}

TEST(Distributions, SegmentLogSoftmaxNormalises) {
  const Tensor col = Tensor::column({0.3, -1.0, 2.0, 0.5, 0.1});
  const std::vector<int> seg{0, 1, 0, 1, 1};
  const Tensor lp = segment_log_softmax(col, seg, 2);
  double s0 = 0, s1 = 0;
  for (int i = 0; i < 5; ++i) (seg[i] == 0 ? s0 : s1) += std::exp(lp.at(i, 0));
  EXPECT_NEAR(s0, 1.0, 1e-15);
  EXPECT_NEAR(s1, 1.0, 1e-15);
}

TEST(Distributions, GaussianLogPdfValue) {
  const Tensor v = gaussian_log_pdf(Tensor::column({1.5}), Tensor::column({0.5}), Tensor::column({std::log(2.0)}));
  EXPECT_NEAR(v.item(), -0.5 * 0.25 - std::log(2.0) - 0.5 * std::log(2 * kPi), 1e-14);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  Tensor& p = store.add("w", 1, 3, {1.0, -2.0, 0.5});
  backward(weighted_sum(p, 9));
  const std::vector<double> g(p.grad().begin(), p.grad().end());
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.grad_clip = 0.0;
  Adam adam(cfg);
  adam.step(store);
  const double start[] = {1.0, -2.0, 0.5};
  for (int k = 0; k < 3; ++k) {
    // With bias correction, the first update is lr * g / (|g| + eps) per entry.
    EXPECT_NEAR(p.data()[k], start[k] - 0.01 * g[k] / (std::abs(g[k]) + 1e-8), 1e-15);
  }
  EXPECT_EQ(adam.state().step, 1);
}

TEST(Adam, ClipsByGlobalNorm) {
  ParamStore store;
  store.add("a", 1, 1, {0.0});
  store.add("b", 1, 1, {0.0});
  Tensor a = store.get("a"), b = store.get("b");
  // Gradients (1.2, 1.6): global norm 2.
  backward(add(scale(a, 1.2), scale(b, 1.6)));
  EXPECT_NEAR(global_grad_norm(store), 2.0, 1e-15);
  AdamConfig cfg;
  cfg.lr = 1.0;
  cfg.beta1 = 0.0;
  cfg.beta2 = 0.0;
  cfg.eps = 0.0;
  cfg.grad_clip = 0.5;
  // beta = 0 makes the update sign(g); capture the clipped moment instead.
  Adam adam(cfg);
  const double norm = adam.step(store);
  EXPECT_NEAR(norm, 2.0, 1e-15);
  const double m0 = adam.state().m[0][0], m1 = adam.state().m[1][0];
  EXPECT_NEAR(std::hypot(m0, m1), 0.5, 1e-15);
  EXPECT_NEAR(m0, 1.2 * 0.25, 1e-15);
  EXPECT_NEAR(m1, 1.6 * 0.25, 1e-15);
}

TEST(Adam, NanGradientNamesParameter) {
  ParamStore store;
  Tensor& p = store.add("policy.bad", 1, 1, {-1.0});
  backward(scale(p, std::numeric_limits<double>::quiet_NaN()));
  Adam adam;
  try {
    adam.step(store);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("policy.bad"), std::string::npos);
  }
  EXPECT_EQ(p.data()[0], -1.0);
}

TEST(ParamStore, CloneAndAssign) {
  ParamStore a;
  a.add("x", 2, 2, {1, 2, 3, 4});
  a.add("y", 1, 1, {5});
  EXPECT_EQ(a.parameter_count(), 5u);
  EXPECT_THROW(a.add("x", 1, 1, {0}), std::invalid_argument);
  EXPECT_THROW(a.get("z"), std::out_of_range);
  ParamStore b = a.clone();
  b.get("x").mutable_data()[0] = 10;
  EXPECT_EQ(a.get("x").data()[0], 1.0);
  a.assign(b);
  EXPECT_EQ(a.get("x").data()[0], 10.0);
  ParamStore c;
  c.add("x", 2, 2, {0, 0, 0, 0});
  EXPECT_THROW(a.assign(c), std::invalid_argument);
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, SerializeRoundTrip) {
  Rng a(5);
  a.normal();  // leaves a cached spare
  const std::string saved = a.serialize();
  std::vector<double> expected;
  for (int i = 0; i < 20; ++i) expected.push_back(i % 2 ? a.normal() : a.uniform());
  Rng b;
  b.deserialize(saved);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(i % 2 ? b.normal() : b.uniform(), expected[i]);
}

TEST(Rng, DistributionRanges) {
  Rng rng(8);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, CategoricalSkipsMasked) {
  Rng rng(9);
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> lp{std::log(0.25), -inf, std::log(0.75)};
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < 40000; ++i) ++counts[rng.categorical_from_log(lp)];
  EXPECT_EQ(counts[1], 0);
  EXPECT_NEAR(counts[0] / 40000.0, 0.25, 0.015);
}

TEST(Hashes, KnownValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_EQ(mix_seed(7, 3), mix_seed(7, 3));
}
