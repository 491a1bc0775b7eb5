#include <gtest/gtest.h>

#include <cmath>

#include "unicd/autograd.hpp"
#include "unicd/nn.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace unicd;
using unicd::testing::gradcheck;
using unicd::testing::uniform;

namespace {

// Weighted sum so every output element carries a distinct upstream gradient.
Var probe(const Var& y, uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, constant(uniform(y.shape(), rng))));
}

}  // namespace

TEST(Autograd, ElementwiseOps) {
  std::mt19937_64 rng(1);
  const Tensor a = uniform({2, 3, 4, 4}, rng), b = uniform({2, 3, 4, 4}, rng);
  auto f = [](const std::vector<Var>& v) {
    Var y = add(mul(v[0], v[1]), sub(sigmoid(v[0]), scale(relu(v[1]), 0.3)));
    return probe(add_scalar(abs(y), 0.1));
  };
  EXPECT_LT(gradcheck(f, {a, b}).rel(), 1e-6);
}

TEST(Autograd, Conv2dWithBias) {
  std::mt19937_64 rng(2);
  const Tensor x = uniform({2, 3, 6, 5}, rng), w = uniform({4, 3, 3, 3}, rng), bias = uniform({4}, rng);
  auto f = [](const std::vector<Var>& v) { return probe(conv2d(v[0], v[1], v[2])); };
  EXPECT_LT(gradcheck(f, {x, w, bias}).rel(), 1e-6);
}

TEST(Autograd, Conv2dMatchesDirectSum) {
  std::mt19937_64 rng(3);
  const Tensor x = uniform({1, 2, 5, 5}, rng), w = uniform({1, 2, 3, 3}, rng);
  const Tensor y = conv2d(constant(x), constant(w), std::nullopt).value();
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 5; ++j) {
      double s = 0;
      for (int64_t c = 0; c < 2; ++c)
        for (int64_t di = -1; di <= 1; ++di)
          for (int64_t dj = -1; dj <= 1; ++dj) {
            const int64_t yi = i + di, xj = j + dj;
            if (yi < 0 || yi >= 5 || xj < 0 || xj >= 5) continue;
            s += x.at(0, c, yi, xj) * w.at(0, c, di + 1, dj + 1);
          }
      EXPECT_NEAR(y.at(0, 0, i, j), s, 1e-12);
    }
}

TEST(Autograd, GroupNorm) {
  std::mt19937_64 rng(4);
  const Tensor x = uniform({2, 4, 3, 3}, rng), g = uniform({4}, rng, 0.5, 1.5), b = uniform({4}, rng);
  auto f = [](const std::vector<Var>& v) { return probe(group_norm(v[0], 2, v[1], v[2])); };
  EXPECT_LT(gradcheck(f, {x, g, b}).rel(), 1e-5);
}

TEST(Autograd, GroupNormStatistics) {
  std::mt19937_64 rng(5);
  const Tensor x = uniform({1, 4, 3, 3}, rng, 0, 5);
  const Tensor y = group_norm(constant(x), 1, constant(Tensor({4}, 1.0)), constant(Tensor({4}))).value();
  EXPECT_NEAR(y.mean(), 0.0, 1e-12);
  double ss = 0;
  for (double v : y.values()) ss += v * v;
  EXPECT_NEAR(ss / static_cast<double>(y.numel()), 1.0, 1e-3);
}

TEST(Autograd, PoolingResizeAndLayout) {
  std::mt19937_64 rng(6);
  const Tensor x = uniform({1, 2, 4, 4}, rng), z = uniform({1, 3, 4, 4}, rng);
  auto f = [](const std::vector<Var>& v) {
    Var pooled = avg_pool(v[0], 2);
    Var up = resize_bilinear(pooled, 4, 4);
    Var cat = concat_channels({up, v[1]});
    Var flipped = flip(cat, true, true);
    return add(probe(flipped), probe(global_avg_pool(v[0]), 7));
  };
  EXPECT_LT(gradcheck(f, {x, z}).rel(), 1e-6);
}

TEST(Autograd, ChannelNormalizeAndMask) {
  std::mt19937_64 rng(7);
  const Tensor x = uniform({2, 3, 3, 3}, rng);
  Tensor mask({2, 1, 3, 3});
  for (int64_t i = 0; i < mask.numel(); i += 2) mask[i] = 1;
  auto f = [&](const std::vector<Var>& v) { return probe(mask_channels(channel_l2_normalize(v[0]), mask)); };
  EXPECT_LT(gradcheck(f, {x}).rel(), 1e-6);
  const Tensor n = channel_l2_normalize(constant(x)).value();
  double norm = 0;
  for (int64_t c = 0; c < 3; ++c) norm += n.at(1, c, 2, 1) * n.at(1, c, 2, 1);
  EXPECT_NEAR(norm, 1.0, 1e-9);
}

TEST(Autograd, BilinearResizeIdentityAndConstant) {
  std::mt19937_64 rng(8);
  const Tensor x = uniform({1, 1, 4, 4}, rng);
  EXPECT_EQ(resize_bilinear(x, 4, 4), x);
  const Tensor c({1, 2, 2, 2}, 3.0);
  const Tensor up = resize_bilinear(c, 8, 8);
  for (double v : up.values()) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(Autograd, DetachStopsGradient) {
  Var p = parameter(Tensor({2}, 1.0));
  Var y = sum(add(p, detach(scale(p, 5.0))));
  backward(y);
  EXPECT_EQ(p.grad(), Tensor({2}, 1.0));
}

TEST(Autograd, GradientsAccumulateOverReuse) {
  Var p = parameter(Tensor({1}, 2.0));
  backward(sum(mul(p, p)));
  EXPECT_DOUBLE_EQ(p.grad()[0], 4.0);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  RunConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0;
  ParamStore ps;
  Var w = ps.add("w", Tensor({2}, std::vector<double>{1.0, -1.0}));
  backward(sum(mul(w, constant(Tensor({2}, std::vector<double>{3.0, -0.5})))));
  AdamW opt(cfg);
  opt.step(ps);
  EXPECT_NEAR(ps.get("w").value()[0], 0.9, 1e-6);
  EXPECT_NEAR(ps.get("w").value()[1], -0.9, 1e-6);
}

TEST(AdamW, ZeroLearningRateKeepsParameters) {
  RunConfig cfg;
  cfg.lr = 0;
  ParamStore ps;
  Var w = ps.add("w", Tensor({3}, 0.7));
  backward(sum(w));
  AdamW opt(cfg);
  opt.step(ps);
  EXPECT_EQ(ps.get("w").value(), Tensor({3}, 0.7));
}
