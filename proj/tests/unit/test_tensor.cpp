#include <gtest/gtest.h>

#include <cmath>

#include "ambiseg/ops.hpp"
#include "ambiseg/optim.hpp"
#include "ambiseg/tensor.hpp"
#include "gradcheck.hpp"

namespace ambiseg {
namespace {

using testing::gradcheck;
using testing::random_tensor;

Tensor64 weights_like(const Tensor64& t, Rng& rng) {
  std::vector<double> v(t.numel());
  for (auto& x : v) x = rng.normal();
  return Tensor64(t.shape(), std::move(v));
}

// Scalar probe of an op output so every output element contributes with a
// distinct weight.
Tensor64 probe(const Tensor64& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, weights_like(out, rng)));
}

TEST(Tensor, ShapeMismatchOnConstruction) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_EQ(Tensor({2, 3}).numel(), 6u);
}

TEST(Tensor, QuadraticGradient) {
  Tensor x({2}, std::vector<float>{1, 2});
  x.set_requires_grad(true);
  sum(mul(x, x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 4.0f);
}

TEST(Tensor, BackwardRequiresScalar) {
  Tensor x({2}, std::vector<float>{1, 2});
  x.set_requires_grad(true);
  EXPECT_THROW(mul(x, x).backward(), UsageError);
}

TEST(Tensor, DisconnectedParameterHasZeroGrad) {
  Tensor x({2}, 1.0f), unused({3}, 5.0f);
  x.set_requires_grad(true);
  unused.set_requires_grad(true);
  sum(x).backward();
  for (float g : unused.grad()) EXPECT_EQ(g, 0.0f);
}

TEST(Tensor, LeafGradientsAccumulate) {
  Tensor x({1}, std::vector<float>{3});
  x.set_requires_grad(true);
  sum(mul(x, x)).backward();
  sum(mul(x, x)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 12.0f);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0f);
}

TEST(Tensor, SharedSubgraphGradient) {
  // y = x*x is used twice: d/dx sum(y + y) = 4x.
  Tensor x({1}, std::vector<float>{1.5f});
  x.set_requires_grad(true);
  Tensor y = mul(x, x);
  sum(add(y, y)).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
}

TEST(Tensor, NoGradGuardSkipsGraph) {
  Tensor x({2}, 1.0f);
  x.set_requires_grad(true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = mul(x, x);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Tensor, BackwardIsDeterministic) {
  Rng rng(7);
  auto run = [&] {
    Rng r(11);
    auto x = random_tensor({2, 3, 5, 5}, r);
    auto k = random_tensor({4, 3, 3, 3}, r);
    auto b = random_tensor({4}, r);
    probe(silu(conv2d(x, k, b, 1)), 3).backward();
    return std::vector<double>(k.grad().begin(), k.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, DeepChainDoesNotOverflowStack) {
  Tensor x({1}, std::vector<float>{1.0f});
  x.set_requires_grad(true);
  Tensor y = x;
  for (int i = 0; i < 20000; ++i) y = add(y, x);
  sum(y).backward();
  EXPECT_FLOAT_EQ(x.grad()[0], 20001.0f);
}

TEST(Tensor, CloneIsIndependent) {
  Tensor a({2}, 1.0f);
  Tensor b = a.clone();
  b.data()[0] = 5.0f;
  EXPECT_EQ(a.data()[0], 1.0f);
  Tensor c = a;
  c.data()[1] = 7.0f;
  EXPECT_EQ(a.data()[1], 7.0f);
}

// ---- conv2d ----

TEST(Conv2d, IdentityCenterKernel) {
  Tensor x({1, 1, 3, 3}, 1.0f);
  Tensor k({1, 1, 3, 3}, 0.0f);
  k.data()[4] = 1.0f;
  Tensor y = conv2d(x, k, Tensor({1}, 0.0f));
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y.data()[i], 1.0f);
}

TEST(Conv2d, PaddedAllOnesKernel) {
  Tensor x({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  Tensor y = conv2d(x, Tensor({1, 1, 3, 3}, 1.0f), Tensor({1}, 0.0f));
  for (float v : y.data()) EXPECT_EQ(v, 10.0f);
}

TEST(Conv2d, StrideShapes) {
  Tensor x({2, 3, 8, 8}, 0.5f);
  EXPECT_EQ(conv2d(x, Tensor({5, 3, 3, 3}), Tensor({5}), 2).shape(), (Shape{2, 5, 4, 4}));
  EXPECT_EQ(conv2d(x, Tensor({5, 3, 3, 3}), Tensor({5}), 1).shape(), (Shape{2, 5, 8, 8}));
  EXPECT_EQ(conv2d(x, Tensor({5, 3, 1, 1}), Tensor({5}), 1).shape(), (Shape{2, 5, 8, 8}));
}

TEST(Conv2d, DownThenUpPreservesDims) {
  Tensor x({1, 2, 8, 8}, 0.5f);
  Tensor y = upsample_nearest2x(conv2d(x, Tensor({2, 2, 3, 3}), Tensor({2}), 2));
  EXPECT_EQ(y.shape(), x.shape());
}

TEST(Conv2d, ChannelMismatch) {
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1})), ShapeError);
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 2, 3, 3}), Tensor({1}), 3), ConfigError);
}

TEST(Conv2d, MatchesDirectLoop) {
  Rng rng(5);
  auto x = random_tensor({2, 3, 5, 6}, rng);
  auto k = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  for (int stride : {1, 2}) {
    auto y = conv2d(x, k, b, stride);
    const std::size_t oh = y.dim(2), ow = y.dim(3);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t o = 0; o < 4; ++o)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j) {
            double acc = b.data()[o];
            for (std::size_t c = 0; c < 3; ++c)
              for (int di = -1; di <= 1; ++di)
                for (int dj = -1; dj <= 1; ++dj) {
                  const long yy = static_cast<long>(i * stride) + di;
                  const long xx = static_cast<long>(j * stride) + dj;
                  if (yy < 0 || xx < 0 || yy >= 5 || xx >= 6) continue;
                  acc += x.data()[((n * 3 + c) * 5 + yy) * 6 + xx] *
                         k.data()[((o * 3 + c) * 3 + (di + 1)) * 3 + (dj + 1)];
                }
            EXPECT_NEAR(y.data()[((n * 4 + o) * oh + i) * ow + j], acc, 1e-12);
          }
  }
}

TEST(Conv2d, GradientCheck) {
  Rng rng(1);
  for (int stride : {1, 2}) {
    for (std::size_t ks : {1u, 3u}) {
      std::vector<Tensor64> in{random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, ks, ks}, rng),
                               random_tensor({4}, rng)};
      const double err = gradcheck(
          [stride](const std::vector<Tensor64>& v) { return probe(conv2d(v[0], v[1], v[2], stride), 9); },
          in);
      EXPECT_LT(err, 1e-5) << "stride " << stride << " k " << ks;
    }
  }
}

// ---- group_norm ----

TEST(GroupNorm, ConstantInputGivesZeros) {
  Tensor x({1, 4, 3, 3}, 2.5f);
  Tensor y = group_norm(x, 2, Tensor({4}, 1.0f), Tensor({4}, 0.0f));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(GroupNorm, NormalizesEachGroup) {
  Rng rng(3);
  const std::size_t c = 8, hw = 16;
  std::vector<double> v(2 * c * hw);
  for (auto& x : v) x = 5.0 + 2.0 * rng.normal();
  Tensor64 x({2, c, 4, 4}, v);
  Tensor64 y = group_norm(x, 4, Tensor64({c}, 1.0), Tensor64({c}, 0.0));
  const std::size_t group = 2 * hw;
  for (std::size_t s = 0; s < 8; ++s) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < group; ++i) mean += y.data()[s * group + i];
    mean /= group;
    for (std::size_t i = 0; i < group; ++i) var += std::pow(y.data()[s * group + i] - mean, 2);
    var /= group;
    EXPECT_LT(std::abs(mean), 1e-4);
    EXPECT_LT(std::abs(var - 1.0), 1e-3);
  }
  Tensor64 z = group_norm(x, 4, Tensor64({c}, 2.0), Tensor64({c}, 3.0));
  double mean = 0.0, var = 0.0;
  for (double e : z.data()) mean += e;
  mean /= z.numel();
  for (double e : z.data()) var += (e - mean) * (e - mean);
  EXPECT_NEAR(mean, 3.0, 1e-4);
  EXPECT_NEAR(std::sqrt(var / z.numel()), 2.0, 1e-3);
}

TEST(GroupNorm, IndivisibleChannels) {
  EXPECT_THROW(group_norm(Tensor({1, 6, 2, 2}), 4, Tensor({6}), Tensor({6})), ConfigError);
  EXPECT_EQ(default_groups(16), 16);
  EXPECT_EQ(default_groups(64), 32);
}

TEST(GroupNorm, GradientCheck) {
  Rng rng(2);
  std::vector<Tensor64> in{random_tensor({2, 4, 3, 3}, rng), random_tensor({4}, rng),
                           random_tensor({4}, rng)};
  EXPECT_LT(gradcheck([](const std::vector<Tensor64>& v) { return probe(group_norm(v[0], 2, v[1], v[2]), 4); },
                      in),
            1e-5);
}

// ---- elementwise, linear and plumbing ops ----

TEST(Silu, Values) {
  Tensor x({3}, std::vector<float>{0.0f, 1.0f, 30.0f});
  Tensor y = silu(x);
  EXPECT_EQ(y.data()[0], 0.0f);
  EXPECT_NEAR(y.data()[1], 1.0 / (1.0 + std::exp(-1.0)), 1e-6);
  EXPECT_NEAR(y.data()[2], 30.0f, 1e-5);
}

TEST(Silu, GradientCheck) {
  Rng rng(4);
  std::vector<Tensor64> in{random_tensor({3, 7}, rng, 2.0)};
  EXPECT_LT(gradcheck([](const std::vector<Tensor64>& v) { return probe(silu(v[0]), 5); }, in), 1e-5);
}

TEST(Linear, Values) {
  Tensor y = linear(Tensor({2}, std::vector<float>{2, 3}), Tensor({1, 2}, 1.0f), Tensor({1}, 1.0f));
  EXPECT_EQ(y.shape(), (Shape{1}));
  EXPECT_EQ(y.data()[0], 6.0f);
  Tensor eye({2, 2}, std::vector<float>{1, 0, 0, 1});
  Tensor x({3, 2}, std::vector<float>{1, 2, 3, 4, 5, 6});
  Tensor z = linear(x, eye, Tensor({2}, 0.0f));
  EXPECT_EQ(z.shape(), x.shape());
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(z.data()[i], x.data()[i]);
  EXPECT_THROW(linear(x, Tensor({2, 3}), Tensor({2})), ShapeError);
}

TEST(Linear, GradientCheck) {
  Rng rng(6);
  std::vector<Tensor64> in{random_tensor({4, 5}, rng), random_tensor({3, 5}, rng), random_tensor({3}, rng)};
  EXPECT_LT(gradcheck([](const std::vector<Tensor64>& v) { return probe(linear(v[0], v[1], v[2]), 6); }, in),
            1e-5);
}

TEST(Ops, AddMulGradientCheck) {
  Rng rng(8);
  std::vector<Tensor64> in{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
  EXPECT_LT(gradcheck([](const std::vector<Tensor64>& v) { return probe(mul(add(v[0], v[1]), v[0]), 7); }, in),
            1e-5);
  EXPECT_THROW(add(Tensor({2}), Tensor({3})), ShapeError);
}

TEST(Ops, ChannelBiasGradientCheck) {
  Rng rng(9);
  std::vector<Tensor64> in{random_tensor({2, 3, 2, 2}, rng), random_tensor({2, 3}, rng)};
  EXPECT_LT(gradcheck([](const std::vector<Tensor64>& v) { return probe(add_channel_bias(v[0], v[1]), 8); }, in),
            1e-5);
}

TEST(Ops, ConcatGradientCheck) {
  Rng rng(10);
  std::vector<Tensor64> in{random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)};
  auto y = concat_channels(in[0], in[1]);
  EXPECT_EQ(y.shape(), (Shape{2, 5, 3, 3}));
  EXPECT_EQ(y.data()[2 * 9], in[1].data()[0]);
  EXPECT_EQ(y.data()[5 * 9], in[0].data()[2 * 9]);
  EXPECT_LT(gradcheck([](const std::vector<Tensor64>& v) { return probe(concat_channels(v[0], v[1]), 9); }, in),
            1e-5);
}

TEST(Ops, UpsampleGradientCheck) {
  Rng rng(11);
  std::vector<Tensor64> in{random_tensor({2, 2, 3, 3}, rng)};
  auto y = upsample_nearest2x(in[0]);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 6, 6}));
  EXPECT_EQ(y.data()[6 + 1], in[0].data()[0]);
  EXPECT_LT(gradcheck([](const std::vector<Tensor64>& v) { return probe(upsample_nearest2x(v[0]), 10); }, in),
            1e-5);
}

TEST(Ops, CombinePerSampleGradientCheck) {
  Rng rng(12);
  std::vector<Tensor64> in{random_tensor({3, 1, 2, 2}, rng), random_tensor({3, 1, 2, 2}, rng)};
  const std::vector<double> a{0.5, -1.0, 2.0}, c{1.5, 0.25, -3.0};
  EXPECT_LT(gradcheck([&](const std::vector<Tensor64>& v) { return probe(combine_per_sample(v[0], a, v[1], c), 11); },
                      in),
            1e-5);
}

TEST(Ops, WeightedMseGradientCheck) {
  Rng rng(13);
  std::vector<Tensor64> in{random_tensor({3, 1, 2, 2}, rng), random_tensor({3, 1, 2, 2}, rng)};
  const std::vector<double> w{1.0, 0.5, 4.0};
  EXPECT_LT(gradcheck([&](const std::vector<Tensor64>& v) { return weighted_mse(v[0], v[1], w); }, in), 1e-5);
}

TEST(Ops, WeightedMseValue) {
  Tensor64 p({2, 2}, std::vector<double>{1, 1, 0, 0});
  Tensor64 t({2, 2}, std::vector<double>{0, 0, 0, 2});
  const std::vector<double> w{3.0, 1.0};
  // (3 * 1 + 1 * 2) / 2
  EXPECT_DOUBLE_EQ(weighted_mse(p, t, w).item(), 2.5);
}

// ---- optimizer ----

std::vector<NamedParam> scalar_param(float value, float grad) {
  Tensor p({1}, std::vector<float>{value});
  p.set_requires_grad(true);
  p.grad()[0] = grad;
  return {{"p", p}};
}

TEST(AdamW, ZeroGradNoDecayIsIdentity) {
  auto params = scalar_param(0.7f, 0.0f);
  AdamWState st;
  st.weight_decay = 0.0;
  adamw_step(params, st);
  EXPECT_EQ(params[0].tensor.data()[0], 0.7f);
  EXPECT_EQ(st.step, 1);
}

TEST(AdamW, FirstStepMovesByLr) {
  auto params = scalar_param(1.0f, 1.0f);
  AdamWState st;
  st.lr = 0.1;
  st.weight_decay = 0.0;
  adamw_step(params, st);
  EXPECT_NEAR(params[0].tensor.data()[0], 0.9, 1e-6);
}

TEST(AdamW, DecayShrinksTowardZero) {
  auto params = scalar_param(2.0f, 0.0f);
  AdamWState st;
  st.lr = 0.1;
  st.weight_decay = 0.5;
  adamw_step(params, st);
  EXPECT_NEAR(params[0].tensor.data()[0], 2.0 * (1.0 - 0.05), 1e-6);
}

TEST(AdamW, ZeroLrIsIdentity) {
  auto params = scalar_param(-1.25f, 3.0f);
  AdamWState st;
  st.lr = 0.0;
  for (int i = 0; i < 3; ++i) adamw_step(params, st);
  EXPECT_EQ(params[0].tensor.data()[0], -1.25f);
}

TEST(AdamW, StateShapeMismatch) {
  auto params = scalar_param(1.0f, 1.0f);
  AdamWState st;
  st.m = {{0.0f, 0.0f}};
  st.v = {{0.0f, 0.0f}};
  EXPECT_THROW(adamw_step(params, st), ShapeError);
}

TEST(ClipGradNorm, Cases) {
  Tensor p({2}, 0.0f);
  p.set_requires_grad(true);
  std::vector<NamedParam> params{{"w", p}};
  p.grad()[0] = 3.0f;
  p.grad()[1] = 4.0f;
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(p.grad()[0], 0.6, 1e-7);
  EXPECT_NEAR(p.grad()[1], 0.8, 1e-7);

  p.grad()[0] = 0.3f;
  p.grad()[1] = 0.4f;
  clip_grad_norm(params, 1.0);
  EXPECT_EQ(p.grad()[0], 0.3f);
  EXPECT_EQ(p.grad()[1], 0.4f);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    for (auto& g : p.grad()) g = static_cast<float>(10.0 * rng.normal());
    clip_grad_norm(params, 1.0);
    EXPECT_LE(std::hypot(p.grad()[0], p.grad()[1]), 1.0 + 1e-6);
  }
}

TEST(ClipGradNorm, NamesNonFiniteParameter) {
  Tensor a({1}, 0.0f), b({1}, 0.0f);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  b.grad()[0] = std::nanf("");
  std::vector<NamedParam> params{{"first", a}, {"enc.0.0.conv1.weight", b}};
  try {
    clip_grad_norm(params, 1.0);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("enc.0.0.conv1.weight"), std::string::npos);
  }
}

TEST(CosineDecay, Schedule) {
  EXPECT_DOUBLE_EQ(cosine_decay_lr(1e-4, 0, 100, 0.2), 1e-4);
  EXPECT_DOUBLE_EQ(cosine_decay_lr(1e-4, 79, 100, 0.2), 1e-4);
  EXPECT_DOUBLE_EQ(cosine_decay_lr(1e-4, 80, 100, 0.2), 1e-4);
  EXPECT_NEAR(cosine_decay_lr(1e-4, 90, 100, 0.2), 0.5e-4, 1e-15);
  EXPECT_LT(cosine_decay_lr(1e-4, 99, 100, 0.2), 1e-6);
}

}  // namespace
}  // namespace ambiseg
