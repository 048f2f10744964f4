#include <gtest/gtest.h>

#include <cmath>

#include "corrnet/identification.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace corrnet;
using namespace corrnet::identification;
using testutil::max_abs_diff;
using testutil::random_tensor;
using Td = Tensor<double>;

namespace {

Var<double> c(Td t) { return ops::constant(std::move(t)); }

IdentificationParams<double> make_params(std::size_t C, const IdentificationConfig& cfg, std::uint64_t seed) {
  ParameterSet<double> ps;
  Rng rng(seed);
  return IdentificationParams<double>::create(ps, "id", C, cfg, rng);
}

Td identity_kernel(std::size_t channels) {
  Td w({channels, 1, 3, 3, 3});
  for (std::size_t o = 0; o < channels; ++o) w[o * 27 + 13] = 1.0;
  return w;
}

}  // namespace

TEST(IdentificationConfig, Defaults) {
  IdentificationConfig cfg;
  EXPECT_EQ(cfg.reduction, 16u);
  EXPECT_EQ(cfg.spatial_scales, 3u);
  EXPECT_EQ(cfg.temporal_scales, 4u);
  EXPECT_EQ(cfg.branch_count(), 12u);
  EXPECT_EQ(cfg.groups_for(4), 4u);
  EXPECT_THROW(cfg.validate(24), std::invalid_argument);
  EXPECT_NO_THROW(cfg.validate(32));
}

TEST(IdentificationConfig, BranchDilationAndPadding) {
  IdentificationConfig cfg;
  for (std::size_t i = 1; i <= 3; ++i)
    for (std::size_t j = 1; j <= 4; ++j) {
      const auto o = cfg.branch_options(4, i, j);
      EXPECT_EQ(o.dilation, (std::array<std::size_t, 3>{j, i, i}));
      EXPECT_EQ(o.padding, (std::array<std::size_t, 3>{j, i, i}));
      EXPECT_EQ(o.groups, 4u);
    }
}

TEST(IdentificationParams, Initialisation) {
  IdentificationConfig cfg;
  auto p = make_params(32, cfg, 1);
  EXPECT_EQ(p.reduce_w.shape(), (Shape{2, 32}));
  EXPECT_EQ(p.branch_w.size(), 12u);
  EXPECT_EQ(p.branch_w[0].shape(), (Shape{2, 1, 3, 3, 3}));
  for (double s : p.sigma.value().data()) EXPECT_EQ(s, 1.0 / 12.0);
  EXPECT_EQ(p.expand_w.shape(), (Shape{32, 2}));
  ParameterSet<double> ps;
  EXPECT_EQ(FusionParams<double>::create(ps, "blk").alpha.value().item(), 0.0);
}

TEST(Reduce, IdentityZeroAndChannelSum) {
  Rng rng(2);
  auto x = random_tensor<double>(rng, {2, 4, 3, 3});
  IdentificationParams<double> p;
  Td eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  p.reduce_w = c(eye);
  p.reduce_b = c(Td({4}));
  Tape<double> tape;
  EXPECT_EQ(reduce(tape, c(x), p).value(), x);
  p.reduce_w = c(Td({4, 4}));
  const auto zero = reduce(tape, c(x), p).value();
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  p.reduce_w = c(Td({1, 4}, 1.0));
  p.reduce_b = c(Td({1}));
  auto s = reduce(tape, c(x), p).value();
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t q = 0; q < 9; ++q) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < 4; ++ch) acc += x[(t * 4 + ch) * 9 + q];
      EXPECT_NEAR(s[t * 9 + q], acc, 1e-15);
    }
}

TEST(MultiscaleMix, ZeroSigmaAndIdentityBranch) {
  IdentificationConfig cfg;
  cfg.reduction = 1;
  auto p = make_params(2, cfg, 3);
  Rng rng(3);
  auto xr = random_tensor<double>(rng, {5, 2, 4, 4});
  Tape<double> tape;
  p.sigma = c(Td({12}));
  const auto silent = multiscale_mix(tape, c(xr), p, cfg).value();
  for (double v : silent.data()) EXPECT_EQ(v, 0.0);
  Td one({12});
  one[cfg.branch_index(2, 3)] = 1.0;
  p.sigma = c(one);
  p.branch_w[cfg.branch_index(2, 3)] = c(identity_kernel(2));
  EXPECT_EQ(multiscale_mix(tape, c(xr), p, cfg).value(), xr);
}

TEST(MultiscaleMix, EqualsSumOfSeparateDilatedConvolutions) {
  IdentificationConfig cfg;
  cfg.reduction = 1;
  cfg.spatial_scales = 2;
  cfg.temporal_scales = 2;
  auto p = make_params(2, cfg, 4);
  Rng rng(4);
  p.sigma = c(random_tensor<double>(rng, {4}));
  auto xr = random_tensor<double>(rng, {4, 2, 5, 5});
  Tape<double> tape;
  auto y = multiscale_mix(tape, c(xr), p, cfg).value();
  Td ref(xr.shape());
  for (std::size_t i = 1; i <= 2; ++i)
    for (std::size_t j = 1; j <= 2; ++j) {
      const auto k = cfg.branch_index(i, j);
      auto part = oracle::conv3d(xr, p.branch_w[k].value(), nullptr, 2, {j, i, i}, {j, i, i});
      for (std::size_t n = 0; n < ref.size(); ++n) ref[n] += p.sigma.value()[k] * part[n];
    }
  EXPECT_LT(max_abs_diff(y, ref), 1e-12);
}

TEST(MultiscaleMix, ReceptiveFieldIsNineBySevenBySeven) {
  IdentificationConfig cfg;  // Nt = 4, Ns = 3, kernel 3x3x3
  cfg.reduction = 1;
  auto p = make_params(1, cfg, 5);
  for (auto& w : p.branch_w) w = c(Td({1, 1, 3, 3, 3}, 1.0));
  const std::size_t T = 21, S = 17;
  Td impulse({T, 1, S, S});
  impulse[(T / 2) * S * S + (S / 2) * S + S / 2] = 1.0;
  Tape<double> tape;
  auto y = multiscale_mix(tape, c(impulse), p, cfg).value();
  std::size_t t0 = T, t1 = 0, h0 = S, h1 = 0, w0 = S, w1 = 0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t h = 0; h < S; ++h)
      for (std::size_t w = 0; w < S; ++w) {
        if (y[(t * S + h) * S + w] == 0.0) continue;
        t0 = std::min(t0, t), t1 = std::max(t1, t);
        h0 = std::min(h0, h), h1 = std::max(h1, h);
        w0 = std::min(w0, w), w1 = std::max(w1, w);
      }
  EXPECT_EQ(t1 - t0 + 1, 9u);
  EXPECT_EQ(h1 - h0 + 1, 7u);
  EXPECT_EQ(w1 - w0 + 1, 7u);
}

TEST(Attention, ZeroInputZeroBias) {
  IdentificationConfig cfg;
  auto p = make_params(32, cfg, 6);
  Tape<double> tape;
  auto m = attention(tape, c(Td({2, 2, 3, 3})), p).value();
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, SaturatesBelowOneHalfAndMatchesComposition) {
  IdentificationConfig cfg;
  auto p = make_params(32, cfg, 7);
  p.expand_b = c(Td({32}, 30.0));
  Tape<double> tape;
  const auto saturated = attention(tape, c(Td({1, 2, 2, 2})), p).value();
  for (double v : saturated.data()) {
    EXPECT_LT(v, 0.5);
    EXPECT_GT(v, 0.4999);
  }
  Rng rng(7);
  p.expand_b = c(random_tensor<double>(rng, {32}));
  auto xm = random_tensor<double>(rng, {2, 2, 2, 3});
  auto m = attention(tape, c(xm), p).value();
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t o = 0; o < 32; ++o)
      for (std::size_t q = 0; q < 6; ++q) {
        double z = p.expand_b.value()[o];
        for (std::size_t ci = 0; ci < 2; ++ci) z += p.expand_w.value()[o * 2 + ci] * xm[(t * 2 + ci) * 6 + q];
        EXPECT_NEAR(m[(t * 32 + o) * 6 + q], 1.0 / (1.0 + std::exp(-z)) - 0.5, 1e-14);
      }
}

TEST(Attention, ZeroInitExpandGivesZeroMaps) {
  IdentificationConfig cfg;
  cfg.zero_init_expand = true;
  auto p = make_params(32, cfg, 8);
  Rng rng(8);
  Tape<double> tape;
  auto m = attention_maps(tape, c(random_tensor<double>(rng, {3, 32, 4, 4})), p, cfg).value();
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, RangeOverRandomDraws) {
  IdentificationConfig cfg;
  cfg.reduction = 4;
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = make_params(8, cfg, 100 + trial);
    Tape<double> tape;
    auto m = attention_maps(tape, c(random_tensor<double>(rng, {2, 8, 3, 3}, -50, 50)), p, cfg).value();
    for (double v : m.data()) {
      ASSERT_GT(v, -0.5);
      ASSERT_LT(v, 0.5);
    }
  }
}

TEST(Fuse, Examples) {
  Rng rng(10);
  auto x = random_tensor<double>(rng, {2, 3, 2, 2});
  auto traj = random_tensor<double>(rng, {2, 3, 2, 2});
  auto m = random_tensor<double>(rng, {2, 3, 2, 2}, -0.5, 0.5);
  Tape<double> tape;
  EXPECT_EQ(fuse(tape, c(x), c(traj), c(m), c(Td::scalar(0.0))).value(), x);
  EXPECT_EQ(fuse(tape, c(x), c(traj), c(Td(x.shape())), c(Td::scalar(0.7))).value(), x);
  auto s = fuse(tape, c(Td({1, 1, 1, 1}, 1.0)), c(Td({1, 1, 1, 1}, 2.0)), c(Td({1, 1, 1, 1}, 0.25)), c(Td::scalar(1.0)));
  EXPECT_EQ(s.value().item(), 1.5);
  EXPECT_THROW(fuse(tape, c(x), c(Td({2, 3, 2, 1})), c(m), c(Td::scalar(1.0))), ShapeError);
}
