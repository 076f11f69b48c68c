#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>

#include "../support/random_tensors.hpp"
#include "anivol/encoders/layers.hpp"
#include "anivol/tensor/batch_norm.hpp"
#include "anivol/tensor/checkpoint.hpp"
#include "anivol/tensor/conv.hpp"
#include "anivol/tensor/grad_check.hpp"
#include "anivol/tensor/ops.hpp"
#include "anivol/tensor/pooling.hpp"
#include "anivol/tensor/sgd.hpp"

using namespace anivol;
using anivol::testing::normal_leaf;
using anivol::testing::normal_tensor;
using anivol::testing::projection_for;

namespace {

constexpr int kSeeds = 20;

/// sum(out ⊙ P) for a fixed random P.
Var projected(const Var& out, std::uint64_t seed) { return sum(mul(out, projection_for(out.shape(), seed))); }

}  // namespace

// --- Tensor ------------------------------------------------------------------

TEST(Tensor, ShapeAndDataAgree) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), std::invalid_argument);
  EXPECT_THROW(Tensor({2, 0}), std::invalid_argument);
}

TEST(Tensor, RowMajorLastAxisFastest) {
  Tensor t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at({1, 0}), 3.0);
  EXPECT_EQ(t.at({0, 2}), 2.0);
}

TEST(Autograd, GradientHasValueShape) {
  Var x = normal_leaf({3, 4}, 1);
  projected(relu(x), 2).backward();
  ASSERT_TRUE(x.has_grad());
  EXPECT_EQ(x.grad().shape(), x.shape());
}

TEST(Autograd, NoGradGuardBuildsNoTape) {
  Var x = normal_leaf({3}, 1);
  NoGradGuard guard;
  Var y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
}

// --- conv2d ------------------------------------------------------------------

TEST(Conv2d, IdentityKernelLeavesInputUnchanged) {
  Var x(normal_tensor({1, 1, 4, 5}, 3));
  Var w(Tensor({1, 1, 1, 1}, 1.0));
  EXPECT_EQ(conv2d(x, ConvSpec::planar(1, 1, 1), w).value(), x.value());
}

TEST(Conv2d, AllOnesKernelCountsNeighbours) {
  Var x(Tensor({1, 1, 3, 3}, 1.0));
  Var w(Tensor({1, 1, 3, 3}, 1.0));
  const Tensor y = conv2d(x, ConvSpec::planar(1, 1, 3), w).value();
  EXPECT_EQ(y.at({0, 0, 1, 1}), 9.0);
  EXPECT_EQ(y.at({0, 0, 0, 0}), 4.0);
  EXPECT_EQ(y.at({0, 0, 0, 1}), 6.0);
}

TEST(Conv2d, OutputExtentFormula) {
  EXPECT_EQ(conv_output_extent(64, 7, 2, 3), 32u);
  EXPECT_EQ(conv_output_extent(5, 3, 2, 1), 3u);
  Var x(normal_tensor({1, 2, 9, 7}, 1));
  Var w(normal_tensor({3, 2, 3, 3}, 2));
  EXPECT_EQ(conv2d(x, ConvSpec::planar(2, 3, 3, 2), w).shape(), (Shape{1, 3, 5, 4}));
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
  Var x(normal_tensor({1, 2, 5, 5}, 1));
  Var w(normal_tensor({4, 3, 3, 3}, 2));
  try {
    conv2d(x, ConvSpec::planar(3, 4, 3), w);
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1,2,5,5]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,3,3,3]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Var x = normal_leaf({2, 3, 5, 5}, seed);
    Var w = normal_leaf({4, 3, 3, 3}, seed + 100);
    const auto spec = ConvSpec::planar(3, 4, 3, 1 + seed % 2);
    std::array<Var, 2> inputs{x, w};
    const auto report = grad_check([&] { return projected(conv2d(x, spec, w), seed); }, inputs);
    EXPECT_LE(report.max_relative_error, 1e-5) << "seed " << seed;
    EXPECT_EQ(report.checked, x.size() + w.size());
  }
}

TEST(Conv2d, SliceWiseOnVolumes) {
  Var x(normal_tensor({2, 3, 4, 6, 6}, 5));
  Var w(normal_tensor({2, 3, 3, 3}, 6));
  const auto spec = ConvSpec::planar(3, 2, 3);
  const Tensor y = conv2d(x, spec, w).value();
  ASSERT_EQ(y.shape(), (Shape{2, 2, 4, 6, 6}));
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t d = 0; d < 4; ++d) {
      Tensor slice({1, 3, 6, 6});
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 36; ++i) slice[c * 36 + i] = x.value()[((n * 3 + c) * 4 + d) * 36 + i];
      const Tensor ys = conv2d(Var(slice), spec, w).value();
      for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t i = 0; i < 36; ++i) EXPECT_EQ(ys[o * 36 + i], y[((n * 2 + o) * 4 + d) * 36 + i]);
    }
  }
}

// --- conv3d ------------------------------------------------------------------

TEST(Conv3d, IdentityKernelLeavesInputUnchanged) {
  Var x(normal_tensor({1, 1, 3, 4, 4}, 3));
  Var w(Tensor({1, 1, 1, 1, 1}, 1.0));
  const ConvSpec spec{{1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 1, 1, false};
  EXPECT_EQ(conv3d(x, spec, w).value(), x.value());
}

TEST(Conv3d, AllOnesKernelCountsNeighbours) {
  Var x(Tensor({1, 1, 3, 3, 3}, 1.0));
  Var w(Tensor({1, 1, 3, 3, 3}, 1.0));
  const Tensor y = conv3d(x, ConvSpec::volumetric(1, 1, 3, 3), w).value();
  EXPECT_EQ(y.at({0, 0, 1, 1, 1}), 27.0);
  EXPECT_EQ(y.at({0, 0, 0, 1, 1}), 18.0);
  EXPECT_EQ(y.at({0, 0, 0, 0, 0}), 8.0);
}

TEST(Conv3d, DepthExtentPreserved) {
  for (std::size_t d : {1u, 2u, 5u}) {
    Var x(normal_tensor({1, 2, d, 8, 8}, d));
    Var w(normal_tensor({3, 2, 3, 7, 7}, 1));
    EXPECT_EQ(conv3d(x, ConvSpec::volumetric(2, 3, 3, 7, 2), w).shape(), (Shape{1, 3, d, 4, 4}));
  }
}

TEST(Conv3d, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Var x = normal_leaf({2, 2, 3, 5, 5}, seed);
    Var w = normal_leaf({3, 2, 3, 3, 3}, seed + 100);
    const auto spec = ConvSpec::volumetric(2, 3, 3, 3, 1 + seed % 2);
    std::array<Var, 2> inputs{x, w};
    const auto report = grad_check([&] { return projected(conv3d(x, spec, w), seed); }, inputs);
    EXPECT_LE(report.max_relative_error, 1e-5) << "seed " << seed;
  }
}

TEST(Conv3d, DepthOneKernelEqualsSliceWiseConv2dBitExact) {
  for (int seed = 0; seed < 5; ++seed) {
    const std::size_t stride = 1 + seed % 2;
    Var x(normal_tensor({2, 5, 4, 12, 12}, seed));
    const Tensor w2 = normal_tensor({7, 5, 3, 3}, seed + 50);
    Var w3(w2.reshaped({7, 5, 1, 3, 3}));
    const ConvSpec spec3{{1, 3, 3}, {1, stride, stride}, {0, 1, 1}, 5, 7, false};
    EXPECT_EQ(conv3d(x, spec3, w3).value(), conv2d(x, ConvSpec::planar(5, 7, 3, stride), Var(w2)).value());
  }
}

TEST(Conv3d, RejectsDepthStride) {
  Var x(normal_tensor({1, 1, 3, 4, 4}, 3));
  Var w(Tensor({1, 1, 3, 3, 3}, 1.0));
  const ConvSpec spec{{3, 3, 3}, {2, 1, 1}, {1, 1, 1}, 1, 1, false};
  EXPECT_THROW(conv3d(x, spec, w), std::invalid_argument);
}

// --- (2+1)D ------------------------------------------------------------------

TEST(Conv2Plus1D, CentreTapDepthKernelPassesInputThrough) {
  Initializer init(0);
  Conv2Plus1D unit("u", 1, 1, 1, 3, 1, init);
  unit.spatial().weight().tensor.mutable_value() = Tensor({1, 1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  unit.depth().weight().tensor.mutable_value() = Tensor({1, 1, 3, 1, 1}, {0, 1, 0});
  Tensor positive = normal_tensor({1, 1, 3, 4, 4}, 2);
  for (auto& v : positive.values()) v = std::abs(v);
  const Tensor y = unit.forward(Var(positive), NormMode::eval).value();
  // eval BN at initial statistics scales by 1/sqrt(1 + eps)
  const double bn_scale = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], positive[i] * bn_scale, 1e-15);
}

TEST(Conv2Plus1D, RejectsZeroMidChannels) {
  Var x(normal_tensor({1, 2, 3, 4, 4}, 1));
  EXPECT_THROW(conv2plus1d(x, 2, 2, 0), std::invalid_argument);
}

TEST(Conv2Plus1D, FactorizedPairParameterCount) {
  Initializer init(0);
  const std::size_t mid = choose_mid_channels(64, 64);
  Conv2Plus1D unit("u", 64, 64, mid, 3, 1, init);
  StateList state;
  unit.collect(state);
  EXPECT_EQ(mid, 144u);
  EXPECT_EQ(state.parameter_count(), 9u * 64 * 144 + 2 * 144 + 3 * 144 * 64);
}

TEST(Conv2Plus1D, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Initializer init(seed);
    Conv2Plus1D unit("u", 2, 3, 4, 3, 1, init);
    Var x = normal_leaf({2, 2, 3, 5, 5}, seed);
    std::array<Var, 5> inputs{x, unit.spatial().weight().tensor, unit.depth().weight().tensor,
                              unit.mid_norm().gamma().tensor, unit.mid_norm().beta().tensor};
    const auto report = grad_check([&] { return projected(unit.forward(x, NormMode::train), seed); }, inputs);
    EXPECT_LE(report.max_relative_error, 1e-5) << "seed " << seed << " worst " << report.worst_analytic << " vs "
                                               << report.worst_numeric;
    EXPECT_GT(report.checked, 0u);
  }
}

// --- batch norm --------------------------------------------------------------

TEST(BatchNorm, NormalizedInputIsNearlyUnchanged) {
  // per channel: values ±1, mean 0, biased variance 1
  Tensor x({2, 2, 2, 1}, {1, -1, 1, -1, -1, 1, -1, 1});
  Tensor rm({2}, 0.0), rv({2}, 1.0);
  const Tensor y = batch_norm(Var(x), Var(Tensor({2}, 1.0)), Var(Tensor({2}, 0.0)), rm, rv, NormMode::train).value();
  const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(y[i], x[i] * scale, 1e-15);
    EXPECT_NEAR(y[i], x[i], 5e-6);
  }
}

TEST(BatchNorm, TrainOutputHasZeroMeanUnitVariance) {
  const Tensor x = normal_tensor({4, 3, 5, 5}, 7, 10.0);
  Tensor rm({3}, 0.0), rv({3}, 1.0);
  const Tensor y =
      batch_norm(Var(x), Var(Tensor({3}, 1.0)), Var(Tensor({3}, 0.0)), rm, rv, NormMode::train).value();
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) m += y[(n * 3 + c) * 25 + i];
    m /= 100;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) v += std::pow(y[(n * 3 + c) * 25 + i] - m, 2);
    v /= 100;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
}

TEST(BatchNorm, RunningStatisticsUseMomentum) {
  Tensor x({2, 1, 1, 1}, {1.0, 3.0});
  Tensor rm({1}, 0.0), rv({1}, 1.0);
  batch_norm(Var(x), Var(Tensor({1}, 1.0)), Var(Tensor({1}, 0.0)), rm, rv, NormMode::train);
  EXPECT_DOUBLE_EQ(rm[0], 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(rv[0], 0.9 * 1.0 + 0.1 * 2.0);  // unbiased variance of {1,3} is 2
}

TEST(BatchNorm, ZeroVarianceChannelStaysFinite) {
  Tensor rm({1}, 0.0), rv({1}, 1.0);
  const Tensor y = batch_norm(Var(Tensor({3, 1, 2}, 4.0)), Var(Tensor({1}, 1.0)), Var(Tensor({1}, 0.0)), rm, rv,
                              NormMode::train)
                       .value();
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    for (NormMode mode : {NormMode::train, NormMode::eval}) {
      Var x = normal_leaf({4, 3, 2, 3}, seed);
      Var gamma = normal_leaf({3}, seed + 1);
      Var beta = normal_leaf({3}, seed + 2);
      Tensor rm = normal_tensor({3}, seed + 3), rv({3}, 1.5);
      std::array<Var, 3> inputs{x, gamma, beta};
      const auto report =
          grad_check([&] { return projected(batch_norm(x, gamma, beta, rm, rv, mode), seed); }, inputs);
      EXPECT_LE(report.max_relative_error, 1e-5) << "seed " << seed;
    }
  }
}

// --- pooling -----------------------------------------------------------------

TEST(GlobalAvgPool, ConstantInput) {
  const Tensor y = global_avg_pool_xy(Var(Tensor({2, 3, 4, 5, 5}, 1.75))).value();
  EXPECT_EQ(y.shape(), (Shape{2, 3, 4}));
  for (double v : y.values()) EXPECT_EQ(v, 1.75);
}

TEST(GlobalAvgPool, PerSliceMean) {
  Tensor x({1, 1, 2, 2, 2}, {1, 2, 3, 4, 0, 0, 0, 0});
  const Tensor y = global_avg_pool_xy(Var(x)).value();
  EXPECT_EQ(y[0], 2.5);
  EXPECT_EQ(y[1], 0.0);
}

TEST(GlobalAvgPool, UniformGradient) {
  Var x = normal_leaf({1, 2, 3, 4}, 1);
  sum(global_avg_pool_xy(x)).backward();
  for (double g : x.grad().values()) EXPECT_EQ(g, 1.0 / 12.0);
}

TEST(GlobalAvgPool, CommutesWithChannelPermutation) {
  const Tensor x = normal_tensor({2, 4, 3, 5, 5}, 9);
  const std::array<std::size_t, 4> perm{2, 0, 3, 1};
  Tensor xp(x.shape());
  const std::size_t block = 3 * 25;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < block; ++i) xp[(n * 4 + c) * block + i] = x[(n * 4 + perm[c]) * block + i];
  const Tensor y = global_avg_pool_xy(Var(x)).value();
  const Tensor yp = global_avg_pool_xy(Var(xp)).value();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(yp.at({n, c, d}), y.at({n, perm[c], d}));
}

TEST(MaxPool, PicksWindowMaximumAndPreservesDepth) {
  Tensor x({1, 1, 1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  const Tensor y = max_pool_xy(Var(x), 3, 2, 1).value();
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 2, 2}));
  EXPECT_EQ(y.values()[0], 6.0);
  EXPECT_EQ(y.values()[3], 16.0);
}

TEST(MaxPool, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Var x = normal_leaf({2, 2, 2, 6, 6}, seed);
    std::array<Var, 1> inputs{x};
    const auto report = grad_check([&] { return projected(max_pool_xy(x), seed); }, inputs);
    EXPECT_LE(report.max_relative_error, 1e-5) << "seed " << seed;
  }
}

// --- elementwise and shape ops -----------------------------------------------

TEST(ElementwiseOps, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Var a = normal_leaf({3, 4}, seed);
    Var b = normal_leaf({3, 4}, seed + 7);
    std::array<Var, 2> inputs{a, b};
    const std::array<std::size_t, 2> swap_axes{1, 0};
    const std::array<std::size_t, 5> rows{2, 0, 0, 1, 2};
    auto f = [&] {
      Var t = add(mul(relu(a), sigmoid(b)), scale(sub(a, b), 0.3));
      Var joined = concat_rows(std::array<Var, 2>{permute(t, swap_axes), reshape(a, {4, 3})});
      return add(projected(gather_rows(t, rows), seed), mean(mul(joined, joined)));
    };
    const auto report = grad_check(f, inputs);
    EXPECT_LE(report.max_relative_error, 1e-5) << "seed " << seed;
  }
}

TEST(Sigmoid, StableAtLargeMagnitude) {
  const Tensor y = sigmoid(Var(Tensor({2}, {-800.0, 800.0}))).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 1.0);
}

// --- fully connected ---------------------------------------------------------

TEST(FullyConnected, ZeroWeightsGiveBias) {
  const Tensor y =
      fully_connected(Var(normal_tensor({3, 4}, 1)), Var(Tensor({1, 4}, 0.0)), Var(Tensor({1}, -0.5))).value();
  EXPECT_EQ(y.shape(), (Shape{3, 1}));
  for (double v : y.values()) EXPECT_EQ(v, -0.5);
}

TEST(FullyConnected, DotProduct) {
  const Tensor y = fully_connected(Var(Tensor({1, 2}, {1, 2})), Var(Tensor({1, 2}, {3, 4})), Var(Tensor({1}, 0.0)))
                       .value();
  EXPECT_EQ(y[0], 11.0);
}

TEST(FullyConnected, RejectsShapeMismatch) {
  EXPECT_THROW(fully_connected(Var(Tensor({1, 3})), Var(Tensor({1, 2})), Var(Tensor({1}))), std::invalid_argument);
  EXPECT_THROW(fully_connected(Var(Tensor({1, 2})), Var(Tensor({2, 2})), Var(Tensor({1}))), std::invalid_argument);
}

TEST(FullyConnected, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Var x = normal_leaf({5, 6}, seed);
    Var w = normal_leaf({1, 6}, seed + 1);
    Var b = normal_leaf({1}, seed + 2);
    std::array<Var, 3> inputs{x, w, b};
    const auto report = grad_check([&] { return projected(fully_connected(x, w, b), seed); }, inputs);
    EXPECT_LE(report.max_relative_error, 1e-6) << "seed " << seed;
  }
}

// --- SGD ---------------------------------------------------------------------

namespace {

Parameter scalar_param(double w, std::optional<double> g) {
  Parameter p = make_parameter("p", Tensor({1}, w));
  if (g) p.tensor.accumulate_grad(Tensor({1}, *g));
  return p;
}

}  // namespace

TEST(Sgd, WeightDecayOnly) {
  std::array<Parameter, 1> p{scalar_param(1.0, 0.0)};
  sgd_step(p, SgdConfig{0.01, 0.01});
  EXPECT_DOUBLE_EQ(p[0].tensor.value()[0], 0.9999);
}

TEST(Sgd, GradientOnly) {
  std::array<Parameter, 1> p{scalar_param(0.0, 1.0)};
  sgd_step(p, SgdConfig{0.01, 0.0});
  EXPECT_DOUBLE_EQ(p[0].tensor.value()[0], -0.01);
  EXPECT_FALSE(p[0].tensor.has_grad());
}

TEST(Sgd, DecayContractsMonotonically) {
  std::array<Parameter, 1> p{scalar_param(-2.0, 0.0)};
  double previous = 2.0;
  for (int step = 0; step < 2; ++step) {
    sgd_step(p, SgdConfig{0.01, 0.01});
    const double now = std::abs(p[0].tensor.value()[0]);
    EXPECT_LT(now, previous);
    previous = now;
    p[0].tensor.accumulate_grad(Tensor({1}, 0.0));
  }
}

TEST(Sgd, MissingGradientNamesParameter) {
  std::array<Parameter, 1> p{make_parameter("stage3.block1.conv2.weight", Tensor({2}, 1.0))};
  try {
    sgd_step(p, SgdConfig{});
    FAIL();
  } catch (const std::logic_error& e) {
    EXPECT_NE(std::string(e.what()).find("stage3.block1.conv2.weight"), std::string::npos);
  }
}

TEST(Sgd, RejectsNonPositiveLearningRate) { EXPECT_THROW((SgdConfig{0.0, 0.01}.validate()), std::invalid_argument); }

// --- grad_check --------------------------------------------------------------

TEST(GradCheck, QuadraticIsExact) {
  Var x(Tensor({2}, {1.0, 2.0}), true);
  std::array<Var, 1> inputs{x};
  const auto report = grad_check([&] { return sum(mul(x, x)); }, inputs);
  EXPECT_LE(report.max_relative_error, 1e-8);
  EXPECT_EQ(report.checked, 2u);
}

TEST(GradCheck, RejectsNonScalar) {
  Var x(Tensor({2}, 1.0), true);
  std::array<Var, 1> inputs{x};
  EXPECT_THROW(grad_check([&] { return mul(x, x); }, inputs), std::invalid_argument);
}

TEST(GradCheck, DetectsCorruptedBackward) {
  auto faulty_square = [](const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.values()) v *= v;
    return make_op_result(std::move(out), {x}, [x](const Tensor& g) {
      Tensor gx(x.shape());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = 1.01 * 2.0 * x.value()[i] * g[i];
      x.accumulate_grad(gx);
    });
  };
  Var x = normal_leaf({6}, 4);
  std::array<Var, 1> inputs{x};
  const auto report = grad_check([&] { return sum(faulty_square(x)); }, inputs);
  EXPECT_GT(report.max_relative_error, 1e-3);
}

TEST(GradCheck, SkipsCoordinatesThatCrossAKink) {
  Var x(Tensor({3}, {1.0, 5e-5, -2.0}), true);
  std::array<Var, 1> inputs{x};
  const auto report = grad_check([&] { return sum(relu(x)); }, inputs);
  EXPECT_EQ(report.skipped, 1u);
  EXPECT_EQ(report.checked, 2u);
  EXPECT_LE(report.max_relative_error, 1e-10);
}

namespace {

// x ↦ √x with an exact backward
Var square_root(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::sqrt(v);
  Tensor root = out;
  return make_op_result(std::move(out), {x}, [x, root](const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] / (2.0 * root[i]);
    x.accumulate_grad(gx);
  });
}

// x ↦ x² with a backward 1% too large
Var faulty_square(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= v;
  return make_op_result(std::move(out), {x}, [x](const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = 1.01 * 2.0 * x.value()[i] * g[i];
    x.accumulate_grad(gx);
  });
}

}  // namespace

TEST(GradCheck, UnconvergedDifferenceIsSkippedNotScored) {
  // at x = 3e-4 a step of 1e-4 is outside the radius where √ is well resolved
  Var x(Tensor({2}, {1.0, 3e-4}), true);
  std::array<Var, 1> inputs{x};
  auto f = [&] { return sum(square_root(x)); };
  const auto plain = grad_check(f, inputs);
  EXPECT_GT(plain.max_relative_error, 1e-5);

  GradCheckOptions options;
  options.convergence_tolerance = 1e-6;
  const auto report = grad_check(f, inputs, options);
  EXPECT_EQ(report.checked, 1u);
  EXPECT_EQ(report.unresolved, 1u);
  EXPECT_EQ(report.skipped, 1u);
  EXPECT_LE(report.max_relative_error, 1e-8);
}

TEST(GradCheck, ConvergenceTestStillDetectsCorruptedBackward) {
  Var x = normal_leaf({6}, 4);
  std::array<Var, 1> inputs{x};
  GradCheckOptions options;
  options.convergence_tolerance = 1e-6;
  const auto report = grad_check([&] { return sum(faulty_square(x)); }, inputs, options);
  EXPECT_EQ(report.unresolved, 0u);
  EXPECT_GT(report.max_relative_error, 1e-3);
}

TEST(GradCheck, ByTensorSamplingReachesSmallInputs) {
  Var big = normal_leaf({2000}, 5), small = normal_leaf({1}, 6);
  std::array<Var, 2> inputs{big, small};
  auto f = [&] { return add(sum(mul(big, big)), sum(faulty_square(small))); };
  GradCheckOptions options;
  options.max_coordinates = 10;
  options.seed = 3;
  EXPECT_LE(grad_check(f, inputs, options).max_relative_error, 1e-8);
  options.sampling = GradCheckOptions::Sampling::by_tensor;
  const auto report = grad_check(f, inputs, options);
  EXPECT_EQ(report.worst_input, 1u);
  EXPECT_GT(report.max_relative_error, 1e-3);
}

// --- determinism and checkpoints ---------------------------------------------

TEST(Determinism, IdenticalInputsGiveIdenticalOutputs) {
  auto run = [] {
    Var x(normal_tensor({2, 3, 4, 8, 8}, 1));
    Var w(normal_tensor({5, 3, 3, 3, 3}, 2));
    Tensor rm({5}, 0.0), rv({5}, 1.0);
    return max_pool_xy(relu(batch_norm(conv3d(x, ConvSpec::volumetric(3, 5, 3, 3), w), Var(Tensor({5}, 1.0)),
                                       Var(Tensor({5}, 0.0)), rm, rv, NormMode::train)))
        .value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  StateList state;
  state.add(make_parameter("a.weight", normal_tensor({3, 2, 3}, 1)));
  state.add(make_parameter("a.bias", Tensor({1}, std::vector<double>{1.0 / 3.0})));
  state.add(Buffer{"a.running_var", Var(normal_tensor({4}, 2))});
  const auto path = std::filesystem::temp_directory_path() / "anivol_tensor_ckpt.bin";
  save_checkpoint(path, state, "toy");

  StateList fresh;
  fresh.add(make_parameter("a.weight", Tensor({3, 2, 3})));
  fresh.add(make_parameter("a.bias", Tensor({1})));
  fresh.add(Buffer{"a.running_var", Var(Tensor({4}))});
  load_checkpoint(path, fresh);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(fresh.parameters()[i].tensor.value(), state.parameters()[i].tensor.value());
  EXPECT_EQ(fresh.buffers()[0].tensor.value(), state.buffers()[0].tensor.value());

  const auto manifest = read_manifest(path);
  EXPECT_EQ(manifest.variant, "toy");
  EXPECT_EQ(manifest.parameter_count, 19u);
  EXPECT_EQ(manifest.record_count, 3u);

  StateList wrong_shape;
  wrong_shape.add(make_parameter("a.weight", Tensor({3, 3, 2})));
  wrong_shape.add(make_parameter("a.bias", Tensor({1})));
  wrong_shape.add(Buffer{"a.running_var", Var(Tensor({4}))});
  EXPECT_THROW(load_checkpoint(path, wrong_shape), std::runtime_error);

  StateList missing;
  missing.add(make_parameter("a.weight", Tensor({3, 2, 3})));
  EXPECT_THROW(load_checkpoint(path, missing), std::runtime_error);
  std::filesystem::remove(path);
  std::filesystem::remove(manifest_path(path));
}

TEST(StateList, NamesAreUnique) {
  StateList state;
  state.add(make_parameter("x", Tensor({1})));
  EXPECT_THROW(state.add(Buffer{"x", Var(Tensor({1}))}), std::invalid_argument);
}
