#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <random>

#include "anivol/encoders/encoder.hpp"
#include "anivol/tensor/checkpoint.hpp"
#include "anivol/tensor/ops.hpp"

using namespace anivol;

namespace {

const std::map<std::string, std::size_t> kReferenceCounts{
    {"f-R2D", 2'796'001},  {"f-R3D", 8'291'873},  {"f-R(2+1)D", 8'294'563}, {"f-MC2", 2'799'137},
    {"f-MC3", 2'872'865},  {"f-MC4", 3'130'913},  {"f-MC5", 4'163'105},     {"f-rMC2", 8'288'737},
    {"f-rMC3", 8'215'009}, {"f-rMC4", 7'956'961}, {"f-rMC5", 6'924'769},
};

Var random_volume(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return Var(std::move(t));
}

double column(const Tensor& f, std::size_t n, std::size_t c, std::size_t d) {
  return f.at({n, c, d});
}

}  // namespace

TEST(ChooseMidChannels, FormulaExamples) {
  EXPECT_EQ(choose_mid_channels(64, 64), 144u);
  EXPECT_EQ(choose_mid_channels(32, 32), 72u);
  EXPECT_EQ(choose_mid_channels(1, 32), 8u);
  EXPECT_EQ(choose_mid_channels(128, 256), 460u);
}

TEST(StagePlan, NamedPlans) {
  auto r2d = make_variant("f-R2D").plan;
  for (std::size_t l = 1; l <= 5; ++l) EXPECT_EQ(r2d.layer(l), LayerKind::planar);

  auto rmc5 = make_variant("f-rMC5").plan;
  EXPECT_EQ(rmc5.stem, LayerKind::planar);
  EXPECT_EQ(rmc5.stages[0].kind, LayerKind::planar);
  EXPECT_EQ(rmc5.stages[1].kind, LayerKind::planar);
  EXPECT_EQ(rmc5.stages[2].kind, LayerKind::planar);
  EXPECT_EQ(rmc5.stages[3].kind, LayerKind::volumetric);

  auto mc2 = make_variant("f-MC2").plan;
  EXPECT_EQ(mc2.stem, LayerKind::volumetric);
  for (const auto& s : mc2.stages) EXPECT_EQ(s.kind, LayerKind::planar);
}

TEST(StagePlan, EarlyAndLateFusionAreComplements) {
  for (int x = 2; x <= 5; ++x) {
    auto mc = make_variant("f-MC" + std::to_string(x)).plan;
    auto rmc = make_variant("f-rMC" + std::to_string(x)).plan;
    for (std::size_t l = 1; l <= 5; ++l) {
      EXPECT_NE(mc.layer_spans_depth(l), rmc.layer_spans_depth(l)) << "x=" << x << " layer " << l;
    }
  }
}

TEST(StagePlan, UnknownNameListsValidNames) {
  try {
    make_variant("f-R4D");
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    for (auto name : variant_names()) EXPECT_NE(msg.find(name), std::string::npos);
  }
}

TEST(ParameterCount, AllElevenVariantsExact) {
  ASSERT_EQ(variant_names().size(), 11u);
  for (auto name : variant_names()) {
    const auto model = build_variant(name);
    EXPECT_EQ(count_params(model), kReferenceCounts.at(std::string(name))) << name;
    EXPECT_EQ(count_params(make_variant(name).plan), kReferenceCounts.at(std::string(name))) << name;
  }
}

TEST(ParameterCount, ClosedFormDifferences) {
  const auto r2d = count_params(make_variant("f-R2D").plan);
  // stage 4: one 128->256 and three 256->256 convs go from 3x3 to 3x3x3
  EXPECT_EQ(count_params(make_variant("f-rMC5").plan) - r2d, 2u * 9 * (128 * 256 + 3 * 256 * 256));
  EXPECT_EQ(2u * 9 * (128 * 256 + 3 * 256 * 256), 4'128'768u);
  EXPECT_EQ(count_params(make_variant("f-R3D").plan) - r2d, 5'495'872u);
}

TEST(Encoder, NoConvStridesDepth) {
  for (auto name : variant_names()) {
    const auto model = build_variant(name);
    for (const auto& spec : model.encoder.conv_specs()) {
      if (spec.axes() == 3) {
        EXPECT_EQ(spec.stride[0], 1u) << name;
        EXPECT_EQ(spec.padding[0], spec.kernel[0] / 2) << name;
      }
    }
  }
}

TEST(Encoder, DepthPreservedAtEveryStage) {
  for (auto name : variant_names()) {
    const auto model = build_variant(name);
    const auto shapes = model.encoder.stage_shapes({2, 1, 12, 64, 64});
    ASSERT_EQ(shapes.size(), 5u);
    for (const auto& s : shapes) EXPECT_EQ(s[2], 12u) << name;
    EXPECT_EQ(shapes.back(), (Shape{2, 256, 12, 2, 2})) << name;
  }
}

TEST(Encoder, OutputShapeContract) {
  auto model = build_variant("f-rMC5", 3);
  const auto f = model.encoder.encode(random_volume({2, 1, 12, 64, 64}, 1), NormMode::train);
  EXPECT_EQ(f.values.shape(), (Shape{2, 256, 12}));
}

TEST(Encoder, SingleSliceInputForEveryVariant) {
  for (auto name : variant_names()) {
    auto model = build_variant(name, 5);
    const auto f = model.encoder.encode(random_volume({1, 1, 1, 16, 16}, 2), NormMode::eval);
    EXPECT_EQ(f.values.shape(), (Shape{1, 256, 1})) << name;
    EXPECT_TRUE(f.values.value().all_finite()) << name;
  }
}

TEST(Encoder, RejectsIndivisibleExtentWithPaddingHint) {
  auto model = build_variant("f-R2D");
  try {
    model.encoder.encode(random_volume({1, 1, 2, 20, 32}, 0), NormMode::eval);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("pad H by 12"), std::string::npos) << e.what();
  }
}

TEST(Encoder, PlanarVariantIsSliceIndependent) {
  auto model = build_variant("f-R2D", 11);
  NoGradGuard no_grad;
  const std::size_t d = 6;
  Var volume = random_volume({1, 1, d, 32, 32}, 4);
  const Tensor base = model.encoder.encode(volume, NormMode::eval).values.value();

  // swap slices 1 and 4
  Tensor swapped = volume.value();
  const std::size_t plane = 32 * 32;
  for (std::size_t i = 0; i < plane; ++i) std::swap(swapped[1 * plane + i], swapped[4 * plane + i]);
  const Tensor out = model.encoder.encode(Var(swapped), NormMode::eval).values.value();
  for (std::size_t c = 0; c < 256; ++c) {
    for (std::size_t s = 0; s < d; ++s) {
      const std::size_t src = s == 1 ? 4 : s == 4 ? 1 : s;
      EXPECT_EQ(column(out, 0, c, s), column(base, 0, c, src));
    }
  }
}

TEST(Encoder, LateFusionDepthRadiusIsFour) {
  auto model = build_variant("f-rMC5", 13);
  NoGradGuard no_grad;
  const std::size_t depth = 13, hit = 6;
  Var volume = random_volume({1, 1, depth, 16, 16}, 8);
  const Tensor base = model.encoder.encode(volume, NormMode::eval).values.value();
  Tensor poked = volume.value();
  poked[hit * 256 + 7 * 16 + 9] += 5.0;
  const Tensor out = model.encoder.encode(Var(poked), NormMode::eval).values.value();
  for (std::size_t s = 0; s < depth; ++s) {
    bool changed = false;
    for (std::size_t c = 0; c < 256; ++c) changed |= column(out, 0, c, s) != column(base, 0, c, s);
    const std::size_t dist = s > hit ? s - hit : hit - s;
    EXPECT_EQ(changed, dist <= 4) << "slice " << s;
  }
}

TEST(Encoder, ForwardIsDeterministic) {
  auto a = build_variant("f-MC3", 21);
  auto b = build_variant("f-MC3", 21);
  Var volume = random_volume({2, 1, 4, 32, 32}, 3);
  EXPECT_EQ(a.encoder.encode(volume, NormMode::train).values.value(),
            b.encoder.encode(volume, NormMode::train).values.value());
}

TEST(Encoder, CheckpointRoundTripReproducesFeatures) {
  auto source = build_variant("f-R(2+1)D", 1);
  Var volume = random_volume({2, 1, 3, 16, 16}, 6);
  source.encoder.encode(volume, NormMode::train);  // moves running stats off their init
  const Tensor expected = source.encoder.encode(volume, NormMode::eval).values.value();

  const auto path = std::filesystem::temp_directory_path() / "anivol_encoder_roundtrip.ckpt";
  save_checkpoint(path, source.state(), "f-R(2+1)D");
  auto target = build_variant("f-R(2+1)D", 99);
  auto state = target.state();
  load_checkpoint(path, state);
  EXPECT_EQ(target.encoder.encode(volume, NormMode::eval).values.value(), expected);
  EXPECT_EQ(read_manifest(path).parameter_count, 8'294'563u);
  std::filesystem::remove(path);
  std::filesystem::remove(manifest_path(path));
}

TEST(Encoder, DescribeTotalMatchesCount) {
  for (auto name : variant_names()) {
    const auto model = build_variant(name);
    const auto table = describe_table(model, 12, 64);
    const auto total_pos = table.rfind("total");
    ASSERT_NE(total_pos, std::string::npos);
    EXPECT_EQ(std::stoull(table.substr(total_pos + 5)), count_params(model)) << table;
  }
}

TEST(SliceHead, ZeroFeaturesGiveBias) {
  Initializer init(0);
  SliceHead head(256, init);
  head.bias().tensor.mutable_value()[0] = 0.75;
  const Var logits = head.forward(FeatureMatrix{Var(Tensor({2, 256, 5}, 0.0))});
  EXPECT_EQ(logits.shape(), (Shape{2, 5}));
  for (double v : logits.value().values()) EXPECT_EQ(v, 0.75);
}

TEST(SliceHead, IdenticalColumnsGiveIdenticalLogits) {
  Initializer init(1);
  SliceHead head(256, init);
  Tensor f({1, 256, 4});
  for (std::size_t c = 0; c < 256; ++c)
    for (std::size_t d = 0; d < 4; ++d) f.at({0, c, d}) = std::sin(double(c));
  const Var logits = head.forward(FeatureMatrix{Var(f)});
  for (std::size_t d = 1; d < 4; ++d) EXPECT_EQ(logits.value()[d], logits.value()[0]);
}

TEST(SliceHead, SharedWeightGradientIsSumOfPerSliceGradients) {
  Initializer init(2);
  SliceHead head(256, init);
  Tensor f = random_volume({2, 256, 3}, 9).value();
  sum(head.forward(FeatureMatrix{Var(f)})).backward();
  const Tensor shared = head.weight().tensor.grad();

  Tensor manual({1, 256}, 0.0);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t d = 0; d < 3; ++d) {
      Var w(head.weight().tensor.value(), true);
      Tensor row({1, 256});
      for (std::size_t c = 0; c < 256; ++c) row[c] = f.at({n, c, d});
      fully_connected(Var(row), w, head.bias().tensor.detach()).backward();
      accumulate(manual, w.grad());
    }
  }
  EXPECT_LE(max_abs_difference(shared, manual), 1e-12);
}
