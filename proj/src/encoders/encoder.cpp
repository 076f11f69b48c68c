#include "anivol/encoders/encoder.hpp"

#include <array>
#include <cmath>
#include <fmt/format.h>
#include <stdexcept>

#include "anivol/tensor/ops.hpp"
#include "anivol/tensor/pooling.hpp"

namespace anivol {

namespace {

std::vector<BasicBlock> make_blocks(const StagePlan& plan, Initializer& init) {
  std::vector<BasicBlock> blocks;
  std::size_t in_ch = StagePlan::kWidths[0];
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto& stage = plan.stages[s];
    for (std::size_t b = 0; b < stage.blocks; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      blocks.emplace_back(fmt::format("stage{}.block{}", s + 1, b), stage.kind, in_ch, stage.out_channels, stride,
                          init);
      in_ch = stage.out_channels;
    }
  }
  return blocks;
}

}  // namespace

void validate_volume_shape(const Shape& shape) {
  if (shape.size() != 5 || shape[1] != StagePlan::kInputChannels) {
    throw std::invalid_argument("encoder input must be [N,1,D,H,W], got " + to_string(shape));
  }
  const std::size_t h = shape[3], w = shape[4];
  if (h % 16 != 0 || w % 16 != 0) {
    const std::size_t ph = (16 - h % 16) % 16, pw = (16 - w % 16) % 16;
    throw std::invalid_argument(fmt::format(
        "encoder input H×W = {}×{} must be divisible by 16; pad H by {} and W by {} (to {}×{})", h, w, ph, pw,
        h + ph, w + pw));
  }
}

Encoder::Encoder(EncoderVariant variant, std::uint64_t seed)
    : Encoder(std::move(variant), Initializer(seed)) {}

Encoder::Encoder(EncoderVariant variant, Initializer init)
    : variant_(std::move(variant)),
      stem_(variant_.plan.stem, StagePlan::kWidths[0], init),
      blocks_(make_blocks(variant_.plan, init)) {}

FeatureMatrix Encoder::encode(const Var& volume, NormMode mode) {
  validate_volume_shape(volume.shape());
  Var x = stem_.forward(volume, mode);
  for (auto& block : blocks_) x = block.forward(x, mode);
  return FeatureMatrix{global_avg_pool_xy(x)};
}

StateList Encoder::state() const {
  StateList state;
  stem_.collect(state);
  for (const auto& block : blocks_) block.collect(state);
  return state;
}

std::vector<ConvSpec> Encoder::conv_specs() const {
  auto specs = stem_.conv_specs();
  for (const auto& block : blocks_) {
    for (auto& s : block.conv_specs()) specs.push_back(std::move(s));
  }
  return specs;
}

std::vector<Shape> Encoder::stage_shapes(const Shape& input) const {
  std::vector<Shape> shapes{stem_.output_shape(input)};
  Shape shape = shapes.front();
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    shape = blocks_[i].output_shape(shape);
    if (i % 2 == 1) shapes.push_back(shape);
  }
  return shapes;
}

void Encoder::describe(const Shape& input, std::vector<LayerRow>& rows) const {
  stem_.describe(input, rows);
  Shape shape = stem_.output_shape(input);
  for (const auto& block : blocks_) {
    block.describe(shape, rows);
    shape = block.output_shape(shape);
  }
  rows.push_back({"pool", "global xy", "-", {shape[0], shape[1], shape[2]}, 0});
}

// ---------------------------------------------------------------------------

SliceHead::SliceHead(std::size_t features, Initializer& init)
    : weight_(make_parameter("head.weight", init.uniform({1, features}, 1.0 / std::sqrt(double(features))))),
      bias_(make_parameter("head.bias", init.uniform({1}, 1.0 / std::sqrt(double(features))))) {}

Var SliceHead::forward(const FeatureMatrix& features) const {
  const std::size_t n = features.batch(), c = features.channels(), d = features.slice_count();
  static constexpr std::array<std::size_t, 3> kToSliceMajor{0, 2, 1};
  Var rows = reshape(permute(features.values, kToSliceMajor), {n * d, c});
  return reshape(fully_connected(rows, weight_.tensor, bias_.tensor), {n, d});
}

void SliceHead::collect(StateList& state) const {
  state.add(weight_);
  state.add(bias_);
}

void SliceHead::describe(const Shape& features, std::vector<LayerRow>& rows) const {
  rows.push_back({"head.fc", "-", "-", {features[0], features[2]}, weight_.tensor.size() + bias_.tensor.size()});
}

StateList SliceModel::state() const {
  StateList state = encoder.state();
  head.collect(state);
  return state;
}

SliceModel build_variant(std::string_view name, std::uint64_t seed) {
  Initializer head_init(seed ^ 0x9e3779b97f4a7c15ull);
  return SliceModel{Encoder(make_variant(name), seed), SliceHead(StagePlan::kFeatureChannels, head_init)};
}

std::size_t count_params(const SliceModel& model) { return model.state().parameter_count(); }

namespace {

std::size_t bn(std::size_t c) { return 2 * c; }

/// One 3×3 stage conv (including any BN internal to a factorized pair).
std::size_t unit_params(LayerKind kind, std::size_t in, std::size_t out) {
  switch (kind) {
    case LayerKind::planar:
      return 9 * in * out;
    case LayerKind::volumetric:
      return 27 * in * out;
    case LayerKind::factorized: {
      const std::size_t mid = choose_mid_channels(in, out);
      return 9 * in * mid + bn(mid) + 3 * mid * out;
    }
  }
  return 0;
}

std::size_t stem_params(LayerKind kind, std::size_t out) {
  switch (kind) {
    case LayerKind::planar:
      return 49 * out;
    case LayerKind::volumetric:
      return 147 * out;
    case LayerKind::factorized: {
      const std::size_t mid = choose_mid_channels(1, out);
      return 49 * mid + bn(mid) + 3 * mid * out;
    }
  }
  return 0;
}

}  // namespace

std::size_t count_params(const StagePlan& plan) {
  const std::size_t c0 = StagePlan::kWidths[0];
  std::size_t total = stem_params(plan.stem, c0) + bn(c0);
  std::size_t in = c0;
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const auto& st = plan.stages[s];
    for (std::size_t b = 0; b < st.blocks; ++b) {
      total += unit_params(st.kind, in, st.out_channels) + bn(st.out_channels);
      total += unit_params(st.kind, st.out_channels, st.out_channels) + bn(st.out_channels);
      if (in != st.out_channels || (s > 0 && b == 0)) total += in * st.out_channels + bn(st.out_channels);
      in = st.out_channels;
    }
  }
  return total + StagePlan::kFeatureChannels + 1;
}

std::string describe_table(const SliceModel& model, std::size_t slices, std::size_t side) {
  const Shape input{1, StagePlan::kInputChannels, slices, side, side};
  std::vector<LayerRow> rows;
  model.encoder.describe(input, rows);
  model.head.describe(rows.back().output, rows);

  std::size_t name_w = 5, kernel_w = 6, stride_w = 6, shape_w = 12;
  for (const auto& r : rows) {
    name_w = std::max(name_w, r.name.size());
    kernel_w = std::max(kernel_w, r.kernel.size());
    stride_w = std::max(stride_w, r.stride.size());
    shape_w = std::max(shape_w, to_string(r.output).size());
  }
  std::string out = fmt::format("{} on input {}\n", model.encoder.variant().name, to_string(input));
  out += fmt::format("{:<{}}  {:<{}}  {:<{}}  {:<{}}  {:>10}\n", "layer", name_w, "kernel", kernel_w, "stride",
                     stride_w, "output shape", shape_w, "params");
  std::size_t total = 0;
  for (const auto& r : rows) {
    out += fmt::format("{:<{}}  {:<{}}  {:<{}}  {:<{}}  {:>10}\n", r.name, name_w, r.kernel, kernel_w, r.stride,
                       stride_w, to_string(r.output), shape_w, r.params);
    total += r.params;
  }
  out += fmt::format("{:<{}}  {:>{}}\n", "total", name_w, total, kernel_w + stride_w + shape_w + 16);
  return out;
}

}  // namespace anivol
