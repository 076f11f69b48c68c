#include "anivol/encoders/layers.hpp"

#include <cmath>
#include <stdexcept>

#include "anivol/tensor/ops.hpp"
#include "anivol/tensor/pooling.hpp"

namespace anivol {

Tensor Initializer::he_normal(const Shape& shape, std::size_t fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(shape);
  for (auto& v : t.values()) v = dist(rng_);
  return t;
}

Tensor Initializer::uniform(const Shape& shape, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.values()) v = dist(rng_);
  return t;
}

// ---------------------------------------------------------------------------

ConvLayer::ConvLayer(std::string name, ConvSpec spec, Initializer& init) : name_(std::move(name)), spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.bias) throw std::invalid_argument("encoder convolutions carry no bias");
  if (spec_.axes() == 3 && spec_.stride[0] != 1) {
    throw std::invalid_argument(name_ + ": depth stride must be 1");
  }
  const std::size_t fan_in = spec_.parameter_count() / spec_.out_channels;
  weight_ = make_parameter(name_ + ".weight", init.he_normal(spec_.weight_shape(), fan_in));
}

Var ConvLayer::forward(const Var& x) const {
  return spec_.axes() == 2 ? conv2d(x, spec_, weight_.tensor) : conv3d(x, spec_, weight_.tensor);
}

Shape ConvLayer::output_shape(const Shape& in) const {
  if (spec_.axes() == 2) {
    return {in[0], spec_.out_channels, in[2], conv_output_extent(in[3], spec_.kernel[0], spec_.stride[0], spec_.padding[0]),
            conv_output_extent(in[4], spec_.kernel[1], spec_.stride[1], spec_.padding[1])};
  }
  return {in[0], spec_.out_channels, conv_output_extent(in[2], spec_.kernel[0], spec_.stride[0], spec_.padding[0]),
          conv_output_extent(in[3], spec_.kernel[1], spec_.stride[1], spec_.padding[1]),
          conv_output_extent(in[4], spec_.kernel[2], spec_.stride[2], spec_.padding[2])};
}

void ConvLayer::describe(const Shape& input, std::vector<LayerRow>& rows) const {
  rows.push_back({name_, spec_.kernel_string(), spec_.stride_string(), output_shape(input), spec_.parameter_count()});
}

// ---------------------------------------------------------------------------

BatchNormLayer::BatchNormLayer(std::string name, std::size_t channels)
    : name_(std::move(name)),
      gamma_(make_parameter(name_ + ".gamma", Tensor({channels}, 1.0))),
      beta_(make_parameter(name_ + ".beta", Tensor({channels}, 0.0))),
      running_mean_{name_ + ".running_mean", Var(Tensor({channels}, 0.0))},
      running_var_{name_ + ".running_var", Var(Tensor({channels}, 1.0))} {}

Var BatchNormLayer::forward(const Var& x, NormMode mode) {
  return batch_norm(x, gamma_.tensor, beta_.tensor, running_mean_.tensor.mutable_value(),
                    running_var_.tensor.mutable_value(), mode);
}

void BatchNormLayer::collect(StateList& state) const {
  state.add(gamma_);
  state.add(beta_);
  state.add(running_mean_);
  state.add(running_var_);
}

void BatchNormLayer::describe(const Shape& input, std::vector<LayerRow>& rows) const {
  rows.push_back({name_, "-", "-", input, 2 * channels()});
}

// ---------------------------------------------------------------------------

std::size_t choose_mid_channels(std::size_t in_ch, std::size_t out_ch, std::size_t spatial_k, std::size_t depth_k) {
  if (in_ch == 0 || out_ch == 0) throw std::invalid_argument("choose_mid_channels: channels must be positive");
  const std::size_t k2 = spatial_k * spatial_k;
  return (depth_k * k2 * in_ch * out_ch) / (k2 * in_ch + depth_k * out_ch);
}

namespace {

ConvSpec spatial_spec(std::size_t in, std::size_t out, std::size_t k, std::size_t stride) {
  return ConvSpec{{1, k, k}, {1, stride, stride}, {0, k / 2, k / 2}, in, out, false};
}

ConvSpec depth_spec(std::size_t in, std::size_t out) { return ConvSpec{{3, 1, 1}, {1, 1, 1}, {1, 0, 0}, in, out, false}; }

std::size_t checked_mid(std::size_t mid) {
  if (mid < 1) throw std::invalid_argument("conv2plus1d: mid channel count must be at least 1");
  return mid;
}

}  // namespace

Conv2Plus1D::Conv2Plus1D(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t mid_ch,
                         std::size_t spatial_k, std::size_t spatial_stride, Initializer& init)
    : spatial_(name + ".spatial", spatial_spec(in_ch, checked_mid(mid_ch), spatial_k, spatial_stride), init),
      mid_bn_(name + ".mid_bn", mid_ch),
      depth_(name + ".depth", depth_spec(mid_ch, out_ch), init) {}

Var Conv2Plus1D::forward(const Var& x, NormMode mode) {
  return depth_.forward(relu(mid_bn_.forward(spatial_.forward(x), mode)));
}

void Conv2Plus1D::collect(StateList& state) const {
  spatial_.collect(state);
  mid_bn_.collect(state);
  depth_.collect(state);
}

void Conv2Plus1D::describe(const Shape& input, std::vector<LayerRow>& rows) const {
  spatial_.describe(input, rows);
  const Shape mid = spatial_.output_shape(input);
  mid_bn_.describe(mid, rows);
  depth_.describe(mid, rows);
}

Var conv2plus1d(const Var& input, std::size_t in_ch, std::size_t out_ch, std::size_t mid_ch, std::uint64_t seed) {
  Initializer init(seed);
  Conv2Plus1D unit("conv2plus1d", in_ch, out_ch, mid_ch, 3, 1, init);
  return unit.forward(input, NormMode::train);
}

// ---------------------------------------------------------------------------

namespace {

std::variant<ConvLayer, Conv2Plus1D> make_unit(const std::string& name, LayerKind kind, std::size_t in_ch,
                                               std::size_t out_ch, std::size_t kernel, std::size_t stride,
                                               Initializer& init) {
  switch (kind) {
    case LayerKind::planar:
      return ConvLayer(name, ConvSpec::planar(in_ch, out_ch, kernel, stride), init);
    case LayerKind::volumetric:
      return ConvLayer(name, ConvSpec::volumetric(in_ch, out_ch, 3, kernel, stride), init);
    case LayerKind::factorized:
      return Conv2Plus1D(name, in_ch, out_ch, choose_mid_channels(in_ch, out_ch), kernel, stride, init);
  }
  throw std::logic_error("unhandled layer kind");
}

template <typename Variant>
Var unit_forward(Variant& unit, const Var& x, NormMode mode) {
  return std::visit(
      [&](auto& u) -> Var {
        if constexpr (std::is_same_v<std::decay_t<decltype(u)>, ConvLayer>) {
          return u.forward(x);
        } else {
          return u.forward(x, mode);
        }
      },
      unit);
}

template <typename Variant>
std::vector<ConvSpec> unit_specs(const Variant& unit) {
  return std::visit(
      [](const auto& u) -> std::vector<ConvSpec> {
        if constexpr (std::is_same_v<std::decay_t<decltype(u)>, ConvLayer>) {
          return {u.spec()};
        } else {
          return u.conv_specs();
        }
      },
      unit);
}

}  // namespace

ConvUnit::ConvUnit(const std::string& name, LayerKind kind, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                   std::size_t stride, Initializer& init)
    : impl_(make_unit(name, kind, in_ch, out_ch, kernel, stride, init)) {}

Var ConvUnit::forward(const Var& x, NormMode mode) { return unit_forward(impl_, x, mode); }

Shape ConvUnit::output_shape(const Shape& input) const {
  return std::visit([&](const auto& u) { return u.output_shape(input); }, impl_);
}

std::vector<ConvSpec> ConvUnit::conv_specs() const { return unit_specs(impl_); }

void ConvUnit::collect(StateList& state) const {
  std::visit([&](const auto& u) { u.collect(state); }, impl_);
}

void ConvUnit::describe(const Shape& input, std::vector<LayerRow>& rows) const {
  std::visit([&](const auto& u) { u.describe(input, rows); }, impl_);
}

// ---------------------------------------------------------------------------

namespace {

std::optional<ConvLayer> make_shortcut(const std::string& name, LayerKind kind, std::size_t in_ch, std::size_t out_ch,
                                       std::size_t stride, Initializer& init) {
  if (in_ch == out_ch && stride == 1) return std::nullopt;
  ConvSpec spec = kind == LayerKind::planar ? ConvSpec::planar(in_ch, out_ch, 1, stride)
                                            : ConvSpec::volumetric(in_ch, out_ch, 1, 1, stride);
  return ConvLayer(name + ".shortcut.conv", spec, init);
}

}  // namespace

BasicBlock::BasicBlock(const std::string& name, LayerKind kind, std::size_t in_ch, std::size_t out_ch,
                       std::size_t stride, Initializer& init)
    : conv1_(name + ".conv1", kind, in_ch, out_ch, 3, stride, init),
      bn1_(name + ".bn1", out_ch),
      conv2_(name + ".conv2", kind, out_ch, out_ch, 3, 1, init),
      bn2_(name + ".bn2", out_ch),
      shortcut_(make_shortcut(name, kind, in_ch, out_ch, stride, init)) {
  if (shortcut_) shortcut_bn_.emplace(name + ".shortcut.bn", out_ch);
}

Var BasicBlock::forward(const Var& x, NormMode mode) {
  Var out = relu(bn1_.forward(conv1_.forward(x, mode), mode));
  out = bn2_.forward(conv2_.forward(out, mode), mode);
  Var identity = shortcut_ ? shortcut_bn_->forward(shortcut_->forward(x), mode) : x;
  return relu(add(out, identity));
}

Shape BasicBlock::output_shape(const Shape& input) const { return conv2_.output_shape(conv1_.output_shape(input)); }

std::vector<ConvSpec> BasicBlock::conv_specs() const {
  auto specs = conv1_.conv_specs();
  for (auto& s : conv2_.conv_specs()) specs.push_back(s);
  if (shortcut_) specs.push_back(shortcut_->spec());
  return specs;
}

void BasicBlock::collect(StateList& state) const {
  conv1_.collect(state);
  bn1_.collect(state);
  conv2_.collect(state);
  bn2_.collect(state);
  if (shortcut_) {
    shortcut_->collect(state);
    shortcut_bn_->collect(state);
  }
}

void BasicBlock::describe(const Shape& input, std::vector<LayerRow>& rows) const {
  conv1_.describe(input, rows);
  const Shape mid = conv1_.output_shape(input);
  bn1_.describe(mid, rows);
  conv2_.describe(mid, rows);
  const Shape out = conv2_.output_shape(mid);
  bn2_.describe(out, rows);
  if (shortcut_) {
    shortcut_->describe(input, rows);
    shortcut_bn_->describe(out, rows);
  }
}

// ---------------------------------------------------------------------------

namespace {

std::variant<ConvLayer, Conv2Plus1D> make_stem_conv(LayerKind kind, std::size_t out_ch, Initializer& init) {
  const std::size_t in_ch = StagePlan::kInputChannels;
  switch (kind) {
    case LayerKind::planar:
      return ConvLayer("stem.conv", ConvSpec::planar(in_ch, out_ch, 7, 2), init);
    case LayerKind::volumetric:
      return ConvLayer("stem.conv", ConvSpec::volumetric(in_ch, out_ch, 3, 7, 2), init);
    case LayerKind::factorized:
      // mid width from the default 3×3×3 budget: choose_mid_channels(1, 32) = 8
      return Conv2Plus1D("stem.conv", in_ch, out_ch, choose_mid_channels(in_ch, out_ch), 7, 2, init);
  }
  throw std::logic_error("unhandled layer kind");
}

Shape pooled_shape(const Shape& s) {
  return {s[0], s[1], s[2], conv_output_extent(s[3], 3, 2, 1), conv_output_extent(s[4], 3, 2, 1)};
}

}  // namespace

Stem::Stem(LayerKind kind, std::size_t out_ch, Initializer& init)
    : conv_(make_stem_conv(kind, out_ch, init)), bn_("stem.bn", out_ch) {}

Var Stem::forward(const Var& x, NormMode mode) {
  return max_pool_xy(relu(bn_.forward(unit_forward(conv_, x, mode), mode)), 3, 2, 1);
}

Shape Stem::output_shape(const Shape& input) const {
  return pooled_shape(std::visit([&](const auto& u) { return u.output_shape(input); }, conv_));
}

std::vector<ConvSpec> Stem::conv_specs() const { return unit_specs(conv_); }

void Stem::collect(StateList& state) const {
  std::visit([&](const auto& u) { u.collect(state); }, conv_);
  bn_.collect(state);
}

void Stem::describe(const Shape& input, std::vector<LayerRow>& rows) const {
  std::visit([&](const auto& u) { u.describe(input, rows); }, conv_);
  const Shape conv_out = std::visit([&](const auto& u) { return u.output_shape(input); }, conv_);
  bn_.describe(conv_out, rows);
  rows.push_back({"stem.pool", "1x3x3", "1x2x2", pooled_shape(conv_out), 0});
}

}  // namespace anivol
