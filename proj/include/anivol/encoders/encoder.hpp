#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "anivol/encoders/layers.hpp"
#include "anivol/encoders/stage_plan.hpp"

namespace anivol {

/// Per-slice features [N, 256, D]: column d is the feature of slice d.
struct FeatureMatrix {
  Var values;

  std::size_t batch() const { return values.shape()[0]; }
  std::size_t channels() const { return values.shape()[1]; }
  std::size_t slice_count() const { return values.shape()[2]; }
};

/// Stem plus four stages of two basic blocks, ending in in-plane global
/// average pooling. Depth is never strided, so D is preserved end to end.
class Encoder {
 public:
  Encoder(EncoderVariant variant, std::uint64_t seed);

  /// volume [N,1,D,H,W] with H and W divisible by 16 and D >= 1.
  FeatureMatrix encode(const Var& volume, NormMode mode);

  const EncoderVariant& variant() const noexcept { return variant_; }
  StateList state() const;
  std::size_t parameter_count() const { return state().parameter_count(); }
  /// Every convolution in forward order.
  std::vector<ConvSpec> conv_specs() const;
  /// Activation shape after the stem and after each stage, for input `input`.
  std::vector<Shape> stage_shapes(const Shape& input) const;
  void describe(const Shape& input, std::vector<LayerRow>& rows) const;

 private:
  Encoder(EncoderVariant variant, Initializer init);

  EncoderVariant variant_;
  Stem stem_;
  std::vector<BasicBlock> blocks_;
};

/// Throws std::invalid_argument unless `shape` is [N,1,D,H,W] with H, W
/// multiples of 16; the message names the padding needed.
void validate_volume_shape(const Shape& shape);

/// The shared 256 -> 1 fully connected layer applied to every slice column.
class SliceHead {
 public:
  SliceHead(std::size_t features, Initializer& init);

  /// [N,C,D] -> [N,D] logits.
  Var forward(const FeatureMatrix& features) const;

  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }
  void collect(StateList& state) const;
  void describe(const Shape& features, std::vector<LayerRow>& rows) const;

 private:
  Parameter weight_;
  Parameter bias_;
};

/// Encoder plus shared slice head: the unit whose size is tabulated per variant.
struct SliceModel {
  Encoder encoder;
  SliceHead head;

  StateList state() const;
};

/// Fully initialized encoder and slice head for one of the eleven names.
SliceModel build_variant(std::string_view name, std::uint64_t seed = 0);

/// Learnable scalars of a built model (BN running statistics excluded).
std::size_t count_params(const SliceModel& model);

/// Closed-form count from the plan alone, without building weights.
std::size_t count_params(const StagePlan& plan);

/// Per-layer table (name, kernel, stride, output shape, params) for an input
/// of D slices at S×S, with a final total row.
std::string describe_table(const SliceModel& model, std::size_t slices, std::size_t side);

}  // namespace anivol
