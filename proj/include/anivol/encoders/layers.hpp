#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "anivol/encoders/stage_plan.hpp"
#include "anivol/tensor/batch_norm.hpp"
#include "anivol/tensor/conv.hpp"
#include "anivol/tensor/parameter.hpp"

namespace anivol {

/// Seeded weight initialization: He-normal (fan-in) for convolutions,
/// uniform ±1/√F for fully connected layers.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor he_normal(const Shape& shape, std::size_t fan_in);
  Tensor uniform(const Shape& shape, double bound);

 private:
  std::mt19937_64 rng_;
};

/// One row of a per-layer architecture table.
struct LayerRow {
  std::string name;
  std::string kernel;
  std::string stride;
  Shape output;
  std::size_t params = 0;
};

class ConvLayer {
 public:
  ConvLayer(std::string name, ConvSpec spec, Initializer& init);

  /// conv2d for 2-axis specs (slice-wise on 5D input), conv3d for 3-axis specs.
  Var forward(const Var& x) const;
  Shape output_shape(const Shape& input) const;

  const ConvSpec& spec() const noexcept { return spec_; }
  const Parameter& weight() const noexcept { return weight_; }
  Parameter& weight() noexcept { return weight_; }
  void collect(StateList& state) const { state.add(weight_); }
  void describe(const Shape& input, std::vector<LayerRow>& rows) const;

 private:
  std::string name_;
  ConvSpec spec_;
  Parameter weight_;
};

class BatchNormLayer {
 public:
  BatchNormLayer(std::string name, std::size_t channels);

  Var forward(const Var& x, NormMode mode);

  std::size_t channels() const { return gamma_.tensor.size(); }
  Parameter& gamma() noexcept { return gamma_; }
  Parameter& beta() noexcept { return beta_; }
  Buffer& running_mean() noexcept { return running_mean_; }
  Buffer& running_var() noexcept { return running_var_; }
  void collect(StateList& state) const;
  void describe(const Shape& input, std::vector<LayerRow>& rows) const;

 private:
  std::string name_;
  Parameter gamma_;
  Parameter beta_;
  Buffer running_mean_;
  Buffer running_var_;
};

/// floor(dk·sk²·in·out / (sk²·in + dk·out)): the mid width that keeps a
/// factorized (2+1)D pair close to the parameter budget of the full kernel.
std::size_t choose_mid_channels(std::size_t in_ch, std::size_t out_ch, std::size_t spatial_k = 3,
                                std::size_t depth_k = 3);

/// 1×k×k spatial conv to `mid` channels, BN, ReLU, then 3×1×1 depth conv.
/// The trailing BN belongs to the enclosing block. Depth stride is 1.
class Conv2Plus1D {
 public:
  Conv2Plus1D(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t mid_ch,
              std::size_t spatial_k, std::size_t spatial_stride, Initializer& init);

  Var forward(const Var& x, NormMode mode);
  Shape output_shape(const Shape& input) const { return depth_.output_shape(spatial_.output_shape(input)); }

  ConvLayer& spatial() noexcept { return spatial_; }
  BatchNormLayer& mid_norm() noexcept { return mid_bn_; }
  ConvLayer& depth() noexcept { return depth_; }
  std::vector<ConvSpec> conv_specs() const { return {spatial_.spec(), depth_.spec()}; }
  void collect(StateList& state) const;
  void describe(const Shape& input, std::vector<LayerRow>& rows) const;

 private:
  ConvLayer spatial_;
  BatchNormLayer mid_bn_;
  ConvLayer depth_;
};

/// conv2plus1d as a free op: builds a fresh factorized unit for the given
/// widths and applies it (weights He-initialized from `seed`).
Var conv2plus1d(const Var& input, std::size_t in_ch, std::size_t out_ch, std::size_t mid_ch, std::uint64_t seed = 0);

/// A stage convolution in one of the three layer kinds.
class ConvUnit {
 public:
  ConvUnit(const std::string& name, LayerKind kind, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
           std::size_t stride, Initializer& init);

  Var forward(const Var& x, NormMode mode);
  Shape output_shape(const Shape& input) const;
  std::vector<ConvSpec> conv_specs() const;
  void collect(StateList& state) const;
  void describe(const Shape& input, std::vector<LayerRow>& rows) const;

 private:
  std::variant<ConvLayer, Conv2Plus1D> impl_;
};

/// conv-BN-ReLU-conv-BN plus identity or projection (1×1 conv + BN) shortcut, then ReLU.
class BasicBlock {
 public:
  BasicBlock(const std::string& name, LayerKind kind, std::size_t in_ch, std::size_t out_ch, std::size_t stride,
             Initializer& init);

  Var forward(const Var& x, NormMode mode);
  Shape output_shape(const Shape& input) const;
  std::vector<ConvSpec> conv_specs() const;
  void collect(StateList& state) const;
  void describe(const Shape& input, std::vector<LayerRow>& rows) const;

 private:
  ConvUnit conv1_;
  BatchNormLayer bn1_;
  ConvUnit conv2_;
  BatchNormLayer bn2_;
  std::optional<ConvLayer> shortcut_;
  std::optional<BatchNormLayer> shortcut_bn_;
};

/// 7×7 stride-2 conv (2D), 3×7×7 conv (3D) or factorized 1×7×7 + 3×1×1,
/// followed by BN, ReLU and an in-plane 3×3 stride-2 max pool.
class Stem {
 public:
  Stem(LayerKind kind, std::size_t out_ch, Initializer& init);

  Var forward(const Var& x, NormMode mode);
  Shape output_shape(const Shape& input) const;
  std::vector<ConvSpec> conv_specs() const;
  void collect(StateList& state) const;
  void describe(const Shape& input, std::vector<LayerRow>& rows) const;

 private:
  std::variant<ConvLayer, Conv2Plus1D> conv_;
  BatchNormLayer bn_;
};

}  // namespace anivol
