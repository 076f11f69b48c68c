#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace anivol {

/// How a network layer treats the depth (slice) axis.
enum class LayerKind {
  planar,      // 2D: slices processed independently with shared weights
  volumetric,  // 3D: full 3×k×k kernels
  factorized,  // (2+1)D: 1×k×k spatial conv, BN, ReLU, 3×1×1 depth conv
};

std::string_view to_string(LayerKind kind);

struct StageSpec {
  LayerKind kind = LayerKind::planar;
  std::size_t blocks = 2;
  std::size_t out_channels = 0;
};

/// ResNet-18 topology with widths (32, 64, 128, 256): a stem, four stages of
/// two basic blocks, and a shared 256→1 slice head. Layer 1 is the stem,
/// layers 2–5 are stages 1–4.
struct StagePlan {
  static constexpr std::array<std::size_t, 4> kWidths{32, 64, 128, 256};
  static constexpr std::size_t kInputChannels = 1;
  static constexpr std::size_t kFeatureChannels = 256;
  static constexpr std::size_t kLayers = 5;

  LayerKind stem = LayerKind::planar;
  std::array<StageSpec, 4> stages{};

  /// Kind of layer `index` in 1..5.
  LayerKind layer(std::size_t index) const;
  /// True when layer `index` mixes information across slices.
  bool layer_spans_depth(std::size_t index) const;

  /// Throws std::logic_error if the fixed topology is violated.
  void validate() const;

  static StagePlan uniform(LayerKind stem, LayerKind stages);
};

struct EncoderVariant {
  std::string name;
  StagePlan plan;
};

/// The eleven encoder names in table order.
std::span<const std::string_view> variant_names();

/// Plan for a named variant. f-MCx: layers 1..x-1 volumetric, x..5 planar.
/// f-rMCx: layers 1..x-1 planar, x..5 volumetric. Unknown names throw
/// std::invalid_argument listing the valid ones.
EncoderVariant make_variant(std::string_view name);

}  // namespace anivol
