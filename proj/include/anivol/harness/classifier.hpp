#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "anivol/aggregation/aggregate.hpp"
#include "anivol/data/volume.hpp"
#include "anivol/encoders/encoder.hpp"
#include "anivol/harness/config.hpp"

namespace anivol {

/// Encoder plus the head for one experiment cell. Volumes of different
/// depths go through the encoder in per-depth groups; outputs keep input order.
class Classifier {
 public:
  Classifier(const std::string& arch, ModelMode mode, std::optional<AggregatorKind> aggregator, std::uint64_t seed);

  /// Training rows: one per volume in volume mode, one per representative
  /// slice (labelled with its volume's label) in slice mode.
  struct Rows {
    Var logits;      // [R]
    Var embeddings;  // [R, E]
    std::vector<int> labels;
    std::vector<std::size_t> owner;  // input position of each row
  };

  /// Prepared volumes (H = W = side).
  Rows forward(std::span<const Volume* const> volumes, NormMode mode);

  /// Eval-mode T3 probability per volume, without building a tape. Slice
  /// mode averages the sigmoid over representative slices.
  std::vector<double> probabilities(std::span<const Volume* const> volumes);

  StateList state() const;
  std::size_t parameter_count() const { return state().parameter_count(); }
  std::size_t embedding_dim() const;
  ModelMode mode() const noexcept { return mode_; }

 private:
  ModelMode mode_;
  std::optional<AggregatorKind> aggregator_;
  SliceModel model_;
  std::optional<VolumeHead> volume_head_;
};

}  // namespace anivol
