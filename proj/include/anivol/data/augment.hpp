#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <json.hpp>
#include <vector>

#include "anivol/data/volume.hpp"

namespace anivol {

/// One augmentation: applied with `probability`, magnitude drawn uniformly
/// from [low, high].
struct OpRange {
  bool enabled = false;
  double probability = 0.5;
  double low = 0.0;
  double high = 0.0;
};

/// In-plane augmentations, applied per volume with identical parameters on
/// every slice, in this order: shift, scale, rotate (one zero-filled affine
/// resample), crop, hflip, brightness, contrast, gaussian_blur.
struct AugmentationPolicy {
  OpRange shift;          // translation as a fraction of the side, per axis
  OpRange scale;          // zoom factor about the center
  OpRange rotate;         // degrees about the center
  OpRange crop;           // kept fraction of each side, resized back
  OpRange hflip;          // magnitude unused
  OpRange brightness;     // additive offset
  OpRange contrast;       // factor about the volume mean
  OpRange gaussian_blur;  // sigma in pixels
  std::uint64_t seed = 0;

  bool empty() const noexcept;
  void validate() const;

  static AugmentationPolicy none(std::uint64_t seed = 0);
  /// All eight ops with moderate ranges.
  static AugmentationPolicy standard(std::uint64_t seed = 0);
};

nlohmann::json to_json(const AugmentationPolicy& policy);
/// Missing ops stay disabled; unknown op names are rejected.
AugmentationPolicy policy_from_json(const nlohmann::json& j);

/// Deterministic in (policy.seed, draw_seed). Shape, label and
/// representative slices are preserved. An empty policy returns the input.
Volume augment(const Volume& volume, const AugmentationPolicy& policy, std::uint64_t draw_seed);

/// The unmodified volume followed by `n_aug` augmented copies; only the
/// original under an empty policy.
std::vector<Volume> tta_copies(const Volume& volume, std::size_t n_aug, const AugmentationPolicy& policy,
                               std::uint64_t seed);

/// Mean of sigmoid(logit(copy)) over tta_copies.
double tta_predict(const std::function<double(const Volume&)>& logit, const Volume& volume, std::size_t n_aug,
                   const AugmentationPolicy& policy, std::uint64_t seed);

}  // namespace anivol
