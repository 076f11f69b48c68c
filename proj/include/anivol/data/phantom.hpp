#pragma once

#include <cstddef>
#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "anivol/data/volume.hpp"

namespace anivol {

struct PhantomConfig {
  std::size_t n = 200;
  double class_balance = 0.5;  // fraction labelled T3
  double difficulty = 0.2;     // in [0,1]
  std::uint64_t seed = 7;
  std::size_t side = 64;
  std::size_t min_depth = 8;
  std::size_t max_depth = 16;

  void validate() const;
};

nlohmann::json to_json(const PhantomConfig& config);
PhantomConfig phantom_config_from_json(const nlohmann::json& j);

/// Generator geometry for one volume, in in-plane pixels.
struct PhantomTruth {
  std::string id;
  int label = 0;
  double wall_inner = 0.0;  // lumen radius
  double wall_outer = 0.0;
  /// Radial reach of the tumor past the outer wall boundary at its widest
  /// slice; negative when it stays inside the wall.
  double penetration = 0.0;
  /// |penetration| is at least this; shrinks linearly to 0 as difficulty -> 1.
  double margin = 0.0;
  std::size_t center_slice = 0;
};

struct PhantomDataset {
  std::vector<Volume> volumes;
  std::vector<PhantomTruth> truths;
};

/// Tubular wall annulus around a dark lumen in bright fat, plus an ellipsoidal
/// tumor anchored in the wall. Label 1 iff the tumor reaches past the wall.
/// Noise and a smooth multiplicative bias field grow with difficulty. Exactly
/// round(n·class_balance) volumes are T3. Identical configs give identical
/// volumes.
PhantomDataset generate_phantom_dataset(const PhantomConfig& config);

/// Hand-crafted radial features of a prepared (normalized) volume. Per
/// representative slice the tube is located as the dark disk (pixels below
/// the midpoint of the 5th and 95th intensity percentiles): its centroid and
/// equivalent radius r. For rings at 0.5r … 1.5r, the minimum and maximum
/// over angle of the ring intensity, averaged over representative slices.
std::vector<double> phantom_radial_features(const Volume& prepared);

}  // namespace anivol
