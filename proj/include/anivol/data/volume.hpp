#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace anivol {

/// One MR volume: D slices of H×W voxels, x fastest, then y, then slice.
struct Volume {
  std::string id;
  std::size_t depth = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> voxels;
  double spacing_x_mm = 0.44;
  double spacing_y_mm = 0.44;
  double thickness_mm = 3.1;
  int label = 0;  // 0 = T2, 1 = T3
  std::vector<std::size_t> representative_slices;

  std::size_t plane_size() const noexcept { return height * width; }
  double& at(std::size_t d, std::size_t y, std::size_t x) { return voxels[(d * height + y) * width + x]; }
  double at(std::size_t d, std::size_t y, std::size_t x) const { return voxels[(d * height + y) * width + x]; }

  /// Throws std::invalid_argument on a voxel count that disagrees with the
  /// dims, a label outside {0,1}, or 0 or more than 3 representative slices,
  /// or one that is >= D.
  void validate() const;
};

/// `<stem>.meta` next to `<stem>.vox`.
std::filesystem::path sidecar_path(const std::filesystem::path& vox);

/// Writes `<path>` (raw little-endian f64) and its JSON sidecar.
void save_volume(const Volume& volume, const std::filesystem::path& vox);
Volume load_volume(const std::filesystem::path& vox);

/// Writes every volume as `<dir>/<id>.vox` plus `<dir>/manifest.txt`, one id per line.
void save_dataset(const std::vector<Volume>& volumes, const std::filesystem::path& dir);
/// Loads the volumes named in `<dir>/manifest.txt`, in manifest order.
std::vector<Volume> load_dataset(const std::filesystem::path& dir);

std::vector<int> labels_of(const std::vector<Volume>& volumes);

}  // namespace anivol
