#include "anivol/data/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <spdlog/spdlog.h>
#include <stdexcept>

namespace anivol {

namespace {

constexpr double kStdFloor = 1e-8;

double pixel(const double* plane, std::size_t h, std::size_t w, long y, long x, Boundary boundary) {
  const long hh = static_cast<long>(h), ww = static_cast<long>(w);
  if (boundary == Boundary::zero) {
    if (y < 0 || y >= hh || x < 0 || x >= ww) return 0.0;
  } else {
    y = std::clamp(y, 0L, hh - 1);
    x = std::clamp(x, 0L, ww - 1);
  }
  return plane[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
}

}  // namespace

double sample_bilinear(const double* plane, std::size_t h, std::size_t w, double y, double x, Boundary boundary) {
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  // exact grid hits skip the neighbours, which keeps identity resampling bit-exact
  if (ty == 0.0 && tx == 0.0) return pixel(plane, h, w, y0, x0, boundary);
  const double top = (1.0 - tx) * pixel(plane, h, w, y0, x0, boundary) + tx * pixel(plane, h, w, y0, x0 + 1, boundary);
  const double bottom =
      (1.0 - tx) * pixel(plane, h, w, y0 + 1, x0, boundary) + tx * pixel(plane, h, w, y0 + 1, x0 + 1, boundary);
  return (1.0 - ty) * top + ty * bottom;
}

Volume normalize_intensity(const Volume& volume) {
  volume.validate();
  const double n = static_cast<double>(volume.voxels.size());
  double mean = 0.0;
  for (double v : volume.voxels) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : volume.voxels) var += (v - mean) * (v - mean);
  double std = std::sqrt(var / n);
  if (std < kStdFloor) {
    spdlog::warn("volume {}: intensity std {:.3g} below {:.0e}; normalized to zeros", volume.id, std, kStdFloor);
    std = kStdFloor;
  }
  Volume out = volume;
  for (double& v : out.voxels) v = (v - mean) / std;
  return out;
}

Volume resize_in_plane(const Volume& volume, std::size_t side) {
  volume.validate();
  if (side == 0) throw std::invalid_argument("resize_in_plane: side must be positive");
  Volume out = volume;
  out.height = out.width = side;
  out.spacing_x_mm = volume.spacing_x_mm * static_cast<double>(volume.width) / static_cast<double>(side);
  out.spacing_y_mm = volume.spacing_y_mm * static_cast<double>(volume.height) / static_cast<double>(side);
  out.voxels.assign(volume.depth * side * side, 0.0);
  const double ry = static_cast<double>(volume.height) / static_cast<double>(side);
  const double rx = static_cast<double>(volume.width) / static_cast<double>(side);
  for (std::size_t d = 0; d < volume.depth; ++d) {
    const double* src = volume.voxels.data() + d * volume.plane_size();
    for (std::size_t i = 0; i < side; ++i) {
      const double y = (static_cast<double>(i) + 0.5) * ry - 0.5;
      for (std::size_t j = 0; j < side; ++j) {
        const double x = (static_cast<double>(j) + 0.5) * rx - 0.5;
        out.at(d, i, j) = sample_bilinear(src, volume.height, volume.width, y, x, Boundary::clamp);
      }
    }
  }
  return out;
}

Volume prepare(const Volume& volume, std::size_t side) {
  if (side == 0 || side % 16 != 0) {
    throw std::invalid_argument("preprocess: side " + std::to_string(side) + " is not a positive multiple of 16");
  }
  return resize_in_plane(normalize_intensity(volume), side);
}

Tensor to_tensor(const Volume& volume) {
  volume.validate();
  return Tensor({1, volume.depth, volume.height, volume.width}, volume.voxels);
}

Tensor preprocess(const Volume& volume, std::size_t side) { return to_tensor(prepare(volume, side)); }

Tensor stack_volumes(std::span<const Volume* const> volumes) {
  if (volumes.empty()) throw std::invalid_argument("stack_volumes: no volumes");
  const Volume& first = *volumes.front();
  Tensor out({volumes.size(), 1, first.depth, first.height, first.width});
  const std::size_t stride = first.voxels.size();
  for (std::size_t n = 0; n < volumes.size(); ++n) {
    const Volume& v = *volumes[n];
    if (v.depth != first.depth || v.height != first.height || v.width != first.width) {
      throw std::invalid_argument("stack_volumes: volume " + v.id + " differs in shape from " + first.id);
    }
    std::copy(v.voxels.begin(), v.voxels.end(), out.data() + n * stride);
  }
  return out;
}

}  // namespace anivol
