#pragma once

#include <cstddef>
#include <span>

#include "anivol/data/volume.hpp"
#include "anivol/tensor/tensor.hpp"

namespace anivol {

enum class Boundary {
  clamp,  // nearest edge pixel
  zero,   // 0 outside the field of view
};

/// Bilinear sample of a row-major h×w plane at continuous pixel-center
/// coordinates (pixel (i,j) sits at y=i, x=j).
double sample_bilinear(const double* plane, std::size_t h, std::size_t w, double y, double x, Boundary boundary);

/// Mean 0, std 1 over all voxels; the std is floored at 1e-8, so a constant
/// volume maps to zeros (with a logged warning).
Volume normalize_intensity(const Volume& volume);

/// Bilinear in-plane resize to side×side with half-pixel centers and edge
/// clamping; depth and labels untouched, pixel spacing rescaled.
Volume resize_in_plane(const Volume& volume, std::size_t side);

/// normalize_intensity then resize_in_plane. `side` must be a multiple of 16.
Volume prepare(const Volume& volume, std::size_t side);

/// [1, D, H, W] copy of the voxels.
Tensor to_tensor(const Volume& volume);

/// to_tensor(prepare(volume, side)): [1, D, side, side].
Tensor preprocess(const Volume& volume, std::size_t side);

/// [N, 1, D, H, W]; all volumes must share D, H and W.
Tensor stack_volumes(std::span<const Volume* const> volumes);

}  // namespace anivol
