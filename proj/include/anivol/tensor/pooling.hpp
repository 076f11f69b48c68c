#pragma once

#include <cstddef>

#include "anivol/tensor/autograd.hpp"

namespace anivol {

/// In-plane max pooling of every (H,W) plane of [N,C,H,W] or [N,C,D,H,W].
/// Padded positions never win; ties go to the first position in scan order.
Var max_pool_xy(const Var& x, std::size_t kernel = 3, std::size_t stride = 2, std::size_t padding = 1);

/// Mean over the two trailing spatial axes: [N,C,D,H,W] -> [N,C,D], [N,C,H,W] -> [N,C].
Var global_avg_pool_xy(const Var& x);

}  // namespace anivol
