#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "anivol/tensor/autograd.hpp"

namespace anivol {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);

Var relu(const Var& x);
Var sigmoid(const Var& x);

/// Sum of all elements, shape [1].
Var sum(const Var& x);
Var mean(const Var& x);

Var reshape(const Var& x, Shape shape);

/// Axis permutation: output axis i is input axis `axes[i]`.
Var permute(const Var& x, std::span<const std::size_t> axes);

/// Concatenation along axis 0; trailing extents must agree.
Var concat_rows(std::span<const Var> parts);

/// Rows of a tensor (axis 0) selected by index, repeats allowed.
Var gather_rows(const Var& x, std::span<const std::size_t> rows);

/// Affine map y = x·Wᵀ + b for x [N,F], W [O,F], b [O]. `bias` may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Single-logit fully connected layer: x [N,F], weights [1,F], bias [1] -> [N,1].
Var fully_connected(const Var& x, const Var& weights, const Var& bias);

}  // namespace anivol
