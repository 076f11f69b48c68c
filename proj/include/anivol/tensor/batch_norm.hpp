#pragma once

#include "anivol/tensor/autograd.hpp"

namespace anivol {

enum class NormMode { train, eval };

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Per-channel normalization of x [N,C,...] over every non-channel axis.
///
/// Train mode normalizes with batch statistics and folds them into the
/// running statistics (unbiased variance); eval mode uses the running
/// statistics. Zero-variance channels are covered by epsilon.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               NormMode mode, const BatchNormOptions& options = {});

}  // namespace anivol
