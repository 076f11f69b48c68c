#pragma once

#include <span>

#include "anivol/tensor/parameter.hpp"

namespace anivol {

struct SgdConfig {
  double learning_rate = 0.01;
  double weight_decay = 0.01;

  void validate() const;
};

/// Plain SGD with weight decay: w <- w - lr * (g + weight_decay * w), then
/// the gradient is cleared. Every parameter must carry a gradient.
void sgd_step(std::span<Parameter> params, const SgdConfig& config);

}  // namespace anivol
