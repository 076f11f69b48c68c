#include "anivol/tensor/sgd.hpp"

#include <stdexcept>
#include <string>

namespace anivol {

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("SGD learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("SGD weight decay must be non-negative");
}

void sgd_step(std::span<Parameter> params, const SgdConfig& config) {
  config.validate();
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) throw std::logic_error("sgd_step: parameter '" + p.name + "' has no gradient");
  }
  for (auto& p : params) {
    Tensor& w = p.tensor.mutable_value();
    const Tensor& g = p.tensor.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= config.learning_rate * (g[i] + config.weight_decay * w[i]);
    }
    p.tensor.zero_grad();
  }
}

}  // namespace anivol
