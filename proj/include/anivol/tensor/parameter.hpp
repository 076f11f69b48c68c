#pragma once

#include <span>
#include <string>
#include <vector>

#include "anivol/tensor/autograd.hpp"

namespace anivol {

/// A learnable tensor with a hierarchical name such as "stage2.block0.conv1.weight".
struct Parameter {
  std::string name;
  Var tensor;
};

Parameter make_parameter(std::string name, Tensor init);

/// Non-learnable state that still belongs in a checkpoint (BN running statistics).
struct Buffer {
  std::string name;
  Var tensor;
};

/// Ordered registry of a model's parameters and buffers; names are unique
/// across both.
class StateList {
 public:
  void add(Parameter p);
  void add(Buffer b);
  void append(const StateList& other);

  std::span<const Parameter> parameters() const noexcept { return parameters_; }
  std::span<Parameter> parameters() noexcept { return parameters_; }
  std::span<const Buffer> buffers() const noexcept { return buffers_; }
  std::span<Buffer> buffers() noexcept { return buffers_; }

  /// Number of learnable scalars; buffers excluded.
  std::size_t parameter_count() const;

  void zero_grad();

 private:
  void claim(const std::string& name);

  std::vector<Parameter> parameters_;
  std::vector<Buffer> buffers_;
  std::vector<std::string> names_;
};

}  // namespace anivol
