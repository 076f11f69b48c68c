#include "anivol/tensor/parameter.hpp"

#include <algorithm>
#include <stdexcept>

namespace anivol {

Parameter make_parameter(std::string name, Tensor init) {
  return Parameter{std::move(name), Var(std::move(init), true)};
}

void StateList::claim(const std::string& name) {
  if (name.empty()) throw std::invalid_argument("state entries need a name");
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw std::invalid_argument("duplicate state name '" + name + "'");
  }
  names_.push_back(name);
}

void StateList::add(Parameter p) {
  claim(p.name);
  parameters_.push_back(std::move(p));
}

void StateList::add(Buffer b) {
  claim(b.name);
  buffers_.push_back(std::move(b));
}

void StateList::append(const StateList& other) {
  for (const auto& p : other.parameters_) add(p);
  for (const auto& b : other.buffers_) add(b);
}

std::size_t StateList::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters_) total += p.tensor.size();
  return total;
}

void StateList::zero_grad() {
  for (auto& p : parameters_) p.tensor.zero_grad();
}

}  // namespace anivol
