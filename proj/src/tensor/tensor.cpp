#include "anivol/tensor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace anivol {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one axis");
  for (auto extent : shape) {
    if (extent == 0) throw std::invalid_argument("tensor extents must be positive, got " + to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  values_.assign(numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  check_extents(shape_);
  if (values_.size() != numel(shape_)) {
    throw std::invalid_argument("tensor of shape " + to_string(shape_) + " needs " +
                                std::to_string(numel(shape_)) + " values, got " +
                                std::to_string(values_.size()));
  }
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw std::out_of_range("index rank does not match " + to_string(shape_));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("index out of range for shape " + to_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return values_[offset(index)]; }
double Tensor::at(std::initializer_list<std::size_t> index) const { return values_[offset(index)]; }

double Tensor::item() const {
  if (values_.size() != 1) throw std::logic_error("item() needs a single-element tensor, shape is " + to_string(shape_));
  return values_.front();
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != values_.size()) {
    throw std::invalid_argument("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

void Tensor::fill(double value) { std::fill(values_.begin(), values_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void accumulate(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) {
    throw std::invalid_argument("cannot accumulate " + to_string(src.shape()) + " into " + to_string(dst.shape()));
  }
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

double max_abs_difference(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("shape mismatch in max_abs_difference");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace anivol
