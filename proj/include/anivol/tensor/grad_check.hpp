#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "anivol/tensor/autograd.hpp"

namespace anivol {

struct GradCheckOptions {
  double step = 1e-4;
  /// 0 checks every coordinate; otherwise this many coordinates are drawn.
  std::size_t max_coordinates = 0;
  /// Sampled coordinates: uniform over all elements, or an input tensor
  /// uniformly first and then an element of it (small tensors such as
  /// norm scales get drawn as often as large conv kernels).
  enum class Sampling { by_element, by_tensor } sampling = Sampling::by_element;
  std::uint64_t seed = 0;
  /// Extra draws allowed to replace coordinates whose perturbation flips a
  /// non-smooth branch.
  std::size_t max_resamples = 64;
  /// Combine central differences at step and step/2 so the O(step²)
  /// truncation terms cancel.
  bool richardson = true;
  /// When positive (and richardson is on), also extrapolate from step/2 and
  /// step/4; a coordinate whose two extrapolants differ by more than this
  /// relative amount has no converged finite difference and is resampled.
  /// The test is blind to the analytic gradient.
  double convergence_tolerance = 0.0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  /// Coordinates rejected because a ±step evaluation took a different branch.
  std::size_t skipped = 0;
  /// Coordinates rejected by the convergence test (subset of skipped).
  std::size_t unresolved = 0;
  // worst coordinate
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// |ad - fd| / max(1e-8, |ad| + |fd|)
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of the scalar `f` with central finite
/// differences, perturbing the leaf tensors in `inputs` in place (values are
/// restored). Throws std::invalid_argument when f is not scalar.
GradCheckReport grad_check(const std::function<Var()>& f, std::span<Var> inputs, const GradCheckOptions& options = {});

}  // namespace anivol
