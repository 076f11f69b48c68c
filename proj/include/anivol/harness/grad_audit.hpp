#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "anivol/aggregation/aggregate.hpp"
#include "anivol/harness/config.hpp"
#include "anivol/objectives/losses.hpp"
#include "anivol/tensor/grad_check.hpp"

namespace anivol {

/// Relative-error bound for every op and model audit.
inline constexpr double kGradTolerance = 1e-5;

/// One end-to-end model: encoder, aggregation, volume head and loss recipe.
struct GradCase {
  std::string arch;
  AggregatorKind aggregator = AggregatorKind::avp;
  LossRecipe recipe = LossRecipe::focal;

  std::string label() const;
};

/// All 11 variants × 4 aggregators × 3 recipes.
std::vector<GradCase> all_grad_cases();

struct GradAuditOptions {
  std::size_t batch = 4;  // half T2, half T3
  std::size_t slices = 4;
  std::size_t side = 32;
  GradCheckOptions check = default_check();

  /// One coordinate per seed, tensor drawn first; extrapolants must agree to
  /// 1e-6 before a coordinate counts.
  static GradCheckOptions default_check() {
    GradCheckOptions c;
    c.step = 1e-4;
    c.max_coordinates = 1;
    c.sampling = GradCheckOptions::Sampling::by_tensor;
    c.convergence_tolerance = 1e-6;
    return c;
  }
};

struct GradAuditResult {
  GradCase grad_case;
  std::uint64_t seed = 0;
  GradCheckReport report;
  std::string worst_parameter;
};

struct OpAuditResult {
  std::string op;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

/// Names of the ops covered by audit_ops.
std::vector<std::string> audited_ops();

/// Every coordinate of every input of `op` at a small random shape, step 1e-4.
OpAuditResult audit_op(const std::string& op, std::uint64_t seed);

/// Random toy volumes and a freshly initialized model for `seed`; checks the
/// gradient of the joint loss with respect to sampled parameter coordinates.
GradAuditResult audit_gradients(const GradCase& grad_case, std::uint64_t seed, const GradAuditOptions& options);

}  // namespace anivol
