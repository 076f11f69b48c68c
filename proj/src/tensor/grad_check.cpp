#include "anivol/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace anivol {

namespace {

struct Evaluation {
  double value;
  std::uint64_t digest;
  bool singular;
};

Evaluation evaluate(const std::function<Var()>& f) {
  NoGradGuard no_grad;
  BranchTrace trace;
  BranchTraceScope scope(trace);
  Var out = f();
  return {out.value().item(), trace.digest(), trace.singular()};
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckReport grad_check(const std::function<Var()>& f, std::span<Var> inputs, const GradCheckOptions& options) {
  for (auto& in : inputs) {
    if (!in.is_leaf()) throw std::invalid_argument("grad_check: inputs must be leaf tensors");
    in.zero_grad();
  }

  BranchTrace base_trace;
  Var root;
  {
    BranchTraceScope scope(base_trace);
    root = f();
  }
  if (root.size() != 1) {
    throw std::invalid_argument("grad_check: function must be scalar-valued, got shape " + to_string(root.shape()));
  }
  if (base_trace.singular()) throw std::invalid_argument("grad_check: base point lies on a singular derivative");
  if (root.requires_grad()) root.backward();

  std::vector<Tensor> analytic;
  std::size_t total = 0;
  for (auto& in : inputs) {
    analytic.push_back(in.has_grad() ? in.grad() : Tensor(in.shape()));
    total += in.size();
  }

  auto locate = [&](std::size_t flat) {
    std::size_t which = 0;
    while (flat >= inputs[which].size()) flat -= inputs[which++].size();
    return std::pair{which, flat};
  };

  GradCheckReport report;
  auto check_one = [&](std::size_t which, std::size_t index) -> bool {
    Tensor& value = inputs[which].mutable_value();
    const double original = value[index];
    auto central = [&](double step, double& estimate) {
      value[index] = original + step;
      const Evaluation plus = evaluate(f);
      value[index] = original - step;
      const Evaluation minus = evaluate(f);
      value[index] = original;
      estimate = (plus.value - minus.value) / (2.0 * step);
      return plus.digest == base_trace.digest() && minus.digest == base_trace.digest() && !plus.singular &&
             !minus.singular;
    };
    const bool converge = options.richardson && options.convergence_tolerance > 0.0;
    double coarse = 0.0, fine = 0.0, finest = 0.0;
    bool same_branch = central(options.step, coarse);
    if (same_branch && options.richardson) same_branch = central(options.step / 2.0, fine);
    if (same_branch && converge) same_branch = central(options.step / 4.0, finest);
    if (!same_branch) {
      ++report.skipped;
      return false;
    }
    // Richardson: the h² error terms of the two central differences cancel
    double numeric = options.richardson ? (4.0 * fine - coarse) / 3.0 : coarse;
    if (converge) {
      const double refined = (4.0 * finest - fine) / 3.0;
      if (relative_error(refined, numeric) > options.convergence_tolerance) {
        ++report.skipped;
        ++report.unresolved;
        return false;
      }
      numeric = refined;
    }
    const double ad = analytic[which][index];
    const double err = relative_error(ad, numeric);
    if (err >= report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_input = which;
      report.worst_index = index;
      report.worst_analytic = ad;
      report.worst_numeric = numeric;
    }
    ++report.checked;
    return true;
  };

  if (options.max_coordinates == 0 || options.max_coordinates >= total) {
    for (std::size_t flat = 0; flat < total; ++flat) {
      auto [which, index] = locate(flat);
      check_one(which, index);
    }
  } else {
    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    std::uniform_int_distribution<std::size_t> pick_input(0, inputs.size() - 1);
    std::vector<std::size_t> offsets(inputs.size(), 0);
    for (std::size_t i = 1; i < inputs.size(); ++i) offsets[i] = offsets[i - 1] + inputs[i - 1].size();
    auto draw = [&]() -> std::size_t {
      if (options.sampling == GradCheckOptions::Sampling::by_element) return pick(rng);
      std::size_t which = pick_input(rng);
      while (inputs[which].size() == 0) which = pick_input(rng);
      std::uniform_int_distribution<std::size_t> within(0, inputs[which].size() - 1);
      return offsets[which] + within(rng);
    };
    std::unordered_set<std::size_t> tried;
    std::size_t budget = options.max_coordinates + options.max_resamples;
    while (report.checked < options.max_coordinates && budget > 0 && tried.size() < total) {
      const std::size_t flat = draw();
      if (!tried.insert(flat).second) continue;
      --budget;
      auto [which, index] = locate(flat);
      check_one(which, index);
    }
  }

  for (auto& in : inputs) in.zero_grad();
  return report;
}

}  // namespace anivol
