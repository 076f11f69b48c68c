#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "anivol/tensor/tensor.hpp"

namespace anivol {

/// Receives the gradient flowing into an op's output and accumulates
/// gradients into the op's inputs.
using BackwardFn = std::function<void(const Tensor& grad_output)>;

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;  // empty for leaves
};

}  // namespace detail

/// Handle to a tensor that participates in reverse-mode differentiation.
///
/// Copies share the underlying node, so a Parameter stored in two places is
/// one parameter. Values produced by ops are immutable; only leaves may be
/// mutated in place (optimizer updates, checkpoint loads).
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const;
  Tensor& mutable_value();
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool is_leaf() const noexcept { return node_ && !node_->backward; }

  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const;
  void zero_grad();
  void accumulate_grad(const Tensor& g) const;

  /// Back-propagates from a single-element output (seed 1).
  void backward() const;
  void backward(const Tensor& seed) const;

  /// Same value, cut from the tape.
  Var detach() const;

  bool same_node(const Var& other) const noexcept { return node_ == other.node_; }

 private:
  friend Var make_op_result(Tensor, std::vector<Var>, BackwardFn);
  std::shared_ptr<detail::Node> node_;
};

/// Wraps the result of a differentiable op. When gradients are disabled or no
/// input requires them the result is a plain leaf and `backward` is dropped.
Var make_op_result(Tensor value, std::vector<Var> inputs, BackwardFn backward);

bool grad_enabled() noexcept;

/// Disables tape construction for its lifetime (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Records the discrete decisions taken by non-smooth ops (ReLU masks,
/// max/argmin selections, clamps) so two evaluations can be compared for
/// having taken the same branch everywhere.
class BranchTrace {
 public:
  void record(std::span<const std::uint8_t> decisions);
  void record(std::span<const std::size_t> selections);
  void record(std::uint64_t value);

  /// Ops call this when an input sits where the derivative is singular.
  void mark_singular() noexcept { singular_ = true; }

  std::uint64_t digest() const noexcept { return hash_; }
  bool singular() const noexcept { return singular_; }

 private:
  void mix(const void* data, std::size_t bytes);

  std::uint64_t hash_ = 14695981039346656037ull;
  bool singular_ = false;
};

/// Installs a BranchTrace on the current thread for its lifetime.
class BranchTraceScope {
 public:
  explicit BranchTraceScope(BranchTrace& trace);
  ~BranchTraceScope();
  BranchTraceScope(const BranchTraceScope&) = delete;
  BranchTraceScope& operator=(const BranchTraceScope&) = delete;

 private:
  BranchTrace* previous_;
};

/// The trace installed on this thread, or nullptr.
BranchTrace* active_branch_trace() noexcept;

}  // namespace anivol
