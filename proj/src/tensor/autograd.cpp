#include "anivol/tensor/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace anivol {

namespace {

thread_local bool g_grad_enabled = true;
thread_local BranchTrace* g_trace = nullptr;

}  // namespace

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw std::logic_error("use of an undefined Var");
  return node_->value;
}

Tensor& Var::mutable_value() {
  if (!node_) throw std::logic_error("use of an undefined Var");
  if (node_->backward) throw std::logic_error("only leaf Vars may be mutated in place");
  return node_->value;
}

const Tensor& Var::grad() const {
  if (!has_grad()) throw std::logic_error("Var has no gradient");
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

void Var::accumulate_grad(const Tensor& g) const {
  if (!node_) throw std::logic_error("use of an undefined Var");
  if (node_->grad.empty()) {
    if (g.shape() != node_->value.shape()) {
      throw std::invalid_argument("gradient shape " + to_string(g.shape()) + " does not match value shape " +
                                  to_string(node_->value.shape()));
    }
    node_->grad = g;
  } else {
    accumulate(node_->grad, g);
  }
}

Var Var::detach() const { return Var(value(), false); }

void Var::backward() const {
  if (value().size() != 1) {
    throw std::logic_error("backward() without a seed needs a single-element output, shape is " +
                           to_string(value().shape()));
  }
  backward(Tensor(value().shape(), 1.0));
}

void Var::backward(const Tensor& seed) const {
  if (!node_) throw std::logic_error("use of an undefined Var");
  if (!node_->requires_grad) throw std::logic_error("backward() on a Var that does not require grad");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Var(*this).accumulate_grad(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(node->grad);
    // Interior gradients are not needed once propagated.
    node->grad = Tensor();
  }
}

Var make_op_result(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  Var out(std::move(value), needs_grad);
  if (needs_grad) {
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void BranchTrace::mix(const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    hash_ ^= p[i];
    hash_ *= 1099511628211ull;
  }
}

void BranchTrace::record(std::span<const std::uint8_t> decisions) { mix(decisions.data(), decisions.size()); }

void BranchTrace::record(std::span<const std::size_t> selections) {
  mix(selections.data(), selections.size_bytes());
}

void BranchTrace::record(std::uint64_t value) { mix(&value, sizeof(value)); }

BranchTraceScope::BranchTraceScope(BranchTrace& trace) : previous_(g_trace) { g_trace = &trace; }
BranchTraceScope::~BranchTraceScope() { g_trace = previous_; }

BranchTrace* active_branch_trace() noexcept { return g_trace; }

}  // namespace anivol
