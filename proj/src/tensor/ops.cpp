#include "anivol/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace anivol {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  accumulate(out, b.value());
  return make_op_result(std::move(out), {a, b}, [a, b](const Tensor& g) mutable {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) b.accumulate_grad(g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op_result(std::move(out), {a, b}, [a, b](const Tensor& g) mutable {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) {
      Tensor neg = g;
      for (auto& v : neg.values()) v = -v;
      b.accumulate_grad(neg);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op_result(std::move(out), {a, b}, [a, b](const Tensor& g) mutable {
    if (a.requires_grad()) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
      a.accumulate_grad(ga);
    }
    if (b.requires_grad()) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
      b.accumulate_grad(gb);
    }
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= factor;
  return make_op_result(std::move(out), {x}, [x, factor](const Tensor& g) mutable {
    Tensor gx = g;
    for (auto& v : gx.values()) v *= factor;
    x.accumulate_grad(gx);
  });
}

Var relu(const Var& x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  std::vector<std::uint8_t> mask(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    mask[i] = in[i] > 0.0;
    out[i] = mask[i] ? in[i] : 0.0;
  }
  if (auto* trace = active_branch_trace()) trace->record(mask);
  return make_op_result(std::move(out), {x}, [x, mask = std::move(mask)](const Tensor& g) mutable {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = mask[i] ? g[i] : 0.0;
    x.accumulate_grad(gx);
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = x.value()[i];
    out[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  Tensor s = out;
  return make_op_result(std::move(out), {x}, [x, s = std::move(s)](const Tensor& g) mutable {
    Tensor gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * s[i] * (1.0 - s[i]);
    x.accumulate_grad(gx);
  });
}

Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  return make_op_result(Tensor::scalar(total), {x}, [x](const Tensor& g) mutable {
    x.accumulate_grad(Tensor(x.shape(), g.item()));
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op_result(std::move(out), {x}, [x](const Tensor& g) mutable {
    x.accumulate_grad(g.reshaped(x.shape()));
  });
}

Var permute(const Var& x, std::span<const std::size_t> axes) {
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (axes.size() != rank) throw std::invalid_argument("permute: axes rank mismatch");
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (axes[i] >= rank || seen[axes[i]]) throw std::invalid_argument("permute: axes are not a permutation");
    seen[axes[i]] = true;
    out_shape[i] = in_shape[axes[i]];
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];

  // source offset of each output element
  const std::size_t total = x.size();
  std::vector<std::size_t> source(total);
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += index[i] * in_strides[axes[i]];
    source[flat] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++index[i] < out_shape[i]) break;
      index[i] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t i = 0; i < total; ++i) out[i] = x.value()[source[i]];
  return make_op_result(std::move(out), {x}, [x, source = std::move(source)](const Tensor& g) mutable {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[source[i]] += g[i];
    x.accumulate_grad(gx);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Shape shape = parts.front().shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape trailing_a(p.shape().begin() + 1, p.shape().end());
    Shape trailing_b(shape.begin() + 1, shape.end());
    if (p.shape().size() != shape.size() || trailing_a != trailing_b) {
      throw std::invalid_argument("concat_rows: incompatible shapes " + to_string(p.shape()) + " and " +
                                  to_string(shape));
    }
    rows += p.shape().front();
  }
  shape.front() = rows;
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.size(), out.data() + offset);
    offset += p.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return make_op_result(std::move(out), inputs, [inputs](const Tensor& g) mutable {
    std::size_t off = 0;
    for (auto& p : inputs) {
      if (p.requires_grad()) {
        Tensor gp(p.shape());
        std::copy(g.data() + off, g.data() + off + gp.size(), gp.data());
        p.accumulate_grad(gp);
      }
      off += p.size();
    }
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
  const Shape& in_shape = x.shape();
  const std::size_t row_size = x.size() / in_shape.front();
  Shape out_shape = in_shape;
  out_shape.front() = rows.size();
  if (rows.empty()) throw std::invalid_argument("gather_rows: empty selection");
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= in_shape.front()) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(x.value().data() + rows[r] * row_size, row_size, out.data() + r * row_size);
  }
  std::vector<std::size_t> picked(rows.begin(), rows.end());
  return make_op_result(std::move(out), {x}, [x, picked = std::move(picked), row_size](const Tensor& g) mutable {
    Tensor gx(x.shape());
    for (std::size_t r = 0; r < picked.size(); ++r) {
      for (std::size_t j = 0; j < row_size; ++j) gx[picked[r] * row_size + j] += g[r * row_size + j];
    }
    x.accumulate_grad(gx);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2 || x.shape()[1] != weight.shape()[1]) {
    throw std::invalid_argument("linear: input " + to_string(x.shape()) + " incompatible with weights " +
                                to_string(weight.shape()));
  }
  const auto rows = static_cast<Eigen::Index>(x.shape()[0]);
  const auto in = static_cast<Eigen::Index>(x.shape()[1]);
  const auto outs = static_cast<Eigen::Index>(weight.shape()[0]);
  if (bias.defined() && bias.shape() != Shape{weight.shape()[0]}) {
    throw std::invalid_argument("linear: bias " + to_string(bias.shape()) + " does not match " +
                                std::to_string(outs) + " outputs");
  }
  Tensor out({x.shape()[0], weight.shape()[0]});
  ConstMatrixMap X(x.value().data(), rows, in);
  ConstMatrixMap W(weight.value().data(), outs, in);
  MatrixMap Y(out.data(), rows, outs);
  Y.noalias() = X * W.transpose();
  if (bias.defined()) {
    for (Eigen::Index o = 0; o < outs; ++o) Y.col(o).array() += bias.value()[o];
  }
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(std::move(out), inputs, [x, weight, bias, rows, in, outs](const Tensor& g) mutable {
    ConstMatrixMap G(g.data(), rows, outs);
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      MatrixMap(gx.data(), rows, in).noalias() = G * ConstMatrixMap(weight.value().data(), outs, in);
      x.accumulate_grad(gx);
    }
    if (weight.requires_grad()) {
      Tensor gw(weight.shape());
      MatrixMap(gw.data(), outs, in).noalias() = G.transpose() * ConstMatrixMap(x.value().data(), rows, in);
      weight.accumulate_grad(gw);
    }
    if (bias.defined() && bias.requires_grad()) {
      Tensor gb(bias.shape());
      for (Eigen::Index o = 0; o < outs; ++o) gb[o] = G.col(o).sum();
      bias.accumulate_grad(gb);
    }
  });
}

Var fully_connected(const Var& x, const Var& weights, const Var& bias) {
  if (weights.shape().size() != 2 || weights.shape()[0] != 1) {
    throw std::invalid_argument("fully_connected: weights must be [1,F], got " + to_string(weights.shape()));
  }
  return linear(x, weights, bias);
}

}  // namespace anivol
