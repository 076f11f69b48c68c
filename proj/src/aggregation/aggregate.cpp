#include "anivol/aggregation/aggregate.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>

#include "anivol/tensor/ops.hpp"

namespace anivol {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

struct Dims {
  std::size_t n, c, d;
};

Dims feature_dims(const Var& f) {
  const Shape& s = f.shape();
  if (s.size() != 3) throw std::invalid_argument("aggregate: expected features [N,C,D], got " + to_string(s));
  return {s[0], s[1], s[2]};
}

Var average(const Var& f) {
  const auto [n, c, d] = feature_dims(f);
  Tensor out({n, c});
  const double* in = f.value().data();
  for (std::size_t r = 0; r < n * c; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < d; ++k) total += in[r * d + k];
    out[r] = total / static_cast<double>(d);
  }
  return make_op_result(std::move(out), {f}, [f, d](const Tensor& g) {
    Tensor gf(f.shape());
    const double inv = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t k = 0; k < d; ++k) gf[r * d + k] = g[r] * inv;
    f.accumulate_grad(gf);
  });
}

Var maximum(const Var& f) {
  const auto [n, c, d] = feature_dims(f);
  Tensor out({n, c});
  std::vector<std::size_t> argmax(n * c);
  const double* in = f.value().data();
  for (std::size_t r = 0; r < n * c; ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < d; ++k) {
      if (in[r * d + k] > in[r * d + best]) best = k;
    }
    argmax[r] = best;
    out[r] = in[r * d + best];
  }
  if (auto* trace = active_branch_trace()) trace->record(std::span<const std::size_t>(argmax));
  return make_op_result(std::move(out), {f}, [f, d, argmax = std::move(argmax)](const Tensor& g) {
    Tensor gf(f.shape());
    for (std::size_t r = 0; r < g.size(); ++r) gf[r * d + argmax[r]] = g[r];
    f.accumulate_grad(gf);
  });
}

Var attention(const Var& f) {
  const auto [n, c, d] = feature_dims(f);
  Tensor weights = attention_weights(f.value());
  Tensor out({n, c});
  const double* in = f.value().data();
  for (std::size_t r = 0; r < n * c; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < d; ++k) total += weights[r * d + k] * in[r * d + k];
    out[r] = total;
  }
  Tensor pooled = out;
  return make_op_result(std::move(out), {f}, [f, d, weights = std::move(weights), pooled = std::move(pooled)](
                                                 const Tensor& g) {
    // ∂g/∂f_e = a_e (1 + f_e − g)
    Tensor gf(f.shape());
    const double* in = f.value().data();
    for (std::size_t r = 0; r < g.size(); ++r)
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t i = r * d + k;
        gf[i] = g[r] * weights[i] * (1.0 + in[i] - pooled[r]);
      }
    f.accumulate_grad(gf);
  });
}

}  // namespace

AggregatorKind parse_aggregator(std::string_view token) {
  if (token == "avp") return AggregatorKind::avp;
  if (token == "mxp") return AggregatorKind::mxp;
  if (token == "att") return AggregatorKind::att;
  if (token == "bilinear") return AggregatorKind::bilinear;
  throw std::invalid_argument("unknown aggregator '" + std::string(token) + "'; expected avp, mxp, att or bilinear");
}

std::string_view to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::avp:
      return "avp";
    case AggregatorKind::mxp:
      return "mxp";
    case AggregatorKind::att:
      return "att";
    case AggregatorKind::bilinear:
      return "bilinear";
  }
  return "?";
}

std::size_t aggregated_dim(AggregatorKind kind, std::size_t channels) {
  return kind == AggregatorKind::bilinear ? channels * channels : channels;
}

Tensor attention_weights(const Tensor& features) {
  if (features.rank() != 3) throw std::invalid_argument("attention_weights: expected [N,C,D]");
  const std::size_t d = features.shape()[2];
  Tensor w(features.shape());
  for (std::size_t r = 0; r < features.size() / d; ++r) {
    const double* row = features.data() + r * d;
    double peak = row[0];
    for (std::size_t k = 1; k < d; ++k) peak = std::max(peak, row[k]);
    double total = 0.0;
    for (std::size_t k = 0; k < d; ++k) total += (w[r * d + k] = std::exp(row[k] - peak));
    for (std::size_t k = 0; k < d; ++k) w[r * d + k] /= total;
  }
  return w;
}

Var signed_sqrt(const Var& x) {
  Tensor out(x.shape());
  std::vector<std::uint8_t> sign(x.size());
  const double* in = x.value().data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = in[i];
    sign[i] = v > 0.0 ? 2 : v < 0.0 ? 0 : 1;
    out[i] = v > 0.0 ? std::sqrt(v) : v < 0.0 ? -std::sqrt(-v) : 0.0;
  }
  if (auto* trace = active_branch_trace()) trace->record(std::span<const std::uint8_t>(sign));
  Tensor root = out;
  return make_op_result(std::move(out), {x}, [x, root = std::move(root)](const Tensor& g) {
    // d/dx sign(x)√|x| = 1 / (2√|x|)
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double r = std::abs(root[i]);
      gx[i] = r > 0.0 ? g[i] / (2.0 * r) : 0.0;
    }
    x.accumulate_grad(gx);
  });
}

Var l2_normalize_rows(const Var& x, AggregationDiagnostics* diagnostics) {
  if (x.shape().size() != 2) throw std::invalid_argument("l2_normalize_rows: expected [N,F], got " + to_string(x.shape()));
  const std::size_t n = x.shape()[0], f = x.shape()[1];
  Tensor out(x.shape());
  std::vector<double> norms(n);
  const double* in = x.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < f; ++j) sq += in[r * f + j] * in[r * f + j];
    norms[r] = std::sqrt(sq);
    if (norms[r] == 0.0) {
      if (diagnostics) ++diagnostics->zero_norm_rows;
      continue;
    }
    for (std::size_t j = 0; j < f; ++j) out[r * f + j] = in[r * f + j] / norms[r];
  }
  Tensor unit = out;
  return make_op_result(std::move(out), {x}, [x, n, f, norms = std::move(norms), unit = std::move(unit)](
                                                 const Tensor& g) {
    // (g − y (y·g)) / ‖x‖
    Tensor gx(x.shape());
    for (std::size_t r = 0; r < n; ++r) {
      if (norms[r] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < f; ++j) dot += unit[r * f + j] * g[r * f + j];
      for (std::size_t j = 0; j < f; ++j) gx[r * f + j] = (g[r * f + j] - unit[r * f + j] * dot) / norms[r];
    }
    x.accumulate_grad(gx);
  });
}

Var bilinear_pool(const Var& features) {
  const auto [n, c, d] = feature_dims(features);
  Tensor out({n, c * c});
  for (std::size_t s = 0; s < n; ++s) {
    ConstMatrixMap F(features.value().data() + s * c * d, c, d);
    MatrixMap(out.data() + s * c * c, c, c).noalias() = F * F.transpose();
  }
  return make_op_result(std::move(out), {features}, [features, n = n, c = c, d = d](const Tensor& g) {
    // B = F Fᵀ  ⇒  dF = (G + Gᵀ) F
    Tensor gf(features.shape());
    for (std::size_t s = 0; s < n; ++s) {
      ConstMatrixMap G(g.data() + s * c * c, c, c);
      ConstMatrixMap F(features.value().data() + s * c * d, c, d);
      MatrixMap(gf.data() + s * c * d, c, d).noalias() = (G + G.transpose()) * F;
    }
    features.accumulate_grad(gf);
  });
}

Var aggregate(const FeatureMatrix& features, AggregatorKind kind, AggregationDiagnostics* diagnostics) {
  const Var& f = features.values;
  feature_dims(f);
  switch (kind) {
    case AggregatorKind::avp:
      return average(f);
    case AggregatorKind::mxp:
      return maximum(f);
    case AggregatorKind::att:
      return attention(f);
    case AggregatorKind::bilinear:
      return l2_normalize_rows(signed_sqrt(bilinear_pool(f)), diagnostics);
  }
  throw std::logic_error("unhandled aggregator kind");
}

VolumeHead::VolumeHead(AggregatorKind kind, std::size_t channels, Initializer& init)
    : kind_(kind),
      input_dim_(aggregated_dim(kind, channels)),
      weight_(make_parameter("volume_head.weight",
                             init.uniform({1, input_dim_}, 1.0 / std::sqrt(static_cast<double>(input_dim_))))),
      bias_(make_parameter("volume_head.bias",
                           init.uniform({1}, 1.0 / std::sqrt(static_cast<double>(input_dim_))))) {}

Var VolumeHead::forward(const Var& aggregated) const {
  if (aggregated.shape().size() != 2 || aggregated.shape()[1] != input_dim_) {
    throw std::invalid_argument("volume head for " + std::string(to_string(kind_)) + " expects [N," +
                                std::to_string(input_dim_) + "], got " + to_string(aggregated.shape()));
  }
  return fully_connected(aggregated, weight_.tensor, bias_.tensor);
}

void VolumeHead::collect(StateList& state) const {
  state.add(weight_);
  state.add(bias_);
}

}  // namespace anivol
