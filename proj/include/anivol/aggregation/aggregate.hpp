#pragma once

#include <cstddef>
#include <string_view>

#include "anivol/encoders/encoder.hpp"
#include "anivol/encoders/layers.hpp"

namespace anivol {

enum class AggregatorKind { avp, mxp, att, bilinear };

/// Config tokens avp|mxp|att|bilinear.
AggregatorKind parse_aggregator(std::string_view token);
std::string_view to_string(AggregatorKind kind);

/// C for avp/mxp/att, C² for bilinear.
std::size_t aggregated_dim(AggregatorKind kind, std::size_t channels);

struct AggregationDiagnostics {
  /// Bilinear rows that were all zero before l2 normalization (returned as zeros).
  std::size_t zero_norm_rows = 0;
};

/// [N,C,D] -> [N,C] or [N,C²].
///
/// avp: mean over d. mxp: max over d, ties to the lowest d. att: softmax over
/// d of the feature itself, per channel, then the weighted sum. bilinear:
/// Σ_d f_d f_dᵀ, signed square root, l2 normalization per row.
Var aggregate(const FeatureMatrix& features, AggregatorKind kind, AggregationDiagnostics* diagnostics = nullptr);

/// Softmax over depth of each (n, c) row of [N,C,D], max-subtracted.
Tensor attention_weights(const Tensor& features);

/// sign(x)·sqrt(|x|), with derivative 0 taken at x == 0.
Var signed_sqrt(const Var& x);

/// Each row of [N,F] scaled to unit l2 norm; zero rows stay zero.
Var l2_normalize_rows(const Var& x, AggregationDiagnostics* diagnostics = nullptr);

/// Σ_d f_d f_dᵀ flattened: [N,C,D] -> [N,C²] (row-major over (i, j)).
Var bilinear_pool(const Var& features);

/// Fully connected map from the aggregated feature to one logit, with bias.
class VolumeHead {
 public:
  VolumeHead(AggregatorKind kind, std::size_t channels, Initializer& init);

  /// [N,F] -> [N,1]; F must equal aggregated_dim(kind, channels).
  Var forward(const Var& aggregated) const;

  AggregatorKind kind() const noexcept { return kind_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }
  void collect(StateList& state) const;

 private:
  AggregatorKind kind_;
  std::size_t input_dim_;
  Parameter weight_;
  Parameter bias_;
};

}  // namespace anivol
