#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "anivol/tensor/autograd.hpp"

namespace anivol {

/// Geometry of one convolution. Axes are (h, w) for 2D and (d, h, w) for 3D.
struct ConvSpec {
  std::vector<std::size_t> kernel;
  std::vector<std::size_t> stride;
  std::vector<std::size_t> padding;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool bias = false;

  /// k×k kernel, "same" padding, spatial stride `stride`.
  static ConvSpec planar(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1);
  /// kd×k×k kernel, "same" padding, depth stride 1, spatial stride `stride`.
  static ConvSpec volumetric(std::size_t in, std::size_t out, std::size_t kd, std::size_t k,
                             std::size_t stride = 1);

  std::size_t axes() const noexcept { return kernel.size(); }
  Shape weight_shape() const;
  std::size_t parameter_count() const;
  std::string kernel_string() const;
  std::string stride_string() const;

  /// Throws std::invalid_argument on inconsistent fields.
  void validate() const;
};

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding);

/// Cross-correlation with a 2-axis kernel. Input is [N,C,H,W], or
/// [N,C,D,H,W] in which case every depth slice is convolved independently
/// with the shared weights [C',C,kh,kw].
Var conv2d(const Var& input, const ConvSpec& spec, const Var& weights, const Var& bias = {});

/// Cross-correlation with a 3-axis kernel over [N,C,D,H,W]; weights [C',C,kd,kh,kw].
Var conv3d(const Var& input, const ConvSpec& spec, const Var& weights, const Var& bias = {});

}  // namespace anivol
