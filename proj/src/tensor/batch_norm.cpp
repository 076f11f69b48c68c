#include "anivol/tensor/batch_norm.hpp"

#include <cmath>
#include <stdexcept>

namespace anivol {

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               NormMode mode, const BatchNormOptions& options) {
  const Shape& shape = x.shape();
  if (shape.size() < 2) throw std::invalid_argument("batch_norm: input needs a channel axis, got " + to_string(shape));
  const std::size_t n = shape[0];
  const std::size_t channels = shape[1];
  const std::size_t inner = x.size() / (n * channels);
  const Shape channel_shape{channels};
  if (gamma.shape() != channel_shape || beta.shape() != channel_shape) {
    throw std::invalid_argument("batch_norm: gamma/beta must have shape " + to_string(channel_shape) + ", got " +
                                to_string(gamma.shape()) + " and " + to_string(beta.shape()));
  }
  if (running_mean.shape() != channel_shape || running_var.shape() != channel_shape) {
    throw std::invalid_argument("batch_norm: running statistics must have shape " + to_string(channel_shape));
  }

  const double count = static_cast<double>(n * inner);
  const Tensor& in = x.value();
  Tensor normalized(shape);
  Tensor inv_std(channel_shape);
  Tensor out(shape);

  for (std::size_t c = 0; c < channels; ++c) {
    double mu = 0.0;
    double var = 0.0;
    if (mode == NormMode::train) {
      for (std::size_t s = 0; s < n; ++s) {
        const double* src = in.data() + (s * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) mu += src[i];
      }
      mu /= count;
      for (std::size_t s = 0; s < n; ++s) {
        const double* src = in.data() + (s * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) var += (src[i] - mu) * (src[i] - mu);
      }
      var /= count;
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      running_mean[c] = (1.0 - options.momentum) * running_mean[c] + options.momentum * mu;
      running_var[c] = (1.0 - options.momentum) * running_var[c] + options.momentum * unbiased;
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + options.epsilon);
    inv_std[c] = istd;
    const double g = gamma.value()[c];
    const double b = beta.value()[c];
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t base = (s * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double xh = (in[base + i] - mu) * istd;
        normalized[base + i] = xh;
        out[base + i] = g * xh + b;
      }
    }
  }

  return make_op_result(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, mode, n, channels, inner, count, normalized = std::move(normalized),
       inv_std = std::move(inv_std)](const Tensor& grad) mutable {
        Tensor gg(gamma.shape());
        Tensor gb(beta.shape());
        Tensor gx;
        if (x.requires_grad()) gx = Tensor(x.shape());
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g += grad[base + i];
              sum_gx += grad[base + i] * normalized[base + i];
            }
          }
          gg[c] = sum_gx;
          gb[c] = sum_g;
          if (!x.requires_grad()) continue;
          const double scale = gamma.value()[c] * inv_std[c];
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              if (mode == NormMode::train) {
                gx[base + i] = scale * (grad[base + i] - sum_g / count - normalized[base + i] * sum_gx / count);
              } else {
                gx[base + i] = scale * grad[base + i];
              }
            }
          }
        }
        if (gamma.requires_grad()) gamma.accumulate_grad(gg);
        if (beta.requires_grad()) beta.accumulate_grad(gb);
        if (x.requires_grad()) x.accumulate_grad(gx);
      });
}

}  // namespace anivol
