#include "anivol/tensor/pooling.hpp"

#include <limits>
#include <stdexcept>

#include "anivol/tensor/conv.hpp"

namespace anivol {

Var max_pool_xy(const Var& x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  const Shape& s = x.shape();
  if (s.size() != 4 && s.size() != 5) throw std::invalid_argument("max_pool_xy: expected rank 4 or 5, got " + to_string(s));
  const std::size_t h = s[s.size() - 2];
  const std::size_t w = s[s.size() - 1];
  const std::size_t planes = x.size() / (h * w);
  const std::size_t oh = conv_output_extent(h, kernel, stride, padding);
  const std::size_t ow = conv_output_extent(w, kernel, stride, padding);
  Shape out_shape = s;
  out_shape[s.size() - 2] = oh;
  out_shape[s.size() - 1] = ow;

  Tensor out(out_shape);
  std::vector<std::size_t> argmax(out.size());
  const double* in = x.value().data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* plane = in + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_at = 0;
        for (std::size_t a = 0; a < kernel; ++a) {
          const long iy = static_cast<long>(y * stride + a) - static_cast<long>(padding);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t b = 0; b < kernel; ++b) {
            const long ix = static_cast<long>(xo * stride + b) - static_cast<long>(padding);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t at = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (plane[at] > best) {
              best = plane[at];
              best_at = at;
            }
          }
        }
        const std::size_t o = (p * oh + y) * ow + xo;
        out[o] = best;
        argmax[o] = p * h * w + best_at;
      }
    }
  }
  if (auto* trace = active_branch_trace()) trace->record(std::span<const std::size_t>(argmax));
  return make_op_result(std::move(out), {x}, [x, argmax = std::move(argmax)](const Tensor& g) mutable {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    x.accumulate_grad(gx);
  });
}

Var global_avg_pool_xy(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 && s.size() != 5) {
    throw std::invalid_argument("global_avg_pool_xy: expected rank 4 or 5, got " + to_string(s));
  }
  const std::size_t area = s[s.size() - 2] * s[s.size() - 1];
  Shape out_shape(s.begin(), s.end() - 2);
  Tensor out(out_shape);
  const double* in = x.value().data();
  for (std::size_t p = 0; p < out.size(); ++p) {
    double total = 0.0;
    for (std::size_t i = 0; i < area; ++i) total += in[p * area + i];
    out[p] = total / static_cast<double>(area);
  }
  return make_op_result(std::move(out), {x}, [x, area](const Tensor& g) mutable {
    Tensor gx(x.shape());
    const double inv = 1.0 / static_cast<double>(area);
    for (std::size_t p = 0; p < g.size(); ++p) {
      for (std::size_t i = 0; i < area; ++i) gx[p * area + i] = g[p] * inv;
    }
    x.accumulate_grad(gx);
  });
}

}  // namespace anivol
