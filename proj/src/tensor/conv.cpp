#include "anivol/tensor/conv.hpp"

#include <Eigen/Core>
#include <sstream>
#include <stdexcept>

namespace anivol {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;

struct Geometry {
  std::size_t n, c, d, h, w;
  std::size_t co;
  std::size_t kd, kh, kw;
  std::size_t sd, sh, sw;
  std::size_t pd, ph, pw;
  std::size_t od, oh, ow;

  std::size_t patch() const { return c * kd * kh * kw; }
  std::size_t in_volume() const { return d * h * w; }
  std::size_t out_plane() const { return oh * ow; }
  std::size_t out_volume() const { return od * oh * ow; }
  bool slicewise() const { return kd == 1 && sd == 1 && pd == 0; }
};

std::string join(const std::vector<std::size_t>& v, char sep) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << sep;
    os << v[i];
  }
  return os.str();
}

// Columns for the output plane of one depth slice: rows (c, kh, kw), cols (oh, ow).
void im2col_slice(const double* sample, const Geometry& g, std::size_t depth, double* col) {
  const std::size_t cols = g.out_plane();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const double* plane = sample + (ci * g.d + depth) * g.h * g.w;
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        double* row = col + ((ci * g.kh + a) * g.kw + b) * cols;
        for (std::size_t y = 0; y < g.oh; ++y) {
          const long iy = static_cast<long>(y * g.sh + a) - static_cast<long>(g.ph);
          double* dst = row + y * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (std::size_t x = 0; x < g.ow; ++x) {
            const long ix = static_cast<long>(x * g.sw + b) - static_cast<long>(g.pw);
            dst[x] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

// Columns for a whole sample: rows (c, kd, kh, kw), cols (od, oh, ow).
void im2col_volume(const double* sample, const Geometry& g, double* col) {
  const std::size_t cols = g.out_volume();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t t = 0; t < g.kd; ++t) {
      for (std::size_t a = 0; a < g.kh; ++a) {
        for (std::size_t b = 0; b < g.kw; ++b) {
          double* row = col + (((ci * g.kd + t) * g.kh + a) * g.kw + b) * cols;
          for (std::size_t z = 0; z < g.od; ++z) {
            const long iz = static_cast<long>(z * g.sd + t) - static_cast<long>(g.pd);
            double* slab = row + z * g.out_plane();
            if (iz < 0 || iz >= static_cast<long>(g.d)) {
              std::fill(slab, slab + g.out_plane(), 0.0);
              continue;
            }
            const double* plane = sample + (ci * g.d + static_cast<std::size_t>(iz)) * g.h * g.w;
            for (std::size_t y = 0; y < g.oh; ++y) {
              const long iy = static_cast<long>(y * g.sh + a) - static_cast<long>(g.ph);
              double* dst = slab + y * g.ow;
              if (iy < 0 || iy >= static_cast<long>(g.h)) {
                std::fill(dst, dst + g.ow, 0.0);
                continue;
              }
              const double* src = plane + static_cast<std::size_t>(iy) * g.w;
              for (std::size_t x = 0; x < g.ow; ++x) {
                const long ix = static_cast<long>(x * g.sw + b) - static_cast<long>(g.pw);
                dst[x] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
              }
            }
          }
        }
      }
    }
  }
}

void col2im_volume(const double* col, const Geometry& g, double* sample_grad) {
  const std::size_t cols = g.out_volume();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t t = 0; t < g.kd; ++t) {
      for (std::size_t a = 0; a < g.kh; ++a) {
        for (std::size_t b = 0; b < g.kw; ++b) {
          const double* row = col + (((ci * g.kd + t) * g.kh + a) * g.kw + b) * cols;
          for (std::size_t z = 0; z < g.od; ++z) {
            const long iz = static_cast<long>(z * g.sd + t) - static_cast<long>(g.pd);
            if (iz < 0 || iz >= static_cast<long>(g.d)) continue;
            double* plane = sample_grad + (ci * g.d + static_cast<std::size_t>(iz)) * g.h * g.w;
            const double* slab = row + z * g.out_plane();
            for (std::size_t y = 0; y < g.oh; ++y) {
              const long iy = static_cast<long>(y * g.sh + a) - static_cast<long>(g.ph);
              if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
              double* dst = plane + static_cast<std::size_t>(iy) * g.w;
              const double* src = slab + y * g.ow;
              for (std::size_t x = 0; x < g.ow; ++x) {
                const long ix = static_cast<long>(x * g.sw + b) - static_cast<long>(g.pw);
                if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[x];
              }
            }
          }
        }
      }
    }
  }
}

Tensor conv_forward(const Tensor& input, const Tensor& weights, const Tensor* bias, const Geometry& g) {
  Tensor out({g.n, g.co, g.od, g.oh, g.ow});
  const auto co = static_cast<Eigen::Index>(g.co);
  const auto k = static_cast<Eigen::Index>(g.patch());
  ConstMatrixMap W(weights.data(), co, k);
  if (g.slicewise()) {
    const auto cols = static_cast<Eigen::Index>(g.out_plane());
    std::vector<double> col(g.patch() * g.out_plane());
    for (std::size_t s = 0; s < g.n; ++s) {
      const double* sample = input.data() + s * g.c * g.in_volume();
      for (std::size_t z = 0; z < g.d; ++z) {
        im2col_slice(sample, g, z, col.data());
        double* dst = out.data() + (s * g.co * g.od + z) * g.out_plane();
        StridedMap Y(dst, co, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(g.od * g.out_plane())));
        Y.noalias() = W * ConstMatrixMap(col.data(), k, cols);
      }
    }
  } else {
    const auto cols = static_cast<Eigen::Index>(g.out_volume());
    std::vector<double> col(g.patch() * g.out_volume());
    for (std::size_t s = 0; s < g.n; ++s) {
      im2col_volume(input.data() + s * g.c * g.in_volume(), g, col.data());
      MatrixMap Y(out.data() + s * g.co * g.out_volume(), co, cols);
      Y.noalias() = W * ConstMatrixMap(col.data(), k, cols);
    }
  }
  if (bias) {
    for (std::size_t s = 0; s < g.n; ++s) {
      for (std::size_t o = 0; o < g.co; ++o) {
        double* dst = out.data() + (s * g.co + o) * g.out_volume();
        const double b = (*bias)[o];
        for (std::size_t i = 0; i < g.out_volume(); ++i) dst[i] += b;
      }
    }
  }
  return out;
}

Var conv_op(const Var& input, const Var& weights, const Var& bias, const Geometry& g, const Shape& out_shape) {
  Tensor out = conv_forward(input.value(), weights.value(), bias.defined() ? &bias.value() : nullptr, g);
  out = out.reshaped(out_shape);
  std::vector<Var> inputs{input, weights};
  if (bias.defined()) inputs.push_back(bias);
  return make_op_result(std::move(out), inputs, [input, weights, bias, g](const Tensor& grad) mutable {
    const auto co = static_cast<Eigen::Index>(g.co);
    const auto k = static_cast<Eigen::Index>(g.patch());
    const auto cols = static_cast<Eigen::Index>(g.out_volume());
    ConstMatrixMap W(weights.value().data(), co, k);
    Tensor gw(weights.shape());
    MatrixMap GW(gw.data(), co, k);
    Tensor gx;
    if (input.requires_grad()) gx = Tensor(input.shape());
    std::vector<double> col(g.patch() * g.out_volume());
    std::vector<double> dcol(input.requires_grad() ? col.size() : 0);
    for (std::size_t s = 0; s < g.n; ++s) {
      ConstMatrixMap G(grad.data() + s * g.co * g.out_volume(), co, cols);
      if (weights.requires_grad()) {
        im2col_volume(input.value().data() + s * g.c * g.in_volume(), g, col.data());
        GW.noalias() += G * ConstMatrixMap(col.data(), k, cols).transpose();
      }
      if (input.requires_grad()) {
        MatrixMap(dcol.data(), k, cols).noalias() = W.transpose() * G;
        col2im_volume(dcol.data(), g, gx.data() + s * g.c * g.in_volume());
      }
    }
    if (weights.requires_grad()) weights.accumulate_grad(gw);
    if (input.requires_grad()) input.accumulate_grad(gx);
    if (bias.defined() && bias.requires_grad()) {
      Tensor gb(bias.shape());
      for (std::size_t s = 0; s < g.n; ++s) {
        for (std::size_t o = 0; o < g.co; ++o) {
          const double* src = grad.data() + (s * g.co + o) * g.out_volume();
          for (std::size_t i = 0; i < g.out_volume(); ++i) gb[o] += src[i];
        }
      }
      bias.accumulate_grad(gb);
    }
  });
}

void check_weights(const Var& input, const ConvSpec& spec, const Var& weights, const Var& bias, const char* op) {
  spec.validate();
  if (weights.shape() != spec.weight_shape()) {
    throw std::invalid_argument(std::string(op) + ": weight shape " + to_string(weights.shape()) +
                                " does not match spec " + to_string(spec.weight_shape()));
  }
  if (input.shape()[1] != weights.shape()[1]) {
    throw std::invalid_argument(std::string(op) + ": input " + to_string(input.shape()) + " has " +
                                std::to_string(input.shape()[1]) + " channels but weights " +
                                to_string(weights.shape()) + " expect " + std::to_string(weights.shape()[1]));
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    throw std::invalid_argument(std::string(op) + ": bias shape " + to_string(bias.shape()) + " expected [" +
                                std::to_string(spec.out_channels) + "]");
  }
}

}  // namespace

ConvSpec ConvSpec::planar(std::size_t in, std::size_t out, std::size_t k, std::size_t stride) {
  return ConvSpec{{k, k}, {stride, stride}, {k / 2, k / 2}, in, out, false};
}

ConvSpec ConvSpec::volumetric(std::size_t in, std::size_t out, std::size_t kd, std::size_t k, std::size_t stride) {
  return ConvSpec{{kd, k, k}, {1, stride, stride}, {kd / 2, k / 2, k / 2}, in, out, false};
}

Shape ConvSpec::weight_shape() const {
  Shape shape{out_channels, in_channels};
  shape.insert(shape.end(), kernel.begin(), kernel.end());
  return shape;
}

std::size_t ConvSpec::parameter_count() const { return numel(weight_shape()) + (bias ? out_channels : 0); }

std::string ConvSpec::kernel_string() const { return join(kernel, 'x'); }
std::string ConvSpec::stride_string() const { return join(stride, 'x'); }

void ConvSpec::validate() const {
  if (kernel.size() != 2 && kernel.size() != 3) throw std::invalid_argument("ConvSpec: kernel must have 2 or 3 axes");
  if (stride.size() != kernel.size() || padding.size() != kernel.size()) {
    throw std::invalid_argument("ConvSpec: kernel, stride and padding must have the same number of axes");
  }
  if (in_channels == 0 || out_channels == 0) throw std::invalid_argument("ConvSpec: channel counts must be positive");
  for (std::size_t i = 0; i < kernel.size(); ++i) {
    if (kernel[i] == 0 || stride[i] == 0) throw std::invalid_argument("ConvSpec: kernel and stride must be positive");
  }
}

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (input + 2 * padding < kernel) {
    throw std::invalid_argument("convolution kernel " + std::to_string(kernel) + " larger than padded input " +
                                std::to_string(input + 2 * padding));
  }
  return (input + 2 * padding - kernel) / stride + 1;
}

Var conv2d(const Var& input, const ConvSpec& spec, const Var& weights, const Var& bias) {
  if (spec.axes() != 2) throw std::invalid_argument("conv2d: spec kernel must have 2 axes");
  const Shape& s = input.shape();
  if (s.size() != 4 && s.size() != 5) {
    throw std::invalid_argument("conv2d: expected [N,C,H,W] or [N,C,D,H,W], got " + to_string(s));
  }
  check_weights(input, spec, weights, bias, "conv2d");
  const bool has_depth = s.size() == 5;
  Geometry g{};
  g.n = s[0];
  g.c = s[1];
  g.d = has_depth ? s[2] : 1;
  g.h = s[s.size() - 2];
  g.w = s[s.size() - 1];
  g.co = spec.out_channels;
  g.kd = 1, g.kh = spec.kernel[0], g.kw = spec.kernel[1];
  g.sd = 1, g.sh = spec.stride[0], g.sw = spec.stride[1];
  g.pd = 0, g.ph = spec.padding[0], g.pw = spec.padding[1];
  g.od = g.d;
  g.oh = conv_output_extent(g.h, g.kh, g.sh, g.ph);
  g.ow = conv_output_extent(g.w, g.kw, g.sw, g.pw);
  Shape out_shape = has_depth ? Shape{g.n, g.co, g.od, g.oh, g.ow} : Shape{g.n, g.co, g.oh, g.ow};
  return conv_op(input, weights, bias, g, out_shape);
}

Var conv3d(const Var& input, const ConvSpec& spec, const Var& weights, const Var& bias) {
  if (spec.axes() != 3) throw std::invalid_argument("conv3d: spec kernel must have 3 axes");
  const Shape& s = input.shape();
  if (s.size() != 5) throw std::invalid_argument("conv3d: expected [N,C,D,H,W], got " + to_string(s));
  if (spec.stride[0] != 1 || 2 * spec.padding[0] + 1 != spec.kernel[0]) {
    throw std::invalid_argument("conv3d: depth stride must be 1 and depth padding must preserve D (kernel " +
                                spec.kernel_string() + ", stride " + spec.stride_string() + ")");
  }
  check_weights(input, spec, weights, bias, "conv3d");
  Geometry g{};
  g.n = s[0], g.c = s[1], g.d = s[2], g.h = s[3], g.w = s[4];
  g.co = spec.out_channels;
  g.kd = spec.kernel[0], g.kh = spec.kernel[1], g.kw = spec.kernel[2];
  g.sd = spec.stride[0], g.sh = spec.stride[1], g.sw = spec.stride[2];
  g.pd = spec.padding[0], g.ph = spec.padding[1], g.pw = spec.padding[2];
  g.od = conv_output_extent(g.d, g.kd, g.sd, g.pd);
  g.oh = conv_output_extent(g.h, g.kh, g.sh, g.ph);
  g.ow = conv_output_extent(g.w, g.kw, g.sw, g.pw);
  return conv_op(input, weights, bias, g, {g.n, g.co, g.od, g.oh, g.ow});
}

}  // namespace anivol
