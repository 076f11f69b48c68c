#include "anivol/data/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include "anivol/data/preprocess.hpp"
#include "anivol/data/seeding.hpp"

namespace anivol {

namespace {

using nlohmann::json;

using OpField = OpRange AugmentationPolicy::*;
constexpr std::array<std::pair<const char*, OpField>, 8> kOps{{
    {"shift", &AugmentationPolicy::shift},
    {"scale", &AugmentationPolicy::scale},
    {"rotate", &AugmentationPolicy::rotate},
    {"crop", &AugmentationPolicy::crop},
    {"hflip", &AugmentationPolicy::hflip},
    {"brightness", &AugmentationPolicy::brightness},
    {"contrast", &AugmentationPolicy::contrast},
    {"gaussian_blur", &AugmentationPolicy::gaussian_blur},
}};

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double in(const OpRange& r) { return r.low + (r.high - r.low) * unit(); }
  /// True when an enabled op fires on this draw.
  bool fires(const OpRange& r) { return r.enabled && unit() < r.probability; }

 private:
  std::mt19937_64 rng_;
};

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// out(q) = in(A⁻¹(q − t)) about the plane center, zero outside.
void affine_resample(Volume& v, double scale, double angle_rad, double ty, double tx) {
  const double cy = (static_cast<double>(v.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(v.width) - 1.0) / 2.0;
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  std::vector<double> src(v.plane_size());
  for (std::size_t d = 0; d < v.depth; ++d) {
    double* plane = v.voxels.data() + d * v.plane_size();
    std::copy(plane, plane + v.plane_size(), src.begin());
    for (std::size_t i = 0; i < v.height; ++i) {
      for (std::size_t j = 0; j < v.width; ++j) {
        const double qy = static_cast<double>(i) - cy - ty;
        const double qx = static_cast<double>(j) - cx - tx;
        const double py = (-s * qx + c * qy) / scale;
        const double px = (c * qx + s * qy) / scale;
        plane[i * v.width + j] = sample_bilinear(src.data(), v.height, v.width, py + cy, px + cx, Boundary::zero);
      }
    }
  }
}

void crop_resize(Volume& v, double kept, double oy_unit, double ox_unit) {
  const double h = static_cast<double>(v.height), w = static_cast<double>(v.width);
  const double oy = oy_unit * h * (1.0 - kept), ox = ox_unit * w * (1.0 - kept);
  std::vector<double> src(v.plane_size());
  for (std::size_t d = 0; d < v.depth; ++d) {
    double* plane = v.voxels.data() + d * v.plane_size();
    std::copy(plane, plane + v.plane_size(), src.begin());
    for (std::size_t i = 0; i < v.height; ++i) {
      const double y = oy + (static_cast<double>(i) + 0.5) * kept - 0.5;
      for (std::size_t j = 0; j < v.width; ++j) {
        const double x = ox + (static_cast<double>(j) + 0.5) * kept - 0.5;
        plane[i * v.width + j] = sample_bilinear(src.data(), v.height, v.width, y, x, Boundary::clamp);
      }
    }
  }
}

void hflip(Volume& v) {
  for (std::size_t r = 0; r < v.depth * v.height; ++r) {
    double* row = v.voxels.data() + r * v.width;
    std::reverse(row, row + v.width);
  }
}

void gaussian_blur(Volume& v, double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    total += kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * double(k * k) / (sigma * sigma));
  }
  for (double& k : kernel) k /= total;
  const long h = static_cast<long>(v.height), w = static_cast<long>(v.width);
  std::vector<double> tmp(v.plane_size());
  for (std::size_t d = 0; d < v.depth; ++d) {
    double* plane = v.voxels.data() + d * v.plane_size();
    for (long i = 0; i < h; ++i)
      for (long j = 0; j < w; ++j) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * plane[i * w + std::clamp(j + k, 0L, w - 1)];
        tmp[static_cast<std::size_t>(i * w + j)] = acc;
      }
    for (long i = 0; i < h; ++i)
      for (long j = 0; j < w; ++j) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k)
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(std::clamp(i + k, 0L, h - 1) * w + j)];
        plane[i * w + j] = acc;
      }
  }
}

}  // namespace

bool AugmentationPolicy::empty() const noexcept {
  for (const auto& [name, field] : kOps) {
    if ((this->*field).enabled) return false;
  }
  return true;
}

void AugmentationPolicy::validate() const {
  for (const auto& [name, field] : kOps) {
    const OpRange& r = this->*field;
    const std::string op = name;
    if (!(r.probability >= 0.0 && r.probability <= 1.0)) throw std::invalid_argument(op + ": probability outside [0,1]");
    if (!(r.low <= r.high)) throw std::invalid_argument(op + ": low exceeds high");
  }
  if (scale.enabled && scale.low <= 0.0) throw std::invalid_argument("scale: factors must be positive");
  if (crop.enabled && (crop.low <= 0.0 || crop.high > 1.0)) throw std::invalid_argument("crop: kept fraction must lie in (0,1]");
  if (contrast.enabled && contrast.low < 0.0) throw std::invalid_argument("contrast: factors must be non-negative");
  if (gaussian_blur.enabled && gaussian_blur.low <= 0.0) throw std::invalid_argument("gaussian_blur: sigma must be positive");
}

AugmentationPolicy AugmentationPolicy::none(std::uint64_t seed) {
  AugmentationPolicy p;
  p.seed = seed;
  return p;
}

AugmentationPolicy AugmentationPolicy::standard(std::uint64_t seed) {
  AugmentationPolicy p;
  p.seed = seed;
  p.shift = {true, 0.5, -0.06, 0.06};
  p.scale = {true, 0.5, 0.9, 1.1};
  p.rotate = {true, 0.5, -10.0, 10.0};
  p.crop = {true, 0.3, 0.85, 1.0};
  p.hflip = {true, 0.5, 0.0, 0.0};
  p.brightness = {true, 0.5, -0.1, 0.1};
  p.contrast = {true, 0.5, 0.9, 1.1};
  p.gaussian_blur = {true, 0.2, 0.3, 0.8};
  return p;
}

json to_json(const AugmentationPolicy& policy) {
  json j;
  j["seed"] = policy.seed;
  json ops = json::object();
  for (const auto& [name, field] : kOps) {
    const OpRange& r = policy.*field;
    if (!r.enabled) continue;
    ops[name] = {{"probability", r.probability}, {"low", r.low}, {"high", r.high}};
  }
  j["ops"] = ops;
  return j;
}

AugmentationPolicy policy_from_json(const json& j) {
  AugmentationPolicy p;
  p.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("ops")) {
    for (const auto& [key, value] : j.at("ops").items()) {
      OpField field = nullptr;
      for (const auto& [name, f] : kOps) {
        if (key == name) field = f;
      }
      if (!field) throw std::invalid_argument("augmentation: unknown op '" + key + "'");
      OpRange& r = p.*field;
      r.enabled = true;
      r.probability = value.value("probability", 0.5);
      r.low = value.value("low", 0.0);
      r.high = value.value("high", r.low);
    }
  }
  p.validate();
  return p;
}

Volume augment(const Volume& volume, const AugmentationPolicy& policy, std::uint64_t draw_seed) {
  if (policy.empty()) return volume;
  policy.validate();
  Draw draw(derive_seed(policy.seed, {draw_seed}));
  Volume v = volume;

  double ty = 0.0, tx = 0.0, zoom = 1.0, angle = 0.0;
  bool geometric = false;
  if (draw.fires(policy.shift)) {
    ty = draw.in(policy.shift) * static_cast<double>(v.height);
    tx = draw.in(policy.shift) * static_cast<double>(v.width);
    geometric = true;
  }
  if (draw.fires(policy.scale)) {
    zoom = draw.in(policy.scale);
    geometric = true;
  }
  if (draw.fires(policy.rotate)) {
    angle = draw.in(policy.rotate) * std::numbers::pi / 180.0;
    geometric = true;
  }
  if (geometric) affine_resample(v, zoom, angle, ty, tx);

  if (draw.fires(policy.crop)) {
    const double kept = draw.in(policy.crop);
    const double oy = draw.unit(), ox = draw.unit();
    crop_resize(v, kept, oy, ox);
  }
  if (draw.fires(policy.hflip)) hflip(v);
  if (draw.fires(policy.brightness)) {
    const double b = draw.in(policy.brightness);
    for (double& x : v.voxels) x += b;
  }
  if (draw.fires(policy.contrast)) {
    const double c = draw.in(policy.contrast);
    double mean = 0.0;
    for (double x : v.voxels) mean += x;
    mean /= static_cast<double>(v.voxels.size());
    for (double& x : v.voxels) x = mean + c * (x - mean);
  }
  if (draw.fires(policy.gaussian_blur)) gaussian_blur(v, draw.in(policy.gaussian_blur));
  return v;
}

std::vector<Volume> tta_copies(const Volume& volume, std::size_t n_aug, const AugmentationPolicy& policy,
                               std::uint64_t seed) {
  std::vector<Volume> copies{volume};
  if (policy.empty()) return copies;
  copies.reserve(n_aug + 1);
  for (std::size_t i = 0; i < n_aug; ++i) copies.push_back(augment(volume, policy, derive_seed(seed, {i})));
  return copies;
}

double tta_predict(const std::function<double(const Volume&)>& logit, const Volume& volume, std::size_t n_aug,
                   const AugmentationPolicy& policy, std::uint64_t seed) {
  if (policy.empty()) return stable_sigmoid(logit(volume));
  const auto copies = tta_copies(volume, n_aug, policy, seed);
  double total = 0.0;
  for (const auto& c : copies) total += stable_sigmoid(logit(c));
  return total / static_cast<double>(copies.size());
}

}  // namespace anivol
