#include "anivol/data/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "anivol/data/preprocess.hpp"
#include "anivol/data/seeding.hpp"

namespace anivol {

namespace {

constexpr double kLumen = 0.15;
constexpr double kWall = 0.35;
constexpr double kTumor = 0.55;
constexpr double kFat = 0.85;
constexpr int kSupersample = 3;

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * (static_cast<double>(rng_() >> 11) * 0x1.0p-53); }
  double normal() { return normal_(rng_); }
  std::size_t index(std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(std::uniform_int_distribution<std::uint64_t>(0, hi - lo)(rng_));
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

struct Geometry {
  double cx, cy;            // plane center at the middle slice
  double drift_x, drift_y;  // center shift per slice
  double r_in, r_out;
  double angle;             // tumor direction
  double radial_center, radial_axis, tangential_axis;
  double z0, half_depth;

  double cross_section(double z) const {
    const double u = (z - z0) / half_depth;
    return u * u < 1.0 ? std::sqrt(1.0 - u * u) : 0.0;
  }

  bool in_tumor(double x, double y, double z) const {
    const double s = cross_section(z);
    if (s <= 0.0) return false;
    const double ox = x - center_x(z), oy = y - center_y(z);
    const double c = std::cos(angle), sn = std::sin(angle);
    const double dr = ox * c + oy * sn - radial_center;
    const double dt = -ox * sn + oy * c;
    const double a = radial_axis * s, b = tangential_axis * s;
    return (dr * dr) / (a * a) + (dt * dt) / (b * b) <= 1.0;
  }

  double center_x(double z) const { return cx + drift_x * z; }
  double center_y(double z) const { return cy + drift_y * z; }

  double tissue(double x, double y, double z) const {
    if (in_tumor(x, y, z)) return kTumor;
    const double r = std::hypot(x - center_x(z), y - center_y(z));
    if (r < r_in) return kLumen;
    if (r < r_out) return kWall;
    return kFat;
  }
};

}  // namespace

void PhantomConfig::validate() const {
  if (n == 0) throw std::invalid_argument("phantoms: n must be positive");
  if (!(class_balance >= 0.0 && class_balance <= 1.0)) throw std::invalid_argument("phantoms: class_balance outside [0,1]");
  if (!(difficulty >= 0.0 && difficulty <= 1.0)) throw std::invalid_argument("phantoms: difficulty outside [0,1]");
  if (side < 16 || side % 16 != 0) throw std::invalid_argument("phantoms: side must be a positive multiple of 16");
  if (min_depth == 0 || min_depth > max_depth) throw std::invalid_argument("phantoms: bad depth range");
}

nlohmann::json to_json(const PhantomConfig& c) {
  return {{"n", c.n},       {"class_balance", c.class_balance}, {"difficulty", c.difficulty}, {"seed", c.seed},
          {"side", c.side}, {"min_depth", c.min_depth},         {"max_depth", c.max_depth}};
}

PhantomConfig phantom_config_from_json(const nlohmann::json& j) {
  PhantomConfig c;
  c.n = j.value("n", c.n);
  c.class_balance = j.value("class_balance", c.class_balance);
  c.difficulty = j.value("difficulty", c.difficulty);
  c.seed = j.value("seed", c.seed);
  c.side = j.value("side", c.side);
  c.min_depth = j.value("min_depth", c.min_depth);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.validate();
  return c;
}

PhantomDataset generate_phantom_dataset(const PhantomConfig& config) {
  config.validate();
  const std::size_t n3 = static_cast<std::size_t>(std::llround(static_cast<double>(config.n) * config.class_balance));
  std::vector<int> labels(config.n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n3), 1);
  {
    std::mt19937_64 rng(derive_seed(config.seed, {0x1abe1}));
    std::shuffle(labels.begin(), labels.end(), rng);
  }

  const double S = static_cast<double>(config.side);
  const double diff = config.difficulty;
  PhantomDataset out;
  out.volumes.reserve(config.n);
  out.truths.reserve(config.n);

  for (std::size_t i = 0; i < config.n; ++i) {
    Stream rng(derive_seed(config.seed, {i}));
    Volume v;
    v.id = fmt::format("phantom_{:04d}", i);
    v.label = labels[i];
    v.depth = rng.index(config.min_depth, config.max_depth);
    v.height = v.width = config.side;
    v.spacing_x_mm = v.spacing_y_mm = 0.44;
    v.thickness_mm = 3.1;
    const double D = static_cast<double>(v.depth);

    Geometry g{};
    g.r_in = rng.uniform(0.16, 0.22) * S;
    const double wall = rng.uniform(0.07, 0.09) * S;
    g.r_out = g.r_in + wall;
    const double drift = 0.02 * S / D;
    g.drift_x = rng.uniform(-drift, drift);
    g.drift_y = rng.uniform(-drift, drift);
    g.cx = (S - 1.0) / 2.0 + rng.uniform(-0.05, 0.05) * S - g.drift_x * (D - 1.0) / 2.0;
    g.cy = (S - 1.0) / 2.0 + rng.uniform(-0.05, 0.05) * S - g.drift_y * (D - 1.0) / 2.0;

    const double margin = 0.5 * wall * (1.0 - diff);
    const double penetration = v.label == 1 ? rng.uniform(std::max(margin, 0.05 * wall), margin + 1.2 * wall)
                                            : -rng.uniform(std::max(margin, 0.05 * wall), 0.8 * wall);
    const double inner = 0.7 * g.r_in;
    const double reach = g.r_out + penetration;
    g.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    g.radial_center = 0.5 * (inner + reach);
    g.radial_axis = 0.5 * (reach - inner);
    // the ellipse's farthest point from the center stays on its radial axis
    g.tangential_axis = std::min(rng.uniform(0.08, 0.13) * S, std::sqrt(0.9 * g.radial_axis * reach));
    g.z0 = static_cast<double>(rng.index(v.depth / 4, (3 * v.depth) / 4));
    g.half_depth = rng.uniform(2.0, std::max(2.5, D / 2.5));

    const double noise = 0.15 * diff;
    const double bias_amp = 0.4 * diff;
    double coeff[4];
    double coeff_norm = 0.0;
    for (double& c : coeff) coeff_norm += std::abs(c = rng.uniform(-1.0, 1.0));
    for (double& c : coeff) c /= std::max(coeff_norm, 1e-12);
    const double gain = rng.uniform(0.8, 1.2) * 1000.0;
    const double offset = rng.uniform(-50.0, 50.0);

    v.voxels.assign(v.depth * v.plane_size(), 0.0);
    std::vector<std::size_t> area(v.depth, 0);
    for (std::size_t d = 0; d < v.depth; ++d) {
      const double z = static_cast<double>(d);
      const double w_unit = v.depth > 1 ? 2.0 * z / (D - 1.0) - 1.0 : 0.0;
      for (std::size_t y = 0; y < v.height; ++y) {
        for (std::size_t x = 0; x < v.width; ++x) {
          double acc = 0.0;
          for (int sy = 0; sy < kSupersample; ++sy)
            for (int sx = 0; sx < kSupersample; ++sx) {
              const double px = static_cast<double>(x) + (sx + 0.5) / kSupersample - 0.5;
              const double py = static_cast<double>(y) + (sy + 0.5) / kSupersample - 0.5;
              acc += g.tissue(px, py, z);
            }
          double value = acc / (kSupersample * kSupersample);
          if (g.in_tumor(static_cast<double>(x), static_cast<double>(y), z)) ++area[d];
          const double u = 2.0 * static_cast<double>(x) / (S - 1.0) - 1.0;
          const double t = 2.0 * static_cast<double>(y) / (S - 1.0) - 1.0;
          const double bias = 1.0 + bias_amp * (coeff[0] * u + coeff[1] * t + coeff[2] * u * t + coeff[3] * w_unit);
          value = value * bias + noise * rng.normal();
          v.at(d, y, x) = gain * value + offset;
        }
      }
    }

    std::vector<std::size_t> order(v.depth);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return area[a] > area[b]; });
    for (std::size_t k = 0; k < std::min<std::size_t>(3, v.depth); ++k) {
      if (area[order[k]] == 0 && !v.representative_slices.empty()) break;
      v.representative_slices.push_back(order[k]);
    }
    std::sort(v.representative_slices.begin(), v.representative_slices.end());

    PhantomTruth truth;
    truth.id = v.id;
    truth.label = v.label;
    truth.wall_inner = g.r_in;
    truth.wall_outer = g.r_out;
    truth.penetration = penetration;
    truth.margin = margin;
    truth.center_slice = static_cast<std::size_t>(g.z0);
    v.validate();
    out.volumes.push_back(std::move(v));
    out.truths.push_back(truth);
  }
  return out;
}

std::vector<double> phantom_radial_features(const Volume& prepared) {
  prepared.validate();
  if (prepared.representative_slices.empty()) throw std::invalid_argument("phantom_radial_features: no representative slice");
  constexpr std::size_t kRings = 12, kAngles = 72;
  std::vector<double> features(2 * kRings, 0.0);
  for (std::size_t s : prepared.representative_slices) {
    const double* plane = prepared.voxels.data() + s * prepared.plane_size();
    std::vector<double> sorted(plane, plane + prepared.plane_size());
    std::sort(sorted.begin(), sorted.end());
    const double low = sorted[sorted.size() / 20], high = sorted[sorted.size() * 19 / 20];
    const double threshold = 0.5 * (low + high);
    double cy = 0.0, cx = 0.0, area = 0.0;
    for (std::size_t y = 0; y < prepared.height; ++y) {
      for (std::size_t x = 0; x < prepared.width; ++x) {
        if (plane[y * prepared.width + x] >= threshold) continue;
        cy += static_cast<double>(y);
        cx += static_cast<double>(x);
        area += 1.0;
      }
    }
    if (area == 0.0) throw std::invalid_argument("phantom_radial_features: no dark disk in slice");
    cy /= area;
    cx /= area;
    const double radius = std::sqrt(area / std::numbers::pi);
    for (std::size_t r = 0; r < kRings; ++r) {
      const double rho = (0.5 + static_cast<double>(r) / (kRings - 1)) * radius;
      std::vector<double> ring(kAngles);
      for (std::size_t a = 0; a < kAngles; ++a) {
        const double theta = 2.0 * std::numbers::pi * static_cast<double>(a) / kAngles;
        ring[a] = sample_bilinear(plane, prepared.height, prepared.width, cy + rho * std::sin(theta),
                                  cx + rho * std::cos(theta), Boundary::clamp);
      }
      std::vector<double> smooth(kAngles);
      for (std::size_t a = 0; a < kAngles; ++a) {
        smooth[a] = (ring[(a + kAngles - 1) % kAngles] + ring[a] + ring[(a + 1) % kAngles]) / 3.0;
      }
      const double n = static_cast<double>(prepared.representative_slices.size());
      features[2 * r] += *std::min_element(smooth.begin(), smooth.end()) / n;
      features[2 * r + 1] += *std::max_element(smooth.begin(), smooth.end()) / n;
    }
  }
  return features;
}

}  // namespace anivol
