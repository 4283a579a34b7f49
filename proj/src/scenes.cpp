#include "csf/scenes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace csf {

// ---------------------------------------------------------------------------
// SensorSuite

SensorSuite::SensorSuite(std::vector<SensorSpec> sensors) : sensors_(std::move(sensors)) {
  require(!sensors_.empty(), "SensorSuite: at least one sensor required");
  bool has_finest = false;
  for (const auto& s : sensors_) {
    require(s.bands >= 1, "SensorSuite: sensor '" + s.name + "' must have bands >= 1");
    require(s.resolution_factor >= 1,
            "SensorSuite: sensor '" + s.name + "' must have resolution_factor >= 1");
    has_finest = has_finest || s.resolution_factor == 1;
    total_channels_ += s.bands;
  }
  require(has_finest, "SensorSuite: one sensor must have resolution_factor == 1");
}

std::pair<int, int> SensorSuite::channel_range(int index) const {
  require(index >= 0 && index < size(), "SensorSuite: sensor index out of range");
  int first = 0;
  for (int i = 0; i < index; ++i) first += sensors_[i].bands;
  return {first, first + sensors_[index].bands};
}

int SensorSuite::finest_sensor() const {
  for (int i = 0; i < size(); ++i)
    if (sensors_[i].resolution_factor == 1) return i;
  return 0;
}

bool operator==(const SensorSpec& a, const SensorSpec& b) {
  return a.name == b.name && a.bands == b.bands && a.resolution_factor == b.resolution_factor;
}

bool SensorSuite::operator==(const SensorSuite& other) const { return sensors_ == other.sensors_; }

SensorSuite make_default_suite() {
  return SensorSuite({{"spot", 4, 3}, {"naip", 4, 2}, {"phr", 4, 1}});
}

// ---------------------------------------------------------------------------
// Latent scene rendering

namespace {

constexpr int kPhysicalBands = 4;  // red, green, blue, near-infrared
using Spectrum = std::array<double, kPhysicalBands>;

enum Material { kWater, kVegetation, kCrop, kSoil, kConcrete, kRock, kMaterialCount };

constexpr std::array<Spectrum, kMaterialCount> kSpectra{{
    {0.04, 0.07, 0.10, 0.02},  // water
    {0.06, 0.12, 0.05, 0.45},  // vegetation
    {0.14, 0.22, 0.09, 0.35},  // crop
    {0.28, 0.24, 0.18, 0.32},  // soil
    {0.40, 0.40, 0.40, 0.36},  // concrete
    {0.33, 0.29, 0.26, 0.30},  // rock
}};

// Sensor response: rows are output bands, columns physical bands. Fixed per
// sensor position so a band means the same thing in every scene.
constexpr std::array<std::array<Spectrum, kPhysicalBands>, 3> kBandMixing{{
    {{{0.80, 0.14, 0.04, 0.02}, {0.10, 0.78, 0.10, 0.02}, {0.04, 0.14, 0.80, 0.02}, {0.03, 0.05, 0.02, 0.90}}},
    {{{0.90, 0.07, 0.02, 0.01}, {0.05, 0.88, 0.06, 0.01}, {0.02, 0.08, 0.89, 0.01}, {0.06, 0.03, 0.01, 0.90}}},
    {{{0.86, 0.10, 0.02, 0.02}, {0.06, 0.86, 0.06, 0.02}, {0.02, 0.10, 0.86, 0.02}, {0.02, 0.04, 0.02, 0.92}}},
}};

constexpr std::array<double, 3> kSensorNoise{0.015, 0.02, 0.025};

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Anti-aliased coverage of a feature whose signed distance is `half_width - d`.
double soft(double half_width, double d) { return clamp01(0.5 + half_width - d); }

struct Canvas {
  int height;
  int width;
  std::vector<double> cover;  // foreground coverage in [0, 1]

  Canvas(int h, int w) : height(h), width(w), cover(std::size_t(h) * w, 0.0) {}

  template <typename F>
  void paint(F&& coverage_at) {
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double& c = cover[std::size_t(y) * width + x];
        c = std::max(c, clamp01(coverage_at(x + 0.5, y + 0.5)));
      }
  }
};

struct Direction {
  double nx, ny;
};

Direction random_direction(Rng& rng) {
  const double a = uniform(rng, 0.0, std::numbers::pi);
  return {std::cos(a), std::sin(a)};
}

void paint_line(Canvas& cv, Rng& rng, double width, double max_offset) {
  const auto d = random_direction(rng);
  const double cx = cv.width / 2.0, cy = cv.height / 2.0;
  const double off = uniform(rng, -max_offset, max_offset);
  cv.paint([&](double x, double y) { return soft(width / 2, std::abs((x - cx) * d.nx + (y - cy) * d.ny - off)); });
}

void paint_stripes(Canvas& cv, Rng& rng, double period, double width) {
  const auto d = random_direction(rng);
  const double phase = uniform(rng, 0.0, period);
  cv.paint([&](double x, double y) {
    double u = std::fmod(x * d.nx + y * d.ny + phase + 1000 * period, period);
    return soft(width / 2, std::min(u, period - u));
  });
}

void paint_grid(Canvas& cv, Rng& rng, double period, double width) {
  const auto d = random_direction(rng);
  const double p1 = uniform(rng, 0.0, period), p2 = uniform(rng, 0.0, period);
  cv.paint([&](double x, double y) {
    double u = std::fmod(x * d.nx + y * d.ny + p1 + 1000 * period, period);
    double v = std::fmod(-x * d.ny + y * d.nx + p2 + 1000 * period, period);
    return std::max(soft(width / 2, std::min(u, period - u)), soft(width / 2, std::min(v, period - v)));
  });
}

void paint_blobs(Canvas& cv, Rng& rng, int count, double r_lo, double r_hi) {
  for (int i = 0; i < count; ++i) {
    const double bx = uniform(rng, 0.0, cv.width), by = uniform(rng, 0.0, cv.height);
    const double r = uniform(rng, r_lo, r_hi);
    cv.paint([&](double x, double y) { return soft(r, std::hypot(x - bx, y - by)); });
  }
}

void paint_rings(Canvas& cv, Rng& rng, double period, double width) {
  const double bx = cv.width * uniform(rng, 0.3, 0.7), by = cv.height * uniform(rng, 0.3, 0.7);
  cv.paint([&](double x, double y) {
    double u = std::fmod(std::hypot(x - bx, y - by), period);
    return soft(width / 2, std::min(u, period - u));
  });
}

void paint_ellipse_ring(Canvas& cv, Rng& rng, double width) {
  const double bx = cv.width * uniform(rng, 0.4, 0.6), by = cv.height * uniform(rng, 0.4, 0.6);
  const double ra = cv.width * uniform(rng, 0.22, 0.32), rb = ra * uniform(rng, 0.6, 0.8);
  const auto d = random_direction(rng);
  cv.paint([&](double x, double y) {
    const double u = (x - bx) * d.nx + (y - by) * d.ny, v = -(x - bx) * d.ny + (y - by) * d.nx;
    const double rho = std::hypot(u / ra, v / rb);
    return soft(width / 2, std::abs(rho - 1.0) * std::sqrt(ra * rb));
  });
}

void paint_half_plane(Canvas& cv, Rng& rng, double max_offset) {
  const auto d = random_direction(rng);
  const double cx = cv.width / 2.0, cy = cv.height / 2.0;
  const double off = uniform(rng, -max_offset, max_offset);
  cv.paint([&](double x, double y) { return 0.5 + ((x - cx) * d.nx + (y - cy) * d.ny - off); });
}

// Smooth random field in [0, 1] built from a few random plane waves with
// wavelengths in [lambda_lo, lambda_hi] pixels.
std::vector<double> random_field(Rng& rng, int h, int w, double lambda_lo, double lambda_hi, int waves = 6) {
  std::vector<double> f(std::size_t(h) * w, 0.0);
  for (int k = 0; k < waves; ++k) {
    const auto d = random_direction(rng);
    const double freq = 2 * std::numbers::pi / uniform(rng, lambda_lo, lambda_hi);
    const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) f[std::size_t(y) * w + x] += std::cos(freq * (x * d.nx + y * d.ny) + phase);
  }
  const double norm = 1.0 / std::sqrt(waves / 2.0);
  for (auto& v : f) v = 1.0 / (1.0 + std::exp(-2.0 * v * norm));
  return f;
}

Spectrum jittered(Rng& rng, Material m) {
  Spectrum s = kSpectra[m];
  const double overall = std::exp(uniform(rng, -0.15, 0.15));
  for (auto& v : s) v *= overall * std::exp(uniform(rng, -0.08, 0.08));
  return s;
}

struct Layer {
  std::vector<double> cover;
  Spectrum spectrum;
};

// Physical reflectance [4, H*W] of one latent layout.
Matrix<double> render_latent(int class_label, Rng& rng, int h, int w) {
  Canvas cv(h, w);
  Material bg = kSoil, fg = kConcrete;
  std::vector<Layer> extra;

  auto add_layer = [&](Canvas&& c, Material m) { extra.push_back({std::move(c.cover), jittered(rng, m)}); };

  switch (class_label) {
    case 0:  // bridge: one road across water
      bg = kWater, fg = kConcrete;
      paint_line(cv, rng, uniform(rng, 3.0, 5.0), 6.0);
      break;
    case 1: {  // breakwater: thin rock barrier along a shoreline
      bg = kWater, fg = kRock;
      Canvas land(h, w);
      paint_half_plane(land, rng, 14.0);
      add_layer(std::move(land), kSoil);
      paint_line(cv, rng, uniform(rng, 1.5, 2.5), 10.0);
      break;
    }
    case 2:  // farm buildings among crops
      bg = kCrop, fg = kConcrete;
      paint_blobs(cv, rng, uniform_int(rng, 3, 5), 2.5, 4.0);
      break;
    case 3:  // substation: fine lattice on bare ground
      bg = kSoil, fg = kConcrete;
      paint_grid(cv, rng, uniform(rng, 3.0, 4.0), 1.0);
      break;
    case 4:  // stadium: elliptical ring in grass
      bg = kVegetation, fg = kConcrete;
      paint_ellipse_ring(cv, rng, uniform(rng, 3.0, 4.5));
      break;
    case 5: {  // golf course: sand traps and a pond in grass
      bg = kVegetation, fg = kSoil;
      paint_blobs(cv, rng, uniform_int(rng, 3, 6), 1.5, 3.0);
      Canvas pond(h, w);
      paint_blobs(pond, rng, 1, 4.0, 7.0);
      add_layer(std::move(pond), kWater);
      break;
    }
    case 6: {  // dam: wall between water and land
      bg = kWater, fg = kConcrete;
      Canvas land(h, w);
      const auto dir = random_direction(rng);
      const double off = uniform(rng, -6.0, 6.0), wall = uniform(rng, 3.0, 5.0);
      const double cx = w / 2.0, cy = h / 2.0;
      land.paint([&](double x, double y) { return 0.5 + ((x - cx) * dir.nx + (y - cy) * dir.ny - off - wall / 2); });
      cv.paint([&](double x, double y) { return soft(wall / 2, std::abs((x - cx) * dir.nx + (y - cy) * dir.ny - off)); });
      add_layer(std::move(land), kSoil);
      break;
    }
    case 7:  // quarry: terraced concentric benches
      bg = kRock, fg = kSoil;
      paint_rings(cv, rng, uniform(rng, 5.0, 7.0), 2.0);
      break;
    case 8:  // farmland: broad alternating fields
      bg = kCrop, fg = kSoil;
      paint_stripes(cv, rng, uniform(rng, 10.0, 14.0), uniform(rng, 4.0, 6.0));
      break;
    case 9: {  // forest: fine canopy texture
      bg = kVegetation, fg = kCrop;
      const auto f = random_field(rng, h, w, 2.0, 3.0, 10);
      cv.cover = f;
      break;
    }
    case 10: {  // open water with faint low-frequency variation
      bg = kWater, fg = kWater;
      const auto f = random_field(rng, h, w, 30.0, 60.0);
      cv.cover = f;
      break;
    }
    case 11: {  // bare rock: medium-scale mottling
      bg = kRock, fg = kSoil;
      const auto f = random_field(rng, h, w, 8.0, 16.0);
      cv.cover = f;
      break;
    }
    default:
      throw ContractError("generate_scene: class_label has no renderer");
  }

  const Spectrum bg_s = jittered(rng, bg);
  Spectrum fg_s = jittered(rng, fg);
  if (class_label == 10)
    for (auto& v : fg_s) v *= 1.35;

  Matrix<double> refl(kPhysicalBands, Eigen::Index(h) * w);
  const double texture_amp = 0.015;
  const auto texture = random_field(rng, h, w, 2.0, 6.0);
  for (Eigen::Index p = 0; p < refl.cols(); ++p) {
    const double s = cv.cover[std::size_t(p)];
    for (int b = 0; b < kPhysicalBands; ++b) refl(b, p) = (1 - s) * bg_s[b] + s * fg_s[b];
    for (const auto& layer : extra) {
      // Extra layers sit under the main foreground.
      const double e = layer.cover[std::size_t(p)] * (1 - s);
      for (int b = 0; b < kPhysicalBands; ++b) refl(b, p) = (1 - e) * refl(b, p) + e * layer.spectrum[b];
    }
    refl.col(p).array() += texture_amp * (texture[std::size_t(p)] - 0.5);
  }
  return refl;
}

Matrix<double> area_downsample(const Matrix<double>& img, int h, int w, int factor) {
  const int oh = h / factor, ow = w / factor;
  Matrix<double> out = Matrix<double>::Zero(img.rows(), Eigen::Index(oh) * ow);
  const double inv = 1.0 / (factor * factor);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.col(Eigen::Index(y / factor) * ow + x / factor) += img.col(Eigen::Index(y) * w + x);
  return out * inv;
}

}  // namespace

Scene generate_scene(const SensorSuite& suite, int class_label, std::uint64_t rng_seed, SceneSize size,
                     int num_classes) {
  require(num_classes >= 1 && num_classes <= kMaxClasses, "generate_scene: num_classes must be in [1, 12]");
  require(class_label >= 0 && class_label < num_classes, "generate_scene: class_label out of range");
  require(size.height > 0 && size.width > 0, "generate_scene: size must be positive");
  for (const auto& s : suite.sensors())
    require(size.height % s.resolution_factor == 0 && size.width % s.resolution_factor == 0,
            "generate_scene: size not divisible by resolution_factor of sensor '" + s.name + "'");

  Rng rng(mix_seed(rng_seed, std::uint64_t(class_label)));
  const Matrix<double> refl = render_latent(class_label, rng, size.height, size.width);

  Scene scene;
  scene.class_label = class_label;
  scene.latent_seed = rng_seed;
  for (int si = 0; si < suite.size(); ++si) {
    const auto& sensor = suite.sensors()[si];
    const int f = sensor.resolution_factor;
    const int h = size.height / f, w = size.width / f;
    const Matrix<double> coarse = area_downsample(refl, size.height, size.width, f);
    const auto& mix = kBandMixing[std::size_t(si) % kBandMixing.size()];
    const double noise = kSensorNoise[std::size_t(si) % kSensorNoise.size()];

    // Acquisition conditions differ per look: overall gain, per-band gain and haze offset.
    const double gain = std::exp(uniform(rng, -0.3, 0.3));
    Matrix<float> look(sensor.bands, Eigen::Index(h) * w);
    std::normal_distribution<double> gauss(0.0, noise);
    for (int b = 0; b < sensor.bands; ++b) {
      const auto& row = mix[std::size_t(b) % kPhysicalBands];
      const double band_gain = gain * std::exp(uniform(rng, -0.08, 0.08));
      const double haze = uniform(rng, -0.02, 0.03);
      for (Eigen::Index p = 0; p < look.cols(); ++p) {
        double v = 0;
        for (int k = 0; k < kPhysicalBands; ++k) v += row[k] * coarse(k, p);
        look(b, p) = static_cast<float>(band_gain * v + haze + gauss(rng));
      }
    }
    scene.looks.push_back(std::move(look));
    scene.look_shapes.emplace_back(h, w);
  }
  return scene;
}

std::vector<Scene> generate_dataset(const SensorSuite& suite, int num_classes, int scenes_per_class,
                                    std::uint64_t rng_seed, SceneSize size) {
  require(num_classes >= 2, "generate_dataset: num_classes must be >= 2");
  require(scenes_per_class >= 1, "generate_dataset: scenes_per_class must be >= 1");
  const int total = num_classes * scenes_per_class;
  std::vector<Scene> out;
  out.reserve(std::size_t(total));
  for (int i = 0; i < total; ++i) {
    const int label = i % num_classes;
    Scene s = generate_scene(suite, label, mix_seed(rng_seed, std::uint64_t(i)), size, num_classes);
    char id[32];
    std::snprintf(id, sizeof id, "s%06d", i);
    s.scene_id = id;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fusion

Matrix<float> upsample_bilinear(const Matrix<float>& look, int in_h, int in_w, int out_h, int out_w) {
  require(look.cols() == Eigen::Index(in_h) * in_w, "upsample_bilinear: look does not match its shape");
  require(out_h >= 1 && out_w >= 1 && in_h >= 1 && in_w >= 1, "upsample_bilinear: empty shape");
  Matrix<float> out(look.rows(), Eigen::Index(out_h) * out_w);
  auto source = [](int i, int in, int out_n) {
    if (out_n == 1 || in == 1) return std::pair<int, double>{0, 0.0};
    const double pos = double(i) * (in - 1) / (out_n - 1);
    const int i0 = std::min(int(pos), in - 2);
    return std::pair<int, double>{i0, pos - i0};
  };
  for (int y = 0; y < out_h; ++y) {
    const auto [y0, fy] = source(y, in_h, out_h);
    const int y1 = std::min(y0 + 1, in_h - 1);
    for (int x = 0; x < out_w; ++x) {
      const auto [x0, fx] = source(x, in_w, out_w);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const auto c00 = look.col(Eigen::Index(y0) * in_w + x0).cast<double>();
      const auto c01 = look.col(Eigen::Index(y0) * in_w + x1).cast<double>();
      const auto c10 = look.col(Eigen::Index(y1) * in_w + x0).cast<double>();
      const auto c11 = look.col(Eigen::Index(y1) * in_w + x1).cast<double>();
      out.col(Eigen::Index(y) * out_w + x) =
          ((1 - fy) * ((1 - fx) * c00 + fx * c01) + fy * ((1 - fx) * c10 + fx * c11)).cast<float>();
    }
  }
  return out;
}

SceneTensor fuse_and_upsample(const Scene& scene, const SensorSuite& suite) {
  require(int(scene.looks.size()) == suite.size() && scene.look_shapes.size() == scene.looks.size(),
          "fuse_and_upsample: scene has " + std::to_string(scene.looks.size()) + " looks but suite has " +
              std::to_string(suite.size()) + " sensors");
  const auto [H, W] = scene.look_shapes[std::size_t(suite.finest_sensor())];
  SceneTensor out{FeatureMap<float>(suite.total_channels(), 1, H, W), suite};
  for (int si = 0; si < suite.size(); ++si) {
    const auto& sensor = suite.sensors()[si];
    const auto [h, w] = scene.look_shapes[std::size_t(si)];
    const auto& look = scene.looks[std::size_t(si)];
    require(look.rows() == sensor.bands && look.cols() == Eigen::Index(h) * w,
            "fuse_and_upsample: look " + std::to_string(si) + " does not match sensor '" + sensor.name + "'");
    require(h * sensor.resolution_factor == H && w * sensor.resolution_factor == W,
            "fuse_and_upsample: look " + std::to_string(si) + " extent inconsistent with resolution_factor");
    const auto [c0, c1] = suite.channel_range(si);
    out.data.data.middleRows(c0, c1 - c0) = (h == H && w == W) ? look : upsample_bilinear(look, h, w, H, W);
  }
  require(out.data.data.allFinite(), "fuse_and_upsample: non-finite values");
  return out;
}

}  // namespace csf
