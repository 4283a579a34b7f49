#pragma once

#include "csf/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace csf {

struct SensorSpec {
  std::string name;
  int bands = 4;
  int resolution_factor = 1;
};

/// Ordered sensors whose channels are laid out contiguously in declaration order.
class SensorSuite {
 public:
  SensorSuite() = default;
  explicit SensorSuite(std::vector<SensorSpec> sensors);

  [[nodiscard]] const std::vector<SensorSpec>& sensors() const { return sensors_; }
  [[nodiscard]] int size() const { return static_cast<int>(sensors_.size()); }
  [[nodiscard]] int total_channels() const { return total_channels_; }
  /// Half-open channel range [first, second) of sensor `index`.
  [[nodiscard]] std::pair<int, int> channel_range(int index) const;
  [[nodiscard]] int finest_sensor() const;

  bool operator==(const SensorSuite&) const;

 private:
  std::vector<SensorSpec> sensors_;
  int total_channels_ = 0;
};

bool operator==(const SensorSpec& a, const SensorSpec& b);

struct Scene {
  std::vector<Matrix<float>> looks;  // per sensor: [bands, h*w], pixel (y, x) at column y*w + x
  std::vector<std::pair<int, int>> look_shapes;  // per sensor: (h, w)
  int class_label = 0;
  std::string scene_id;
  std::uint64_t latent_seed = 0;
};

struct SceneTensor {
  FeatureMap<float> data;  // batch == 1, [C_total, H*W]
  SensorSuite suite;
};

struct SceneSize {
  int height = 48;
  int width = 48;
};

/// Number of scene classes the generator knows how to render.
inline constexpr int kMaxClasses = 12;

/// Three 4-band sensors at resolution factors 3, 2 and 1 (12 channels).
SensorSuite make_default_suite();

Scene generate_scene(const SensorSuite& suite, int class_label, std::uint64_t rng_seed,
                     SceneSize size = {}, int num_classes = kMaxClasses);

std::vector<Scene> generate_dataset(const SensorSuite& suite, int num_classes, int scenes_per_class,
                                    std::uint64_t rng_seed, SceneSize size = {});

/// Bilinear resize with aligned corners: output sample i maps to input
/// coordinate i * (in - 1) / (out - 1). Rows are bands, columns are pixels.
Matrix<float> upsample_bilinear(const Matrix<float>& look, int in_h, int in_w, int out_h, int out_w);

SceneTensor fuse_and_upsample(const Scene& scene, const SensorSuite& suite);

}  // namespace csf
