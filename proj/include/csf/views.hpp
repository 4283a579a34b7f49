#pragma once

#include "csf/scenes.hpp"

#include <random>
#include <set>
#include <string>
#include <vector>

namespace csf {

using Rng = std::mt19937_64;

/// Rotation counts in quarter turns (0..3).
struct ViewConfig {
  double dropout_rate = 0.0;
  int crop_pixels = 12;
  double jitter_limit = 0.25;
  std::vector<int> rotations{0, 1, 2, 3};
  bool flips = true;

  void validate() const;
};

struct View {
  FeatureMap<float> data;  // batch == 1
  std::vector<bool> channel_mask;
  double scale_factor = 1.0;
  std::string source_scene_id;
};

/// Per-channel Bernoulli(1 - p) retention; all-dropped draws are resampled.
std::vector<bool> sample_channel_mask(int channels, double p, Rng& rng);

/// Zeroes channels with a false mask entry and scales the rest by 1 / (1 - p).
FeatureMap<float> apply_channel_dropout(const FeatureMap<float>& x, const std::vector<bool>& mask, double p);

/// One draw of the pixel-space augmentation.
struct AugmentParams {
  int offset_y = 0;
  int offset_x = 0;
  int crop_h = 0;  // cropped extent before rotation
  int crop_w = 0;
  bool flip_h = false;
  bool flip_v = false;
  int quarter_turns = 0;  // clockwise, applied after the flips
  std::vector<double> brightness;
  std::vector<double> contrast;
};

AugmentParams sample_augment(int channels, int height, int width, const ViewConfig& cfg, Rng& rng);
FeatureMap<float> apply_augment(const FeatureMap<float>& x, const AugmentParams& params);

/// Random crop to (H - crop_pixels, W - crop_pixels), a random element of the
/// allowed rotation/flip group, then per-channel contrast `x <- mean + f (x - mean)`
/// and brightness `x <- g x` with f, g uniform in [1 - j, 1 + j].
FeatureMap<float> augment(const FeatureMap<float>& x, const ViewConfig& cfg, Rng& rng);

/// mask -> dropout -> augment.
View make_view(const SceneTensor& x, const ViewConfig& cfg, Rng& rng, const std::string& scene_id = {});

/// Deterministic evaluation view: channels outside `keep_channels` zeroed,
/// retained channels scaled by 1 / (1 - train_p), no augmentation.
View inference_view(const SceneTensor& x, const std::set<int>& keep_channels, double train_p,
                    const std::string& scene_id = {});

}  // namespace csf
