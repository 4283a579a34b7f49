#include "csf/views.hpp"

#include <algorithm>

namespace csf {

void ViewConfig::validate() const {
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "ViewConfig: dropout_rate must be in [0, 1)");
  require(crop_pixels >= 0, "ViewConfig: crop_pixels must be non-negative");
  require(jitter_limit >= 0.0 && jitter_limit < 1.0, "ViewConfig: jitter_limit must be in [0, 1)");
  require(!rotations.empty(), "ViewConfig: rotations must allow at least one angle");
  for (int r : rotations) require(r >= 0 && r <= 3, "ViewConfig: rotations are quarter turns in 0..3");
}

std::vector<bool> sample_channel_mask(int channels, double p, Rng& rng) {
  require(channels >= 1, "sample_channel_mask: channels must be >= 1");
  require(p >= 0.0 && p < 1.0, "sample_channel_mask: p must be in [0, 1)");
  std::vector<bool> mask(static_cast<std::size_t>(channels));
  for (;;) {
    bool any = false;
    for (int c = 0; c < channels; ++c) {
      mask[std::size_t(c)] = std::bernoulli_distribution(1.0 - p)(rng);
      any = any || mask[std::size_t(c)];
    }
    if (any) return mask;
  }
}

FeatureMap<float> apply_channel_dropout(const FeatureMap<float>& x, const std::vector<bool>& mask, double p) {
  require(int(mask.size()) == x.channels(), "apply_channel_dropout: mask length must equal channel count");
  require(std::find(mask.begin(), mask.end(), true) != mask.end(),
          "apply_channel_dropout: mask must retain at least one channel");
  require(p >= 0.0 && p < 1.0, "apply_channel_dropout: p must be in [0, 1)");
  FeatureMap<float> out = x;
  const float scale = static_cast<float>(1.0 / (1.0 - p));
  for (int c = 0; c < x.channels(); ++c) {
    if (mask[std::size_t(c)])
      out.data.row(c) *= scale;
    else
      out.data.row(c).setZero();
  }
  return out;
}

AugmentParams sample_augment(int channels, int height, int width, const ViewConfig& cfg, Rng& rng) {
  cfg.validate();
  require(cfg.crop_pixels < std::min(height, width), "augment: crop_pixels must be < min(H, W)");
  AugmentParams a;
  a.crop_h = height - cfg.crop_pixels;
  a.crop_w = width - cfg.crop_pixels;
  a.offset_y = std::uniform_int_distribution<int>(0, cfg.crop_pixels)(rng);
  a.offset_x = std::uniform_int_distribution<int>(0, cfg.crop_pixels)(rng);
  if (cfg.flips) {
    a.flip_h = std::bernoulli_distribution(0.5)(rng);
    a.flip_v = std::bernoulli_distribution(0.5)(rng);
  }
  a.quarter_turns = cfg.rotations[std::uniform_int_distribution<std::size_t>(0, cfg.rotations.size() - 1)(rng)];
  std::uniform_real_distribution<double> factor(1.0 - cfg.jitter_limit, 1.0 + cfg.jitter_limit);
  a.brightness.resize(std::size_t(channels));
  a.contrast.resize(std::size_t(channels));
  for (int c = 0; c < channels; ++c) {
    a.brightness[std::size_t(c)] = cfg.jitter_limit > 0 ? factor(rng) : 1.0;
    a.contrast[std::size_t(c)] = cfg.jitter_limit > 0 ? factor(rng) : 1.0;
  }
  return a;
}

FeatureMap<float> apply_augment(const FeatureMap<float>& x, const AugmentParams& a) {
  require(x.batch == 1, "augment: expects a single image");
  require(a.offset_y >= 0 && a.offset_x >= 0 && a.offset_y + a.crop_h <= x.height && a.offset_x + a.crop_w <= x.width,
          "augment: crop window outside the image");
  require(int(a.brightness.size()) == x.channels() && int(a.contrast.size()) == x.channels(),
          "augment: jitter factors must match channel count");
  const int h = a.crop_h, w = a.crop_w;
  const bool swap = a.quarter_turns % 2 == 1;
  FeatureMap<float> out(x.channels(), 1, swap ? w : h, swap ? h : w);

  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      int sy = a.flip_v ? h - 1 - y : y;
      int sx = a.flip_h ? w - 1 - xx : xx;
      int ch = h, cw = w;
      for (int t = 0; t < a.quarter_turns; ++t) {  // clockwise: (y, x) in ch x cw -> (x, ch - 1 - y) in cw x ch
        const int ny = sx, nx = ch - 1 - sy;
        sy = ny, sx = nx;
        std::swap(ch, cw);
      }
      out.data.col(out.column(0, sy, sx)) = x.data.col(x.column(0, a.offset_y + y, a.offset_x + xx));
    }
  }

  for (int c = 0; c < x.channels(); ++c) {
    auto row = out.data.row(c);
    const double mean = row.cast<double>().mean();
    const double f = a.contrast[std::size_t(c)], g = a.brightness[std::size_t(c)];
    row = ((row.cast<double>().array() - mean) * f + mean).matrix().cast<float>() * static_cast<float>(g);
  }
  return out;
}

FeatureMap<float> augment(const FeatureMap<float>& x, const ViewConfig& cfg, Rng& rng) {
  return apply_augment(x, sample_augment(x.channels(), x.height, x.width, cfg, rng));
}

View make_view(const SceneTensor& x, const ViewConfig& cfg, Rng& rng, const std::string& scene_id) {
  cfg.validate();
  require(x.data.data.allFinite(), "make_view: input must be finite");
  View v;
  v.channel_mask = sample_channel_mask(x.data.channels(), cfg.dropout_rate, rng);
  v.scale_factor = 1.0 / (1.0 - cfg.dropout_rate);
  v.data = augment(apply_channel_dropout(x.data, v.channel_mask, cfg.dropout_rate), cfg, rng);
  v.source_scene_id = scene_id;
  return v;
}

View inference_view(const SceneTensor& x, const std::set<int>& keep_channels, double train_p,
                    const std::string& scene_id) {
  require(!keep_channels.empty(), "inference_view: keep_channels must be non-empty");
  View v;
  v.channel_mask.assign(std::size_t(x.data.channels()), false);
  for (int c : keep_channels) {
    require(c >= 0 && c < x.data.channels(), "inference_view: channel index " + std::to_string(c) + " out of range");
    v.channel_mask[std::size_t(c)] = true;
  }
  v.scale_factor = 1.0 / (1.0 - train_p);
  v.data = apply_channel_dropout(x.data, v.channel_mask, train_p);
  v.source_scene_id = scene_id;
  return v;
}

}  // namespace csf
