#pragma once

#include "csf/encoder.hpp"
#include "csf/loss.hpp"
#include "csf/scenes.hpp"
#include "csf/views.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace csf {

struct SceneConfig {
  int num_classes = 12;
  int scenes_per_class = 50;
  SceneSize size{48, 48};
  std::uint64_t seed = 1;
};

/// Curriculum and optimization lengths. Defaults are one tenth of the
/// reference 8000 / 3000 batch ramps.
struct TrainSchedule {
  int dropout_ramp_steps = 800;
  double dropout_final = 0.66;
  int lr_warmup_steps = 300;
  double base_lr = 0.02;
  int total_steps = 1000;
  int batch_size = 64;

  void validate() const;
};

/// p = dropout_final * min(1, step / dropout_ramp_steps)
double dropout_schedule(std::int64_t step, const TrainSchedule& sched);
/// lr = base_lr * min(1, step / lr_warmup_steps), constant afterwards.
double lr_schedule(std::int64_t step, const TrainSchedule& sched);

struct OptimizerConfig {
  std::string kind = "momentum_sgd";  // or "adam"
  double momentum = 0.9;
  double weight_decay = 0.0;
  double grad_clip_norm = 5.0;  // 0 disables clipping
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int checkpoint_every = 250;
};

struct EvalConfig {
  std::uint64_t seed = 1001;  // held-out scene seed
  int scenes_per_class = 50;
  int k = 10;
  int max_k = 30;
  int pca_components = 128;
  int plot_components = 200;  // capped at min(N, D)
  std::string distance = "euclidean";
  int top_n = 10;
  int component_index = 0;
  int batch_size = 64;
};

struct ExperimentConfig {
  SceneConfig scenes;
  ViewConfig views;
  EncoderConfig encoder;
  std::vector<double> loss_weights{1.0, 2.0};  // aligned with encoder.loss_layers
  TrainSchedule schedule;
  OptimizerConfig optimizer;
  RunConfig run;
  EvalConfig eval;

  ExperimentConfig();
  void validate() const;
  [[nodiscard]] LossWeights weights() const;
  /// Encoder config with its seed derived from the run seed.
  [[nodiscard]] EncoderConfig encoder_config() const;
  /// Canonical `[section]` / `key = value` text; parse(to_text()) == *this.
  [[nodiscard]] std::string to_text() const;
  /// Hash of the canonical text minus run length and run seed: identifies a run family.
  [[nodiscard]] std::uint64_t identity_hash() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// All recognized keys as `section.key`.
std::vector<std::string> config_keys();

/// Sets one key from its text value; throws ConfigError naming the key and the nearest valid key.
void set_config_value(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

std::size_t edit_distance(const std::string& a, const std::string& b);
std::string nearest_key(const std::string& unknown);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace csf
