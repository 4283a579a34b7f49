#pragma once

#include "csf/config.hpp"
#include "csf/encoder.hpp"
#include "csf/loss.hpp"
#include "csf/views.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace csf {

struct OptimizerState {
  std::string kind;
  std::int64_t updates = 0;
  std::vector<Matrix<float>> first;   // momentum velocity, or Adam first moment
  std::vector<Matrix<float>> second;  // Adam second moment; empty for SGD
};

struct TrainState {
  std::int64_t step = 0;
  Encoder<float> encoder;
  OptimizerState optimizer;
  Rng rng;
  double smoothed_loss = 0.0;  // exponential moving average, 0.98 decay
  std::int64_t loss_count = 0;

  explicit TrainState(const ExperimentConfig& cfg);
};

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0;
  std::vector<int> layers;
  std::vector<double> per_layer_loss;
  double dropout_rate = 0;
  double learning_rate = 0;
  double grad_norm = 0;
  std::uint64_t view1_parameter_version = 0;
  std::uint64_t view2_parameter_version = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Stacks the views of one step into a single encoder batch.
FeatureMap<float> stack_views(const std::vector<View>& views);

/// One optimization step on a batch of fused scenes.
StepMetrics train_step(TrainState& state, const std::vector<const SceneTensor*>& batch, const ExperimentConfig& cfg);

/// Scene indices used at `step`: consecutive slices of per-epoch permutations
/// seeded by (seed, epoch), so batch order depends only on the step.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, std::int64_t step, std::uint64_t seed);

struct TrainLoopOptions {
  std::filesystem::path run_dir;
  bool resume = false;
  std::function<void(const StepMetrics&)> on_step;  // progress hook
};

/// Runs train_step until cfg.schedule.total_steps. Writes `metrics.csv`,
/// `config.ini` and checkpoints under run_dir/checkpoints/.
TrainState train_loop(const std::vector<SceneTensor>& dataset, const ExperimentConfig& cfg,
                      const TrainLoopOptions& options);

// ---------------------------------------------------------------------------
// Checkpoints

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const TrainState& state, const ExperimentConfig& cfg, const std::filesystem::path& path);

/// Loads a checkpoint; the stored encoder config must equal cfg.encoder_config().
TrainState load_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Stored experiment config of a checkpoint (for tools that only need the encoder).
ExperimentConfig checkpoint_config(const std::filesystem::path& path);

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::int64_t step);
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

}  // namespace csf
