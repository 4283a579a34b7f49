#include "csf/training.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace csf;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.scenes.num_classes = 4;
  cfg.scenes.scenes_per_class = 3;
  cfg.scenes.size = {24, 24};
  cfg.views.crop_pixels = 4;
  cfg.encoder.stack_widths = {8, 8, 16};
  cfg.encoder.blocks_per_stack = {1, 1, 1};
  cfg.encoder.loss_layers = {1, 2};
  cfg.encoder.norm_groups = 4;
  cfg.schedule.batch_size = 4;
  cfg.schedule.total_steps = 6;
  cfg.schedule.dropout_ramp_steps = 4;
  cfg.schedule.lr_warmup_steps = 2;
  cfg.run.checkpoint_every = 3;
  return cfg;
}

std::vector<SceneTensor> tensors(const ExperimentConfig& cfg) {
  const SensorSuite suite = make_default_suite();
  std::vector<SceneTensor> out;
  for (const Scene& s : generate_dataset(suite, cfg.scenes.num_classes, cfg.scenes.scenes_per_class, cfg.scenes.seed,
                                         cfg.scenes.size))
    out.push_back(fuse_and_upsample(s, suite));
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("csf_test_" + name);
  fs::remove_all(p);
  return p;
}

void check_same_params(const Encoder<float>& a, const Encoder<float>& b) {
  REQUIRE(a.params().size() == b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].value == b.params()[i].value);
}

std::vector<std::string> lines_without_wall_time(const fs::path& file) {
  std::ifstream in(file);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line.substr(0, line.rfind(',')));
  return out;
}

}  // namespace

TEST_CASE("schedules follow their closed forms") {
  TrainSchedule s;
  s.dropout_ramp_steps = 80;
  s.dropout_final = 0.66;
  s.lr_warmup_steps = 30;
  s.base_lr = 0.1;
  for (int step = 0; step <= 2 * s.dropout_ramp_steps; ++step) {
    const double p = step >= 80 ? 0.66 : 0.66 * step / 80.0;
    const double lr = step >= 30 ? 0.1 : 0.1 * step / 30.0;
    CHECK(dropout_schedule(step, s) == doctest::Approx(p).epsilon(1e-12));
    CHECK(lr_schedule(step, s) == doctest::Approx(lr).epsilon(1e-12));
  }
  CHECK(dropout_schedule(0, s) == 0.0);
  CHECK(lr_schedule(0, s) == 0.0);
  CHECK_THROWS_AS(dropout_schedule(-1, s), ContractError);

  TrainSchedule paper;
  paper.dropout_ramp_steps = 8000;
  paper.lr_warmup_steps = 3000;
  paper.base_lr = 0.1;
  CHECK(dropout_schedule(4000, paper) == doctest::Approx(0.33));
  CHECK(dropout_schedule(20000, paper) == doctest::Approx(0.66));
  CHECK(lr_schedule(1500, paper) == doctest::Approx(0.05));
  CHECK(lr_schedule(3000, paper) == 0.1);
  CHECK(lr_schedule(9000, paper) == 0.1);
}

TEST_CASE("batch indices walk through per-epoch permutations") {
  const auto a = batch_indices(10, 4, 0, 7), b = batch_indices(10, 4, 1, 7), c = batch_indices(10, 4, 2, 7);
  CHECK(a.size() == 4);
  CHECK(a == batch_indices(10, 4, 0, 7));
  CHECK(a != batch_indices(10, 4, 0, 8));
  // 10 scenes, batch 4: steps 0 and 1 use 8 distinct scenes from epoch 0.
  std::set<std::size_t> seen(a.begin(), a.end());
  seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 8);
  for (std::size_t i : c) CHECK(i < 10);
  std::set<std::size_t> epoch;
  for (int step = 0; step < 5; ++step)
    for (std::size_t i : batch_indices(20, 4, step, 3)) epoch.insert(i);
  CHECK(epoch.size() == 20);
}

TEST_CASE("train_step mechanics") {
  const ExperimentConfig cfg = small_config();
  const auto data = tensors(cfg);
  std::vector<const SceneTensor*> batch{&data[0], &data[3], &data[6], &data[9]};

  TrainState a(cfg), b(cfg);
  const StepMetrics m0 = train_step(a, batch, cfg);
  CHECK(m0.step == 0);
  CHECK(m0.dropout_rate == 0.0);
  CHECK(m0.learning_rate == 0.0);
  CHECK(m0.view1_parameter_version == m0.view2_parameter_version);
  CHECK(a.step == 1);
  CHECK(std::isfinite(m0.loss));
  CHECK(m0.loss >= 0.0);
  CHECK(m0.per_layer_loss.size() == 2);
  CHECK(m0.loss == doctest::Approx(m0.per_layer_loss[0] + 2 * m0.per_layer_loss[1]).epsilon(1e-5));

  const StepMetrics m1 = train_step(a, batch, cfg);
  CHECK(m1.dropout_rate == doctest::Approx(0.66 / 4));
  CHECK(m1.view1_parameter_version == m1.view2_parameter_version);
  CHECK(a.step == 2);

  train_step(b, batch, cfg);
  train_step(b, batch, cfg);
  check_same_params(a.encoder, b.encoder);
  CHECK(a.smoothed_loss == b.smoothed_loss);

  CHECK_THROWS_AS(train_step(a, {&data[0]}, cfg), ContractError);
}

TEST_CASE("identical scenes are mutually confusable at initialization") {
  // Every view in the batch comes from the same scene, so no pairing can be
  // preferred: the expected loss is about 2 log B per unit weight.
  ExperimentConfig cfg;
  const SensorSuite suite = make_default_suite();
  const int B = 8;
  double mean = 0;
  for (int seed = 0; seed < 10; ++seed) {
    cfg.run.seed = std::uint64_t(seed);
    const SceneTensor t = fuse_and_upsample(generate_scene(suite, seed % 12, std::uint64_t(100 + seed)), suite);
    const std::vector<const SceneTensor*> batch(B, &t);
    TrainState state(cfg);
    mean += train_step(state, batch, cfg).loss / 10;
  }
  const double chance = 2 * std::log(double(B)) * cfg.weights().sum();
  CHECK(std::abs(mean - chance) < 0.05 * chance);
}

TEST_CASE("non-finite parameters abort the step") {
  const ExperimentConfig cfg = small_config();
  const auto data = tensors(cfg);
  TrainState state(cfg);
  state.encoder.mutable_params()[0].value(0, 0) = std::nanf("");
  CHECK_THROWS_AS(train_step(state, {&data[0], &data[1]}, cfg), TrainingDiverged);
  CHECK(state.step == 0);
}

TEST_CASE("train_loop with zero steps writes the initial state") {
  ExperimentConfig cfg = small_config();
  cfg.schedule.total_steps = 0;
  const fs::path dir = fresh_dir("zero_steps");
  const TrainState s = train_loop(tensors(cfg), cfg, {dir});
  CHECK(s.step == 0);
  check_same_params(s.encoder, TrainState(cfg).encoder);
  CHECK(fs::exists(checkpoint_path(dir, 0)));
  CHECK(fs::exists(dir / "config.ini"));
  CHECK(lines_without_wall_time(dir / "metrics.csv").size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("train_loop is reproducible and resumable") {
  const ExperimentConfig cfg = small_config();
  const auto data = tensors(cfg);
  const fs::path d1 = fresh_dir("run_a"), d2 = fresh_dir("run_b"), d3 = fresh_dir("run_c");

  const TrainState a = train_loop(data, cfg, {d1});
  CHECK(a.step == 6);
  CHECK(fs::exists(checkpoint_path(d1, 3)));
  CHECK(fs::exists(checkpoint_path(d1, 6)));
  CHECK(latest_checkpoint(d1) == checkpoint_path(d1, 6));

  const TrainState b = train_loop(data, cfg, {d2});
  check_same_params(a.encoder, b.encoder);
  const auto rows = lines_without_wall_time(d1 / "metrics.csv");
  CHECK(rows == lines_without_wall_time(d2 / "metrics.csv"));
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] == "step,loss,loss_layer1,loss_layer2,p,lr");

  ExperimentConfig shorter = cfg;
  shorter.schedule.total_steps = 4;
  train_loop(data, shorter, {d3});
  // Pretend the run stopped at step 3: drop the final checkpoint.
  fs::remove(checkpoint_path(d3, 4));
  TrainLoopOptions resume{d3};
  resume.resume = true;
  const TrainState c = train_loop(data, cfg, resume);
  CHECK(c.step == 6);
  check_same_params(a.encoder, c.encoder);
  CHECK(c.smoothed_loss == a.smoothed_loss);
  CHECK(lines_without_wall_time(d3 / "metrics.csv") == rows);

  for (const auto& d : {d1, d2, d3}) fs::remove_all(d);
}

TEST_CASE("checkpoint round trip and failure modes") {
  ExperimentConfig cfg = small_config();
  cfg.optimizer.kind = "adam";
  const auto data = tensors(cfg);
  TrainState state(cfg);
  train_step(state, {&data[0], &data[1], &data[2]}, cfg);
  train_step(state, {&data[3], &data[4], &data[5]}, cfg);

  const fs::path dir = fresh_dir("ckpt");
  fs::create_directories(dir);
  const fs::path file = dir / "state.ckpt";
  save_checkpoint(state, cfg, file);
  TrainState back = load_checkpoint(file, cfg);
  CHECK(back.step == 2);
  check_same_params(state.encoder, back.encoder);
  CHECK(back.optimizer.kind == "adam");
  CHECK(back.optimizer.updates == state.optimizer.updates);
  REQUIRE(back.optimizer.second.size() == state.optimizer.second.size());
  for (std::size_t i = 0; i < back.optimizer.first.size(); ++i) {
    CHECK(back.optimizer.first[i] == state.optimizer.first[i]);
    CHECK(back.optimizer.second[i] == state.optimizer.second[i]);
  }
  CHECK(back.smoothed_loss == state.smoothed_loss);
  CHECK(back.rng() == state.rng());
  CHECK(checkpoint_config(file).to_text() == cfg.to_text());

  ExperimentConfig altered = cfg;
  altered.encoder.stack_widths = {8, 8, 32};
  CHECK_THROWS_AS(load_checkpoint(file, altered), CheckpointError);
  altered = cfg;
  altered.run.seed = 99;  // different initialization seed
  CHECK_THROWS_AS(load_checkpoint(file, altered), CheckpointError);

  const auto full = fs::file_size(file);
  fs::copy_file(file, dir / "cut.ckpt");
  fs::resize_file(dir / "cut.ckpt", full / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt", cfg), CheckpointError);
  {
    std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
    junk << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt", cfg), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt", cfg), CheckpointError);
  fs::remove_all(dir);
}
