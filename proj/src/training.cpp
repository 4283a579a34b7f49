#include "csf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace csf {

namespace fs = std::filesystem;

TrainState::TrainState(const ExperimentConfig& cfg)
    : encoder(cfg.encoder_config()), rng(mix_seed(cfg.run.seed, 0x76696577)) {
  optimizer.kind = cfg.optimizer.kind;
  for (const auto& p : encoder.params()) {
    optimizer.first.push_back(Matrix<float>::Zero(p.value.rows(), p.value.cols()));
    if (optimizer.kind == "adam") optimizer.second.push_back(Matrix<float>::Zero(p.value.rows(), p.value.cols()));
  }
}

FeatureMap<float> stack_views(const std::vector<View>& views) {
  require(!views.empty(), "stack_views: no views");
  const auto& first = views.front().data;
  FeatureMap<float> out(first.channels(), int(views.size()), first.height, first.width);
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& v = views[i].data;
    require(v.channels() == first.channels() && v.height == first.height && v.width == first.width,
            "stack_views: views must share one shape");
    out.element(int(i)) = v.data;
  }
  return out;
}

namespace {

double squared_norm(const std::vector<Matrix<float>>& m) {
  double s = 0;
  for (const auto& x : m) s += x.cast<double>().squaredNorm();
  return s;
}

std::string divergence_report(const TrainState& state, const StepMetrics& m, const LayerRepresentation<float>& r1,
                              const LayerRepresentation<float>& r2) {
  std::ostringstream o;
  o << "non-finite loss at step " << state.step << " (p=" << m.dropout_rate << ", lr=" << m.learning_rate << ")\n";
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    o << "  layer " << m.layers[i] << ": loss=" << m.per_layer_loss[i] << " |Z1|=" << r1.z[i].norm()
      << " |Z2|=" << r2.z[i].norm() << '\n';
  for (const auto& p : state.encoder.params()) o << "  " << p.name << " |w|=" << p.value.norm() << '\n';
  return o.str();
}

void apply_update(TrainState& state, std::vector<Matrix<float>>& grads, const OptimizerConfig& opt, double lr) {
  auto& params = state.encoder.mutable_params();
  auto& os = state.optimizer;
  ++os.updates;
  const float flr = static_cast<float>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix<float>& w = params[i].value;
    Matrix<float>& g = grads[i];
    if (opt.weight_decay > 0) g += static_cast<float>(opt.weight_decay) * w;
    if (os.kind == "adam") {
      const double b1 = opt.adam_beta1, b2 = opt.adam_beta2;
      os.first[i] = float(b1) * os.first[i] + float(1 - b1) * g;
      os.second[i] = float(b2) * os.second[i] + float(1 - b2) * g.cwiseProduct(g);
      const float c1 = float(1 - std::pow(b1, double(os.updates)));
      const float c2 = float(1 - std::pow(b2, double(os.updates)));
      w.array() -= flr * (os.first[i].array() / c1) /
                   ((os.second[i].array() / c2).sqrt() + static_cast<float>(opt.adam_epsilon));
    } else {
      os.first[i] = static_cast<float>(opt.momentum) * os.first[i] + g;
      w -= flr * os.first[i];
    }
  }
}

}  // namespace

StepMetrics train_step(TrainState& state, const std::vector<const SceneTensor*>& batch, const ExperimentConfig& cfg) {
  require(batch.size() >= 2, "train_step: batch size must be >= 2 for in-batch negatives");
  StepMetrics m;
  m.step = state.step;
  m.dropout_rate = dropout_schedule(state.step, cfg.schedule);
  m.learning_rate = lr_schedule(state.step, cfg.schedule);

  ViewConfig vc = cfg.views;
  vc.dropout_rate = m.dropout_rate;
  std::vector<View> first, second;
  first.reserve(batch.size());
  second.reserve(batch.size());
  for (const SceneTensor* scene : batch) {
    first.push_back(make_view(*scene, vc, state.rng));
    second.push_back(make_view(*scene, vc, state.rng));
  }

  const Encoder<float>& shared = state.encoder;
  const ForwardPass<float> pass1 = shared.forward(stack_views(first));
  const ForwardPass<float> pass2 = shared.forward(stack_views(second));
  m.view1_parameter_version = pass1.parameter_version;
  m.view2_parameter_version = pass2.parameter_version;
  if (pass1.parameter_version != pass2.parameter_version)
    throw std::logic_error("train_step: views encoded with different parameters");

  const auto r1 = shared.taps(pass1);
  const auto r2 = shared.taps(pass2);
  m.layers = r1.layers;
  const bool finite = std::all_of(r1.z.begin(), r1.z.end(), [](const auto& z) { return z.allFinite(); }) &&
                      std::all_of(r2.z.begin(), r2.z.end(), [](const auto& z) { return z.allFinite(); });
  if (!finite) {
    m.per_layer_loss.assign(m.layers.size(), std::nan(""));
    throw TrainingDiverged(divergence_report(state, m, r1, r2));
  }
  const TotalLoss<float> loss = total_loss<float, true>(r1, r2, cfg.weights());
  m.loss = loss.total;
  m.per_layer_loss.assign(loss.per_layer.begin(), loss.per_layer.end());
  if (!std::isfinite(m.loss)) throw TrainingDiverged(divergence_report(state, m, r1, r2));

  std::vector<Matrix<float>> grads = shared.backward(pass1, loss.dz1);
  const std::vector<Matrix<float>> grads2 = shared.backward(pass2, loss.dz2);
  for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += grads2[i];

  m.grad_norm = std::sqrt(squared_norm(grads));
  if (cfg.optimizer.grad_clip_norm > 0 && m.grad_norm > cfg.optimizer.grad_clip_norm) {
    const float s = static_cast<float>(cfg.optimizer.grad_clip_norm / m.grad_norm);
    for (auto& g : grads) g *= s;
  }
  apply_update(state, grads, cfg.optimizer, m.learning_rate);

  ++state.step;
  state.smoothed_loss = state.loss_count == 0 ? m.loss : 0.98 * state.smoothed_loss + 0.02 * m.loss;
  ++state.loss_count;
  return m;
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, std::int64_t step,
                                       std::uint64_t seed) {
  require(dataset_size >= 1 && batch_size >= 1, "batch_indices: empty dataset or batch");
  std::vector<std::size_t> out;
  std::int64_t cached_epoch = -1;
  std::vector<std::size_t> perm(dataset_size);
  for (int j = 0; j < batch_size; ++j) {
    const std::int64_t pos = step * batch_size + j;
    const std::int64_t epoch = pos / std::int64_t(dataset_size);
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t(0));
      Rng rng(mix_seed(seed, 0x65706f6368ULL + std::uint64_t(epoch)));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[std::size_t(pos % std::int64_t(dataset_size))]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loop

namespace {

std::string metrics_header(const std::vector<int>& layers) {
  std::string h = "step,loss";
  for (int l : layers) h += ",loss_layer" + std::to_string(l);
  return h + ",p,lr,wall_time";
}

std::string metrics_row(const StepMetrics& m, double wall) {
  char buf[64];
  std::string row = std::to_string(m.step);
  auto add = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.9g", v);
    row += buf;
  };
  add(m.loss);
  for (double l : m.per_layer_loss) add(l);
  add(m.dropout_rate);
  add(m.learning_rate);
  std::snprintf(buf, sizeof buf, ",%.3f", wall);
  return row + buf;
}

// Keeps the header and rows for steps < `upto`.
void truncate_metrics(const fs::path& file, const std::string& header, std::int64_t upto) {
  std::vector<std::string> keep{header};
  if (std::ifstream in(file); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find(','))) < upto) keep.push_back(line);
    }
  }
  std::ofstream out(file, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
  if (!out) throw CheckpointError("cannot write " + file.string());
}

}  // namespace

TrainState train_loop(const std::vector<SceneTensor>& dataset, const ExperimentConfig& cfg,
                      const TrainLoopOptions& options) {
  cfg.validate();
  require(!dataset.empty(), "train_loop: dataset is empty");
  require(dataset.size() >= 2, "train_loop: need at least two scenes for in-batch negatives");
  std::error_code ec;
  fs::create_directories(options.run_dir / "checkpoints", ec);
  if (ec) throw CheckpointError("cannot create run directory " + options.run_dir.string() + ": " + ec.message());

  {
    std::ofstream c(options.run_dir / "config.ini", std::ios::trunc);
    c << cfg.to_text();
    if (!c) throw CheckpointError("cannot write config.ini in " + options.run_dir.string());
  }

  std::optional<TrainState> state;
  if (options.resume) {
    if (auto latest = latest_checkpoint(options.run_dir)) state.emplace(load_checkpoint(*latest, cfg));
  }
  const bool fresh = !state.has_value();
  if (fresh) state.emplace(cfg);

  const fs::path metrics_file = options.run_dir / "metrics.csv";
  truncate_metrics(metrics_file, metrics_header(cfg.encoder.loss_layers), fresh ? 0 : state->step);
  if (fresh) save_checkpoint(*state, cfg, checkpoint_path(options.run_dir, 0));

  std::ofstream metrics(metrics_file, std::ios::app);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<const SceneTensor*> batch;
  while (state->step < cfg.schedule.total_steps) {
    batch.clear();
    for (std::size_t i : batch_indices(dataset.size(), cfg.schedule.batch_size, state->step, cfg.run.seed))
      batch.push_back(&dataset[i]);
    StepMetrics m;
    try {
      m = train_step(*state, batch, cfg);
    } catch (const TrainingDiverged& e) {
      std::ofstream dump(options.run_dir / "diverged.txt", std::ios::trunc);
      dump << e.what();
      throw;
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics << metrics_row(m, wall) << '\n';
    metrics.flush();
    if (!metrics) throw CheckpointError("cannot append to " + metrics_file.string());
    if (options.on_step) options.on_step(m);
    if (state->step % cfg.run.checkpoint_every == 0 || state->step == cfg.schedule.total_steps)
      save_checkpoint(*state, cfg, checkpoint_path(options.run_dir, state->step));
  }
  return std::move(*state);
}

}  // namespace csf
