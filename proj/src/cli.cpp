#include "csf/cli.hpp"

#include "csf/config.hpp"
#include "csf/dataset_io.hpp"
#include "csf/eval.hpp"
#include "csf/plot.hpp"
#include "csf/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

namespace csf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

template <typename F>
int guarded(std::ostream& out, std::ostream& err, F&& body) {
  auto fail = [&](int code, const char* kind, const std::string& what) {
    out.flush();
    err << "error: " << kind << ": " << one_line(what) << std::endl;
    return code;
  };
  try {
    body();
    return kOk;
  } catch (const UsageError& e) {
    return fail(kUsage, "usage", e.what());
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const DatasetIoError& e) {
    return fail(kData, "dataset", e.what());
  } catch (const CheckpointError& e) {
    return fail(kCheckpoint, "checkpoint", e.what());
  } catch (const TrainingDiverged& e) {
    return fail(kDiverged, "diverged", e.what());
  } catch (const ContractError& e) {
    return fail(kConfig, "invalid", e.what());
  } catch (const std::exception& e) {
    return fail(kInternal, "internal", e.what());
  }
}

ExperimentConfig base_config(const CommandOptions& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Lists only artifacts that exist, relative to `dir`.
void write_manifest(const fs::path& dir, const ExperimentConfig& cfg, const std::vector<fs::path>& artifacts,
                    const json& extra = json::object()) {
  json m;
  m["config_hash"] = hex(cfg.identity_hash());
  m["seed"] = cfg.run.seed;
  m["created_at"] = timestamp();
  m["artifacts"] = json::array();
  for (const auto& a : artifacts) {
    if (!fs::exists(a)) throw std::runtime_error("artifact missing after run: " + a.string());
    m["artifacts"].push_back(fs::relative(a, dir).generic_string());
  }
  for (auto it = extra.begin(); it != extra.end(); ++it) m[it.key()] = it.value();
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  f << m.dump(2) << '\n';
  if (!f) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

Dataset require_dataset(const CommandOptions& o, const ExperimentConfig& cfg) {
  if (o.dataset.empty()) throw UsageError("--dataset is required");
  if (!fs::exists(o.dataset / "manifest.txt"))
    throw DatasetIoError("no dataset at " + o.dataset.string() + " (manifest.txt missing)");
  Dataset d = load_dataset(o.dataset);
  if (d.suite.total_channels() != cfg.encoder.input_channels)
    throw ConfigError("dataset has " + std::to_string(d.suite.total_channels()) + " channels but the encoder expects " +
                      std::to_string(cfg.encoder.input_channels));
  return d;
}

}  // namespace

std::set<int> parse_subset(const std::string& text) {
  std::set<int> out;
  std::string t = text;
  for (char& c : t)
    if (c == ',') c = ' ';
  std::istringstream in(t);
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || v < 0) throw UsageError("--subset: '" + tok + "' is not a channel index");
    out.insert(v);
  }
  if (out.empty()) throw UsageError("--subset is empty");
  return out;
}

int cmd_generate(const CommandOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(out, err, [&] {
    ExperimentConfig cfg = base_config(o);
    if (o.out.empty()) throw UsageError("--out is required");
    if (o.split != "train" && o.split != "eval") throw UsageError("--split must be 'train' or 'eval'");
    const bool eval = o.split == "eval";
    if (o.seed) (eval ? cfg.eval.seed : cfg.scenes.seed) = *o.seed;
    cfg.validate();
    Dataset d;
    d.suite = make_default_suite();
    d.size = cfg.scenes.size;
    d.num_classes = cfg.scenes.num_classes;
    d.scenes = generate_dataset(d.suite, cfg.scenes.num_classes,
                                eval ? cfg.eval.scenes_per_class : cfg.scenes.scenes_per_class,
                                eval ? cfg.eval.seed : cfg.scenes.seed, cfg.scenes.size);
    save_dataset(d, o.out);
    out << "generated " << d.scenes.size() << " scenes (" << o.split << " split) in " << o.out.string() << '\n';
  });
}

int cmd_train(const CommandOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(out, err, [&] {
    ExperimentConfig cfg = base_config(o);
    if (o.out.empty()) throw UsageError("--out is required");
    if (o.seed) cfg.run.seed = *o.seed;
    if (o.steps) cfg.schedule.total_steps = *o.steps;
    cfg.validate();
    const Dataset d = require_dataset(o, cfg);
    std::vector<SceneTensor> tensors;
    tensors.reserve(d.scenes.size());
    for (const auto& s : d.scenes) tensors.push_back(fuse_and_upsample(s, d.suite));

    const fs::path run_dir = o.out / ("run-" + hex(cfg.identity_hash()) + "-seed" + std::to_string(cfg.run.seed));
    out << "run_dir " << run_dir.string() << '\n';
    TrainLoopOptions loop;
    loop.run_dir = run_dir;
    loop.resume = o.resume;
    loop.on_step = [&](const StepMetrics& m) {
      if (m.step % 50 == 0)
        out << "step " << m.step << " loss " << m.loss << " p " << m.dropout_rate << " lr " << m.learning_rate << '\n'
            << std::flush;
    };
    const TrainState state = train_loop(tensors, cfg, loop);
    out << "finished at step " << state.step << " smoothed_loss " << state.smoothed_loss << '\n';

    std::vector<fs::path> artifacts{run_dir / "config.ini", run_dir / "metrics.csv"};
    for (std::int64_t s = 0; s <= state.step; ++s)
      if (fs::exists(checkpoint_path(run_dir, s))) artifacts.push_back(checkpoint_path(run_dir, s));
    json extra;
    extra["final_step"] = state.step;
    extra["smoothed_loss"] = state.smoothed_loss;
    extra["dataset"] = fs::absolute(o.dataset).string();
    write_manifest(run_dir, cfg, artifacts, extra);
  });
}

int cmd_eval(const CommandOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(out, err, [&] {
    if (o.out.empty()) throw UsageError("--out is required");
    if (o.checkpoint.empty() && !o.init_only) throw UsageError("--checkpoint is required unless --init-only is given");
    ExperimentConfig cfg;
    if (o.config.empty() && !o.checkpoint.empty()) {
      cfg = checkpoint_config(o.checkpoint);
      for (const auto& kv : o.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
    } else {
      cfg = base_config(o);
    }
    if (o.seed) cfg.run.seed = *o.seed;
    if (o.k) cfg.eval.k = *o.k;
    cfg.validate();
    const Dataset d = require_dataset(o, cfg);

    const TrainState state = o.init_only ? TrainState(cfg) : load_checkpoint(o.checkpoint, cfg);
    const Encoder<float>& enc = state.encoder;
    const double train_p = cfg.schedule.dropout_final;

    std::vector<std::set<int>> subsets;
    if (o.subset) {
      for (int c : *o.subset)
        if (c >= d.suite.total_channels())
          throw UsageError("--subset: channel " + std::to_string(c) + " outside [0, " +
                           std::to_string(d.suite.total_channels()) + ")");
      subsets.push_back(*o.subset);
    } else {
      subsets = default_subset_ladder(d.suite);
    }

    std::error_code ec;
    fs::create_directories(o.out, ec);
    if (ec) throw std::runtime_error("cannot create " + o.out.string() + ": " + ec.message());

    SweepOptions so;
    so.k = cfg.eval.k;
    so.pca_components = cfg.eval.pca_components;
    so.train_p = train_p;
    so.batch_size = cfg.eval.batch_size;
    so.num_classes = d.num_classes;
    std::vector<EmbeddingTable> reduced;
    const SweepResult sweep = channel_sweep(enc, d.scenes, d.suite, subsets, so, &reduced);
    sweep.write_csv(o.out / "sweep.csv");
    for (const auto& r : sweep.rows)
      out << "channels [" << r.description << "] neighbor_fraction " << r.neighbor_fraction << " knn_accuracy "
          << r.knn_accuracy << '\n';

    const int max_k = std::min<int>(cfg.eval.max_k, int(d.scenes.size()) - 1);
    std::vector<std::vector<KSweepRow>> curves;
    std::vector<std::string> names;
    {
      std::ofstream kf(o.out / "k_sweep.csv", std::ios::trunc);
      kf << "channels,k,neighbor_fraction,knn_accuracy\n";
      for (std::size_t i = 0; i < reduced.size(); ++i) {
        curves.push_back(k_sweep(reduced[i], max_k));
        names.push_back(std::to_string(reduced[i].channel_subset.size()) + " channels");
        for (const auto& r : curves.back()) {
          char buf[96];
          std::snprintf(buf, sizeof buf, ",%d,%.6f,%.6f\n", r.k, r.neighbor_fraction, r.knn_accuracy);
          kf << '"' << sweep.rows[i].description << '"' << buf;
        }
      }
      if (!kf) throw std::runtime_error("cannot write k_sweep.csv");
    }

    // Maximal activations: principal directions of the widest subset, probed per sensor.
    const std::set<int>& widest = *std::max_element(
        subsets.begin(), subsets.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
    const EmbeddingTable full = embed_dataset(enc, d.scenes, d.suite, widest, train_p, d.num_classes, so.batch_size);
    Pca pca;
    pca_reduce(full, int(std::min<Eigen::Index>(cfg.eval.pca_components, std::min(full.size(), full.vectors.cols()))),
               &pca);
    const auto sensors = single_sensor_subsets(d.suite);
    const int top_n = std::min<int>(cfg.eval.top_n, int(d.scenes.size()));
    const auto lists =
        maximal_activations(enc, d.scenes, d.suite, pca, cfg.eval.component_index, sensors, top_n, train_p,
                            so.batch_size);
    const OverlapTest overlap = overlap_permutation_test(lists, d.scenes.size(), 1000, mix_seed(cfg.run.seed, 0x6f76));
    {
      std::ofstream mf(o.out / "maximal_activations.csv", std::ios::trunc);
      mf << "sensor,rank,scene_id\n";
      for (std::size_t s = 0; s < lists.size(); ++s)
        for (std::size_t r = 0; r < lists[s].size(); ++r)
          mf << d.suite.sensors()[s].name << ',' << r + 1 << ',' << lists[s][r] << '\n';
      if (!mf) throw std::runtime_error("cannot write maximal_activations.csv");
    }
    out << "maximal activations: overlap " << overlap.observed << " (null mean " << overlap.null_mean << ", p "
        << overlap.p_value << ")\n";

    const PlotFiles plots = plot_artifacts(full, sweep, curves, names, o.out / "plots", cfg.eval.plot_components,
                                           cfg.run.seed);
    {
      std::ofstream c(o.out / "config.ini", std::ios::trunc);
      c << cfg.to_text();
    }
    json extra;
    extra["checkpoint"] = o.init_only ? std::string("init-only") : fs::absolute(o.checkpoint).string();
    extra["dataset"] = fs::absolute(o.dataset).string();
    extra["overlap"] = {{"observed", overlap.observed}, {"null_mean", overlap.null_mean}, {"p_value", overlap.p_value}};
    write_manifest(o.out, cfg,
                   {o.out / "config.ini", o.out / "sweep.csv", o.out / "k_sweep.csv", o.out / "maximal_activations.csv",
                    plots.embedding, plots.channels, plots.k_curve},
                   extra);
  });
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-sensor contrastive pretraining on synthetic scenes"};
  app.require_subcommand(1);
  CommandOptions o;
  std::string subset;
  std::uint64_t seed = 0;
  int steps = 0, k = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI config file");
    sub->add_option("--out", o.out, "Output directory")->required();
    sub->add_option("--set", o.overrides, "Override a config key: section.key=value")->take_all();
  };
  CLI::App* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  common(gen);
  gen->add_option("--seed", seed, "Scene seed (overrides scenes.seed or eval.seed)");
  gen->add_option("--split", o.split, "train or eval")->check(CLI::IsMember({"train", "eval"}));

  CLI::App* train = app.add_subcommand("train", "Train the encoder");
  common(train);
  train->add_option("--dataset", o.dataset, "Dataset directory")->required();
  train->add_option("--seed", seed, "Run seed");
  train->add_option("--steps", steps, "Total steps")->check(CLI::NonNegativeNumber);
  train->add_flag("--resume", o.resume, "Continue from the latest checkpoint in the run directory");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate an encoder");
  common(ev);
  ev->add_option("--dataset", o.dataset, "Held-out dataset directory")->required();
  ev->add_option("--checkpoint", o.checkpoint, "Checkpoint file");
  ev->add_option("--seed", seed, "Run seed (initial weights for --init-only)");
  ev->add_option("--subset", subset, "Evaluate a single channel subset, e.g. \"0 1 2\"");
  ev->add_option("--k", k, "Neighbors for the metrics")->check(CLI::PositiveNumber);
  ev->add_flag("--init-only", o.init_only, "Use randomly initialized weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::string what = e.what();
    if (what.empty()) what = e.get_name();
    out.flush();
    err << app.help() << "error: usage: " << one_line(what) << std::endl;
    return kUsage;
  }
  for (CLI::App* sub : {gen, train, ev}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) o.seed = seed;
    if (sub == train && train->count("--steps")) o.steps = steps;
    if (sub == ev && ev->count("--k")) o.k = k;
    if (sub == ev && ev->count("--subset")) {
      try {
        o.subset = parse_subset(subset);
      } catch (const std::exception& e) {
        err << "error: usage: " << one_line(e.what()) << std::endl;
        return kUsage;
      }
    }
  }
  if (gen->parsed()) return cmd_generate(o, out, err);
  if (train->parsed()) return cmd_train(o, out, err);
  return cmd_eval(o, out, err);
}

}  // namespace csf
