// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include "csf/cli.hpp"
#include "csf/config.hpp"
#include "csf/eval.hpp"
#include "csf/loss.hpp"
#include "csf/training.hpp"
#include "csf/views.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

using namespace csf;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix<double> gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Written directly from the per-example definition with an explicit noise set.
double naive_loss(const Matrix<double>& z1, const Matrix<double>& z2) {
  const Eigen::Index B = z1.rows();
  auto phi = [](const Matrix<double>& a, Eigen::Index i, const Matrix<double>& b, Eigen::Index j) {
    double s = 0;
    for (Eigen::Index d = 0; d < a.cols(); ++d) s += a(i, d) * b(j, d);
    return s;
  };
  double total = 0;
  for (Eigen::Index b = 0; b < B; ++b) {
    double num_f = std::exp(phi(z1, b, z2, b)), den_f = num_f;
    double num_b = std::exp(phi(z2, b, z1, b)), den_b = num_b;
    for (Eigen::Index n = 0; n < B; ++n) {
      if (n == b) continue;
      den_f += std::exp(phi(z1, b, z2, n));
      den_b += std::exp(phi(z2, b, z1, n));
    }
    total += -std::log(num_f / den_f) - std::log(num_b / den_b);
  }
  return total / double(B);
}

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli cli(std::vector<std::string> args) {
  args.insert(args.begin(), "csf");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  Cli r;
  r.code = run_cli(int(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  if (r.code != 0) std::fprintf(stderr, "command failed (%d): %s", r.code, r.err.c_str());
  return r;
}

fs::path run_dir_of(const std::string& train_out) {
  std::istringstream in(train_out);
  for (std::string line; std::getline(in, line);)
    if (line.rfind("run_dir ", 0) == 0) return line.substr(8);
  return {};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

// num_channels -> neighbor_fraction from sweep.csv
std::map<int, double> read_sweep(const fs::path& p) {
  std::ifstream in(p);
  std::map<int, double> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream rest(line.substr(line.rfind('"') + 2));
    std::string n, nf;
    std::getline(rest, n, ',');
    std::getline(rest, nf, ',');
    out[std::stoi(n)] = std::stod(nf);
  }
  return out;
}

std::vector<std::string> metrics_without_wall_time(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line.substr(0, line.rfind(',')));
  return out;
}

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Index B = 1 + Eigen::Index(rng() % 8), D = 1 + Eigen::Index(rng() % 16);
    const Matrix<double> z1 = gaussian(B, D, rng), z2 = gaussian(B, D, rng);
    worst = std::max(worst, std::abs(layer_infonce_loss(z1, z2) - naive_loss(z1, z2)));
  }
  const double secs = seconds_since(t0);
  report(1, worst <= 1e-6 && secs < 5, "loss vs explicit noise-set formula, max |diff| " + fmt("%.2e", worst) +
                                            ", " + fmt("%.3f", secs) + " s");
}

void criterion_2() {
  const Matrix<double> eye = Matrix<double>::Identity(2, 2);
  const double id_err = std::abs(layer_infonce_loss(eye, eye) - 2 * std::log1p(std::exp(-1.0)));
  const double id_paper = std::abs(layer_infonce_loss(eye, eye) - 0.62652);
  double same_err = 0;
  std::mt19937_64 rng(102);
  for (int B = 2; B <= 64; B *= 2) {
    const Matrix<double> row = gaussian(1, 8, rng);
    const Matrix<double> z = row.replicate(B, 1);
    same_err = std::max(same_err, std::abs(layer_infonce_loss(z, z) - 2 * std::log(double(B))));
  }
  report(2, id_err < 1e-6 && id_paper < 1e-5 && same_err < 1e-6,
         "identity case error " + fmt("%.2e", id_err) + ", identical rows max error " + fmt("%.2e", same_err));
}

void criterion_3() {
  std::mt19937_64 rng(103);
  double worst = 0;
  const double h = 1e-4;
  for (int i = 0; i < 20; ++i) {
    const Eigen::Index B = 2 + Eigen::Index(rng() % 7), D = 1 + Eigen::Index(rng() % 12);
    Matrix<double> z1 = gaussian(B, D, rng), z2 = gaussian(B, D, rng);
    const auto g = layer_infonce_gradient(z1, z2);
    for (int which = 0; which < 2; ++which) {
      Matrix<double>& z = which ? z2 : z1;
      const Matrix<double>& an = which ? g.dz2 : g.dz1;
      for (Eigen::Index k = 0; k < z.size(); ++k) {
        const double keep = z.data()[k];
        z.data()[k] = keep + h;
        const double up = layer_infonce_loss(z1, z2);
        z.data()[k] = keep - h;
        const double down = layer_infonce_loss(z1, z2);
        z.data()[k] = keep;
        const double fd = (up - down) / (2 * h);
        const double scale = std::max({std::abs(fd), std::abs(an.data()[k]), 1e-6});
        worst = std::max(worst, std::abs(fd - an.data()[k]) / scale);
      }
    }
  }
  report(3, worst < 1e-3, "20 instances, worst relative error " + fmt("%.2e", worst));
}

void criterion_4() {
  TrainSchedule s;
  s.dropout_ramp_steps = 8000;
  s.dropout_final = 0.66;
  s.lr_warmup_steps = 3000;
  s.base_lr = 0.1;
  const std::vector<std::pair<int, double>> p{{0, 0.0}, {4000, 0.33}, {8000, 0.66}, {20000, 0.66}};
  const std::vector<std::pair<int, double>> lr{{0, 0.0}, {1500, 0.05}, {3000, 0.1}, {20000, 0.1}};
  bool ok = true;
  std::string detail = "p:";
  for (auto [step, want] : p) {
    const double got = dropout_schedule(step, s);
    ok = ok && got == want;
    detail += " " + fmt("%.17g", got);
  }
  detail += "; lr:";
  for (auto [step, want] : lr) {
    const double got = lr_schedule(step, s);
    ok = ok && got == want;
    detail += " " + fmt("%.17g", got);
  }
  report(4, ok, detail);
}

void criterion_5() {
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> u(0.0, 0.9);
  const SensorSuite suite = make_default_suite();
  const SceneTensor t = fuse_and_upsample(generate_scene(suite, 4, 55, {48, 48}), suite);
  ViewConfig cfg;
  int mask_bad = 0, scale_bad = 0, jitter_bad = 0, crop_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    cfg.dropout_rate = u(rng);
    const View v = make_view(t, cfg, rng);
    for (int c = 0; c < v.data.channels(); ++c)
      if (v.channel_mask[std::size_t(c)] == v.data.data.row(c).isZero(0)) ++mask_bad;

    const double p = u(rng);
    const auto mask = sample_channel_mask(t.data.channels(), p, rng);
    const FeatureMap<float> d = apply_channel_dropout(t.data, mask, p);
    for (int c = 0; c < d.channels(); ++c) {
      const Matrix<float> want = mask[std::size_t(c)] ? Matrix<float>(t.data.data.row(c) / float(1 - p))
                                                      : Matrix<float>::Zero(1, t.data.data.cols());
      if (!(d.data.row(c) - want).isZero(1e-6f * (1 + want.cwiseAbs().maxCoeff()))) ++scale_bad;
    }

    const AugmentParams a = sample_augment(12, 48, 48, cfg, rng);
    for (std::size_t c = 0; c < a.brightness.size(); ++c)
      if (a.brightness[c] < 0.75 || a.brightness[c] > 1.25 || a.contrast[c] < 0.75 || a.contrast[c] > 1.25)
        ++jitter_bad;

    const int crop = int(rng() % 20);
    cfg.crop_pixels = crop;
    const FeatureMap<float> x = augment(t.data, cfg, rng);
    if (x.channels() != 12 || x.height != 48 - crop || x.width != 48 - crop) ++crop_bad;
    cfg.crop_pixels = 12;
  }
  report(5, mask_bad + scale_bad + jitter_bad + crop_bad == 0,
         "1000 trials each; violations mask " + std::to_string(mask_bad) + ", scale " + std::to_string(scale_bad) +
             ", jitter " + std::to_string(jitter_bad) + ", crop " + std::to_string(crop_bad));
}

void criterion_9() {
  std::mt19937_64 rng(109);
  const int N = 1200, trials = 200;
  EmbeddingTable table;
  table.vectors = gaussian(N, 32, rng);
  table.num_classes = 12;
  for (int i = 0; i < N; ++i) {
    table.labels.push_back(i % 12);
    table.scene_ids.push_back(std::to_string(i));
  }
  const Neighbors nn = nearest_neighbors(table.vectors, 10);
  double nf = 0, acc = 0;
  for (int t = 0; t < trials; ++t) {
    std::shuffle(table.labels.begin(), table.labels.end(), rng);
    nf += neighbor_fraction(nn, table.labels) / trials;
    acc += knn_loocv_accuracy(nn, table.labels) / trials;
  }
  const double chance = 1.0 / 12;
  report(9, std::abs(nf - chance) <= 0.02 && std::abs(acc - chance) <= 0.02,
         "N = 1200, " + std::to_string(trials) + " permutations: neighbor_fraction " + fmt("%.4f", nf) +
             ", knn accuracy " + fmt("%.4f", acc) + " (chance " + fmt("%.4f", chance) + ")");
}

void criterion_10(const fs::path& work) {
  const fs::path dir = work / "repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "cfg.ini");
    f << "[scenes]\nscenes_per_class = 8\n[schedule]\nbatch_size = 16\ntotal_steps = 40\n"
         "dropout_ramp_steps = 20\nlr_warmup_steps = 10\n[run]\ncheckpoint_every = 10\n";
  }
  const std::string cfg = (dir / "cfg.ini").string();
  bool ok = cli({"generate", "--config", cfg, "--out", (dir / "data").string()}).code == 0;
  const Cli a = cli({"train", "--config", cfg, "--dataset", (dir / "data").string(), "--out", (dir / "a").string()});
  const Cli b = cli({"train", "--config", cfg, "--dataset", (dir / "data").string(), "--out", (dir / "b").string()});
  const Cli c1 = cli({"train", "--config", cfg, "--dataset", (dir / "data").string(), "--out", (dir / "c").string(),
                      "--steps", "20"});
  const Cli c2 = cli({"train", "--config", cfg, "--dataset", (dir / "data").string(), "--out", (dir / "c").string(),
                      "--resume"});
  ok = ok && a.code == 0 && b.code == 0 && c1.code == 0 && c2.code == 0;
  bool same_logs = false, same_resume = false;
  if (ok) {
    const fs::path ra = run_dir_of(a.out), rb = run_dir_of(b.out), rc = run_dir_of(c2.out);
    const auto log_a = metrics_without_wall_time(ra / "metrics.csv");
    same_logs = log_a.size() == 41 && log_a == metrics_without_wall_time(rb / "metrics.csv");
    same_resume = log_a == metrics_without_wall_time(rc / "metrics.csv");
    const ExperimentConfig ec = load_config(dir / "cfg.ini");
    const TrainState sa = load_checkpoint(checkpoint_path(ra, 40), ec), sc = load_checkpoint(checkpoint_path(rc, 40), ec);
    for (std::size_t i = 0; i < sa.encoder.params().size(); ++i)
      same_resume = same_resume && sa.encoder.params()[i].value == sc.encoder.params()[i].value;
  }
  report(10, ok && same_logs && same_resume,
         std::string("two identical runs ") + (same_logs ? "match" : "differ") + "; resumed at step 20 " +
             (same_resume ? "matches" : "differs from") + " the uninterrupted run");
}

struct SeedResult {
  double init_band = 0, smoothed = 0, train_seconds = 0;
  std::map<int, double> trained, random;
  double overlap_p = 1, overlap_observed = 0, overlap_null = 0;
  bool ok = false;
};

SeedResult train_and_evaluate(const fs::path& work, std::uint64_t seed) {
  SeedResult r;
  const std::string s = std::to_string(seed);
  const auto t0 = std::chrono::steady_clock::now();
  const Cli tr = cli({"train", "--dataset", (work / "train").string(), "--out", (work / "runs").string(), "--seed", s});
  r.train_seconds = seconds_since(t0);
  if (tr.code != 0) return r;
  const fs::path run = run_dir_of(tr.out);
  const nlohmann::json m = read_json(run / "manifest.json");
  r.smoothed = m["smoothed_loss"].get<double>();
  const ExperimentConfig cfg;
  r.init_band = 2 * std::log(double(cfg.schedule.batch_size)) * cfg.weights().sum();

  const fs::path ckpt = checkpoint_path(run, m["final_step"].get<std::int64_t>());
  const fs::path ev = work / ("eval-seed" + s), rnd = work / ("random-seed" + s);
  if (cli({"eval", "--dataset", (work / "held").string(), "--checkpoint", ckpt.string(), "--out", ev.string()}).code)
    return r;
  if (cli({"eval", "--dataset", (work / "held").string(), "--init-only", "--seed", s, "--out", rnd.string()}).code)
    return r;
  r.trained = read_sweep(ev / "sweep.csv");
  r.random = read_sweep(rnd / "sweep.csv");
  const nlohmann::json em = read_json(ev / "manifest.json");
  r.overlap_p = em["overlap"]["p_value"].get<double>();
  r.overlap_observed = em["overlap"]["observed"].get<double>();
  r.overlap_null = em["overlap"]["null_mean"].get<double>();
  r.ok = true;
  std::printf("  seed %s: train %.0f s, smoothed loss %.3f, trained nf", s.c_str(), r.train_seconds, r.smoothed);
  for (auto [n, v] : r.trained) std::printf(" %d:%.3f", n, v);
  std::printf(", random nf 12:%.3f, overlap %.0f vs null %.2f (p %.4f)\n", r.random[12], r.overlap_observed,
              r.overlap_null, r.overlap_p);
  std::fflush(stdout);
  return r;
}

void trained_criteria(const fs::path& work) {
  const bool data_ok =
      cli({"generate", "--out", (work / "train").string()}).code == 0 &&
      cli({"generate", "--out", (work / "held").string(), "--split", "eval"}).code == 0;
  std::vector<SeedResult> seeds;
  for (std::uint64_t s = 0; s < 3 && data_ok; ++s) seeds.push_back(train_and_evaluate(work, s));
  while (seeds.size() < 3) seeds.emplace_back();

  int c6 = 0, c7 = 0, c8 = 0, c11 = 0;
  std::string d6, d7, d8, d11;
  for (const SeedResult& r : seeds) {
    const double drop = r.ok ? 1 - r.smoothed / r.init_band : 0;
    const bool ok6 = r.ok && drop >= 0.30 && r.train_seconds <= 900;
    c6 += ok6;
    d6 += " " + fmt("%.0f%%", 100 * drop);

    const double nf = r.ok ? r.trained.at(12) : 0, base = r.ok ? r.random.at(12) : 1;
    c7 += r.ok && nf - base >= 0.10 && nf - 1.0 / 12 >= 0.10;
    d7 += " " + fmt("%+.3f", nf - base);

    bool ok8 = false;
    if (r.ok) {
      const double n4 = r.trained.at(4), n8 = r.trained.at(8), n12 = r.trained.at(12);
      ok8 = n12 >= n8 && n8 >= n4 && (n12 - n8 >= 0.03 || n8 - n4 >= 0.03);
      d8 += " " + fmt("%.3f", n4) + "/" + fmt("%.3f", n8) + "/" + fmt("%.3f", n12);
    }
    c8 += ok8;

    c11 += r.ok && r.overlap_p < 0.05;
    d11 += " " + fmt("%.4f", r.overlap_p);
  }
  report(6, c6 == 3, "loss drop below 2 log 64 * sum(lambda) per seed:" + d6 + " (need >= 30%, " +
                         std::to_string(c6) + "/3 seeds)");
  report(7, c7 == 3, "12-channel neighbor_fraction minus random-weights baseline:" + d7 +
                         " (need >= 0.10 above baseline and chance, " + std::to_string(c7) + "/3 seeds)");
  report(8, c8 >= 2, "neighbor_fraction at 4/8/12 channels:" + d8 + " (" + std::to_string(c8) + "/3 seeds, need 2)");
  report(11, c11 == 3, "cross-sensor overlap permutation p-values:" + d11 + " (" + std::to_string(c11) + "/3 seeds)");
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "csf_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);
  const std::vector<std::function<void()>> quick{criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                                                  criterion_9, [&] { criterion_10(work); }};
  for (const auto& c : quick) {
    try {
      c();
    } catch (const std::exception& e) {
      report(0, false, std::string("exception: ") + e.what());
    }
  }
  try {
    trained_criteria(work);
  } catch (const std::exception& e) {
    report(0, false, std::string("exception in trained criteria: ") + e.what());
  }
  std::printf("%s: %d failing\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", failures);
  return failures ? 1 : 0;
}
