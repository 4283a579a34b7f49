#include "csf/cli.hpp"
#include "csf/config.hpp"
#include "csf/training.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace csf;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "csf");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(int(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string last_line(const std::string& text) {
  std::string t = text;
  while (!t.empty() && t.back() == '\n') t.pop_back();
  const auto nl = t.rfind('\n');
  return nl == std::string::npos ? t : t.substr(nl + 1);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Workspace {
  fs::path root;
  fs::path config;
  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("csf_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
    config = root / "small.ini";
    std::ofstream f(config);
    f << "[scenes]\nnum_classes = 3\nscenes_per_class = 4\nheight = 24\nwidth = 24\n"
         "[views]\ncrop_pixels = 4\n"
         "[encoder]\nstack_widths = 8, 8, 16\nblocks_per_stack = 1, 1, 1\nloss_layers = 1, 2\nnorm_groups = 4\n"
         "[schedule]\nbatch_size = 4\ntotal_steps = 2\ndropout_ramp_steps = 2\nlr_warmup_steps = 1\n"
         "[run]\ncheckpoint_every = 1\n"
         "[eval]\nscenes_per_class = 4\nmax_k = 5\nk = 3\npca_components = 8\nplot_components = 8\ntop_n = 3\n";
  }
  ~Workspace() { fs::remove_all(root); }
  std::string cfg() const { return config.string(); }
  std::string at(const std::string& rel) const { return (root / rel).string(); }
};

}  // namespace

TEST_CASE("parse_subset") {
  CHECK(parse_subset("0 1 2") == std::set<int>{0, 1, 2});
  CHECK(parse_subset("3,1, 1") == std::set<int>{1, 3});
  CHECK_THROWS(parse_subset(""));
  CHECK_THROWS(parse_subset("1 x"));
  CHECK_THROWS(parse_subset("-1"));
}

TEST_CASE("generate is deterministic") {
  Workspace w("generate");
  REQUIRE(cli({"generate", "--config", w.cfg(), "--out", w.at("a")}).code == kOk);
  REQUIRE(cli({"generate", "--config", w.cfg(), "--out", w.at("b")}).code == kOk);
  CHECK(slurp(w.root / "a" / "manifest.txt") == slurp(w.root / "b" / "manifest.txt"));
  REQUIRE(cli({"generate", "--config", w.cfg(), "--out", w.at("c"), "--seed", "77"}).code == kOk);
  CHECK(slurp(w.root / "a" / "manifest.txt") != slurp(w.root / "c" / "manifest.txt"));
  CHECK(cli({"generate", "--config", w.cfg(), "--out", w.at("d"), "--split", "test"}).code == kUsage);
}

TEST_CASE("errors end with one diagnostic line and a category exit code") {
  Workspace w("errors");
  const Run typo = cli({"generate", "--out", w.at("x"), "--set", "schedule.droput_final=0.5"});
  CHECK(typo.code == kConfig);
  const std::string line = last_line(typo.err);
  CHECK(line.rfind("error: config: ", 0) == 0);
  CHECK(line.find("did you mean 'schedule.dropout_final'") != std::string::npos);

  const Run missing = cli({"train", "--config", w.cfg(), "--out", w.at("runs"), "--dataset", w.at("nowhere")});
  CHECK(missing.code == kData);
  CHECK(last_line(missing.err).rfind("error: dataset: ", 0) == 0);

  CHECK(cli({"train", "--out", w.at("runs")}).code == kUsage);
  CHECK(cli({"frobnicate"}).code == kUsage);
  CHECK(cli({"eval", "--config", w.cfg(), "--out", w.at("e"), "--dataset", w.at("nowhere")}).code == kUsage);
}

TEST_CASE("train, resume and eval from the command line") {
  Workspace w("pipeline");
  REQUIRE(cli({"generate", "--config", w.cfg(), "--out", w.at("train")}).code == kOk);
  REQUIRE(cli({"generate", "--config", w.cfg(), "--out", w.at("held"), "--split", "eval"}).code == kOk);

  const ExperimentConfig cfg = load_config(w.config);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cfg.identity_hash()));
  const fs::path run_dir = w.root / "runs" / (std::string("run-") + hash + "-seed0");

  SUBCASE("zero steps") {
    const Run r = cli({"train", "--config", w.cfg(), "--out", w.at("runs"), "--dataset", w.at("train"), "--steps", "0"});
    REQUIRE(r.code == kOk);
    CHECK(fs::exists(checkpoint_path(run_dir, 0)));
    CHECK(fs::exists(run_dir / "manifest.json"));
    CHECK(last_line(slurp(run_dir / "metrics.csv")) == "step,loss,loss_layer1,loss_layer2,p,lr,wall_time");
  }

  SUBCASE("full pipeline") {
    REQUIRE(cli({"train", "--config", w.cfg(), "--out", w.at("runs"), "--dataset", w.at("train")}).code == kOk);
    const fs::path ckpt = checkpoint_path(run_dir, 2);
    REQUIRE(fs::exists(ckpt));
    const std::string manifest = slurp(run_dir / "manifest.json");
    CHECK(manifest.find("\"final_step\": 2") != std::string::npos);
    CHECK(manifest.find("metrics.csv") != std::string::npos);

    const Run resumed = cli({"train", "--config", w.cfg(), "--out", w.at("runs"), "--dataset", w.at("train"),
                             "--steps", "3", "--resume"});
    CHECK(resumed.code == kOk);
    CHECK(fs::exists(checkpoint_path(run_dir, 3)));

    const Run one = cli({"eval", "--out", w.at("eval1"), "--dataset", w.at("held"), "--checkpoint", ckpt.string(),
                         "--subset", "0"});
    REQUIRE(one.code == kOk);
    std::ifstream sweep(w.root / "eval1" / "sweep.csv");
    int lines = 0;
    for (std::string l; std::getline(sweep, l);) ++lines;
    CHECK(lines == 2);
    for (const char* f : {"k_sweep.csv", "maximal_activations.csv", "manifest.json", "plots/embedding.svg"})
      CHECK(fs::exists(w.root / "eval1" / f));

    const Run ladder = cli({"eval", "--out", w.at("eval2"), "--dataset", w.at("held"), "--checkpoint", ckpt.string()});
    REQUIRE(ladder.code == kOk);
    CHECK(ladder.out.find("neighbor_fraction") != std::string::npos);

    const Run init = cli({"eval", "--config", w.cfg(), "--out", w.at("eval3"), "--dataset", w.at("held"),
                          "--init-only", "--subset", "0,1"});
    CHECK(init.code == kOk);
    CHECK(slurp(w.root / "eval3" / "manifest.json").find("init-only") != std::string::npos);

    const Run mismatch = cli({"eval", "--config", w.cfg(), "--set", "encoder.stack_widths=8,8,32", "--out",
                              w.at("eval4"), "--dataset", w.at("held"), "--checkpoint", ckpt.string()});
    CHECK(mismatch.code == kCheckpoint);
    CHECK(last_line(mismatch.err).rfind("error: checkpoint: ", 0) == 0);

    const Run out_of_range = cli({"eval", "--out", w.at("eval5"), "--dataset", w.at("held"), "--checkpoint",
                                  ckpt.string(), "--subset", "12"});
    CHECK(out_of_range.code == kUsage);
  }
}
