#include "csf/training.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace csf {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'C', 'S', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod(std::uint64_t(s.size()));
    buf_.append(s);
  }
  void matrix(const Matrix<float>& m) {
    pod(std::int64_t(m.rows()));
    pod(std::int64_t(m.cols()));
    buf_.append(reinterpret_cast<const char*>(m.data()), std::size_t(m.size()) * sizeof(float));
  }
  [[nodiscard]] const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix<float> matrix() {
    const auto rows = pod<std::int64_t>(), cols = pod<std::int64_t>();
    if (rows < 0 || cols < 0) throw CheckpointError("checkpoint: negative matrix shape");
    const std::size_t n = std::size_t(rows) * std::size_t(cols) * sizeof(float);
    need(n);
    Matrix<float> m(rows, cols);
    std::memcpy(m.data(), bytes_.data() + pos_, n);
    pos_ += n;
    return m;
  }
  [[nodiscard]] bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint: truncated archive");
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

struct Archive {
  std::string config_text;
  std::string encoder_text;
  std::int64_t step = 0;
  std::string rng;
  double smoothed_loss = 0;
  std::int64_t loss_count = 0;
  std::vector<std::string> names;
  std::vector<Matrix<float>> params;
  std::string optimizer_kind;
  std::int64_t updates = 0;
  std::vector<Matrix<float>> first, second;
};

Archive read_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  if (bytes.size() < sizeof kMagic + sizeof(std::uint64_t) || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint archive: " + path.string());
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (stored != fnv1a64(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch: " + path.string());

  Reader r(bytes, body);
  for (char c : kMagic) (void)c, r.pod<char>();
  if (r.pod<std::uint32_t>() != kFormatVersion) throw CheckpointError("unsupported checkpoint version: " + path.string());
  Archive a;
  a.config_text = r.str();
  a.encoder_text = r.str();
  a.step = r.pod<std::int64_t>();
  a.rng = r.str();
  a.smoothed_loss = r.pod<double>();
  a.loss_count = r.pod<std::int64_t>();
  const auto n = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    a.names.push_back(r.str());
    a.params.push_back(r.matrix());
  }
  a.optimizer_kind = r.str();
  a.updates = r.pod<std::int64_t>();
  const auto nf = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nf; ++i) a.first.push_back(r.matrix());
  const auto ns = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < ns; ++i) a.second.push_back(r.matrix());
  if (!r.done()) throw CheckpointError("checkpoint has trailing data: " + path.string());
  return a;
}

}  // namespace

fs::path checkpoint_path(const fs::path& run_dir, std::int64_t step) {
  char name[32];
  std::snprintf(name, sizeof name, "step-%08lld.ckpt", static_cast<long long>(step));
  return run_dir / "checkpoints" / name;
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
  std::optional<fs::path> best;
  const fs::path dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("step-", 0) == 0 && e.path().extension() == ".ckpt" && (!best || name > best->filename().string()))
      best = e.path();
  }
  return best;
}

void save_checkpoint(const TrainState& state, const ExperimentConfig& cfg, const fs::path& path) {
  Writer w;
  for (char c : kMagic) w.pod(c);
  w.pod(kFormatVersion);
  w.str(cfg.to_text());
  w.str(state.encoder.config().to_string());
  w.pod(std::int64_t(state.step));
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  w.pod(state.smoothed_loss);
  w.pod(std::int64_t(state.loss_count));
  w.pod(std::uint64_t(state.encoder.params().size()));
  for (const auto& p : state.encoder.params()) {
    w.str(p.name);
    w.matrix(p.value);
  }
  w.str(state.optimizer.kind);
  w.pod(std::int64_t(state.optimizer.updates));
  w.pod(std::uint64_t(state.optimizer.first.size()));
  for (const auto& m : state.optimizer.first) w.matrix(m);
  w.pod(std::uint64_t(state.optimizer.second.size()));
  for (const auto& m : state.optimizer.second) w.matrix(m);
  const std::uint64_t sum = fnv1a64(w.bytes().data(), w.bytes().size());

  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(w.bytes().data(), std::streamsize(w.bytes().size()));
    out.write(reinterpret_cast<const char*>(&sum), sizeof sum);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

TrainState load_checkpoint(const fs::path& path, const ExperimentConfig& cfg) {
  Archive a = read_archive(path);
  const std::string expected = cfg.encoder_config().to_string();
  if (a.encoder_text != expected)
    throw CheckpointError("checkpoint encoder config mismatch\n  checkpoint: " + a.encoder_text +
                          "\n  requested:  " + expected);
  if (a.optimizer_kind != cfg.optimizer.kind)
    throw CheckpointError("checkpoint optimizer mismatch: checkpoint '" + a.optimizer_kind + "', requested '" +
                          cfg.optimizer.kind + "'");

  TrainState state(cfg);
  auto& params = state.encoder.mutable_params();
  if (a.params.size() != params.size() || a.first.size() != state.optimizer.first.size() ||
      a.second.size() != state.optimizer.second.size())
    throw CheckpointError("checkpoint parameter count does not match the encoder");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (a.names[i] != params[i].name || a.params[i].rows() != params[i].value.rows() ||
        a.params[i].cols() != params[i].value.cols())
      throw CheckpointError("checkpoint parameter '" + a.names[i] + "' does not match encoder parameter '" +
                            params[i].name + "'");
    params[i].value = std::move(a.params[i]);
  }
  state.optimizer.updates = a.updates;
  state.optimizer.first = std::move(a.first);
  state.optimizer.second = std::move(a.second);
  state.step = a.step;
  std::istringstream rng(a.rng);
  rng >> state.rng;
  if (!rng) throw CheckpointError("checkpoint rng state is corrupt");
  state.smoothed_loss = a.smoothed_loss;
  state.loss_count = a.loss_count;
  return state;
}

ExperimentConfig checkpoint_config(const fs::path& path) { return parse_config(read_archive(path).config_text); }

}  // namespace csf
