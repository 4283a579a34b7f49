#include "csf/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace csf {

// ---------------------------------------------------------------------------
// Schedules

void TrainSchedule::validate() const {
  require(dropout_ramp_steps >= 1, "schedule: dropout_ramp_steps must be positive");
  require(dropout_final >= 0.0 && dropout_final < 1.0, "schedule: dropout_final must be in [0, 1)");
  require(lr_warmup_steps >= 1, "schedule: lr_warmup_steps must be positive");
  require(base_lr > 0.0, "schedule: base_lr must be positive");
  require(total_steps >= 0, "schedule: total_steps must be non-negative");
  require(batch_size >= 2, "schedule: batch_size must be >= 2 for in-batch negatives");
}

double dropout_schedule(std::int64_t step, const TrainSchedule& sched) {
  require(step >= 0, "dropout_schedule: step must be non-negative");
  if (step >= sched.dropout_ramp_steps) return sched.dropout_final;
  return sched.dropout_final * double(step) / double(sched.dropout_ramp_steps);
}

double lr_schedule(std::int64_t step, const TrainSchedule& sched) {
  require(step >= 0, "lr_schedule: step must be non-negative");
  if (step >= sched.lr_warmup_steps) return sched.base_lr;
  return sched.base_lr * double(step) / double(sched.lr_warmup_steps);
}

// ---------------------------------------------------------------------------
// Value codecs

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::ostringstream o;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) o << ',';
    if constexpr (std::is_floating_point_v<T>)
      o << fmt(v[i]);
    else
      o << v[i];
  }
  return o.str();
}

struct Key {
  std::string name;  // section.key
  std::function<void(ExperimentConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define CSF_INT(path, field)                                                                          \
  Key {                                                                                               \
    path, [](ExperimentConfig& c, const std::string& k, const std::string& v) {                      \
      c.field = parse_number<std::remove_reference_t<decltype(c.field)>>(k, v);                       \
    },                                                                                                \
        [](const ExperimentConfig& c) { return std::to_string(c.field); }                             \
  }
#define CSF_REAL(path, field)                                                                             \
  Key {                                                                                                   \
    path, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_number<double>(k, v); }, \
        [](const ExperimentConfig& c) { return fmt(c.field); }                                            \
  }
#define CSF_BOOL(path, field)                                                                            \
  Key {                                                                                                  \
    path, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.field ? "true" : "false"); }               \
  }
#define CSF_STR(path, field)                                                                           \
  Key {                                                                                                \
    path, [](ExperimentConfig& c, const std::string&, const std::string& v) { c.field = trim(v); },   \
        [](const ExperimentConfig& c) { return c.field; }                                             \
  }
#define CSF_LIST(path, field, T)                                                                        \
  Key {                                                                                                 \
    path, [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = parse_list<T>(k, v); }, \
        [](const ExperimentConfig& c) { return fmt_list(c.field); }                                    \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = {
      CSF_INT("scenes.num_classes", scenes.num_classes),
      CSF_INT("scenes.scenes_per_class", scenes.scenes_per_class),
      CSF_INT("scenes.height", scenes.size.height),
      CSF_INT("scenes.width", scenes.size.width),
      CSF_INT("scenes.seed", scenes.seed),

      CSF_INT("views.crop_pixels", views.crop_pixels),
      CSF_REAL("views.jitter_limit", views.jitter_limit),
      CSF_LIST("views.rotations", views.rotations, int),
      CSF_BOOL("views.flips", views.flips),

      CSF_LIST("encoder.stack_widths", encoder.stack_widths, int),
      CSF_LIST("encoder.blocks_per_stack", encoder.blocks_per_stack, int),
      CSF_LIST("encoder.loss_layers", encoder.loss_layers, int),
      CSF_INT("encoder.stem_stride", encoder.stem_stride),
      CSF_INT("encoder.norm_groups", encoder.norm_groups),
      CSF_REAL("encoder.init_gain", encoder.init_gain),

      CSF_LIST("loss.weights", loss_weights, double),

      CSF_INT("schedule.dropout_ramp_steps", schedule.dropout_ramp_steps),
      CSF_REAL("schedule.dropout_final", schedule.dropout_final),
      CSF_INT("schedule.lr_warmup_steps", schedule.lr_warmup_steps),
      CSF_REAL("schedule.base_lr", schedule.base_lr),
      CSF_INT("schedule.total_steps", schedule.total_steps),
      CSF_INT("schedule.batch_size", schedule.batch_size),

      CSF_STR("optimizer.kind", optimizer.kind),
      CSF_REAL("optimizer.momentum", optimizer.momentum),
      CSF_REAL("optimizer.weight_decay", optimizer.weight_decay),
      CSF_REAL("optimizer.grad_clip_norm", optimizer.grad_clip_norm),
      CSF_REAL("optimizer.adam_beta1", optimizer.adam_beta1),
      CSF_REAL("optimizer.adam_beta2", optimizer.adam_beta2),
      CSF_REAL("optimizer.adam_epsilon", optimizer.adam_epsilon),

      CSF_INT("run.seed", run.seed),
      CSF_INT("run.checkpoint_every", run.checkpoint_every),

      CSF_INT("eval.seed", eval.seed),
      CSF_INT("eval.scenes_per_class", eval.scenes_per_class),
      CSF_INT("eval.k", eval.k),
      CSF_INT("eval.max_k", eval.max_k),
      CSF_INT("eval.pca_components", eval.pca_components),
      CSF_INT("eval.plot_components", eval.plot_components),
      CSF_STR("eval.distance", eval.distance),
      CSF_INT("eval.top_n", eval.top_n),
      CSF_INT("eval.component_index", eval.component_index),
      CSF_INT("eval.batch_size", eval.batch_size),
  };
  return keys;
}

#undef CSF_INT
#undef CSF_REAL
#undef CSF_BOOL
#undef CSF_STR
#undef CSF_LIST

}  // namespace

// ---------------------------------------------------------------------------
// ExperimentConfig

ExperimentConfig::ExperimentConfig() { encoder.input_channels = make_default_suite().total_channels(); }

void ExperimentConfig::validate() const {
  require(scenes.num_classes >= 2 && scenes.num_classes <= kMaxClasses, "config: scenes.num_classes must be in [2, 12]");
  require(scenes.scenes_per_class >= 1, "config: scenes.scenes_per_class must be >= 1");
  views.validate();
  require(views.crop_pixels < std::min(scenes.size.height, scenes.size.width),
          "config: views.crop_pixels must be smaller than the scene extent");
  encoder.validate();
  require(loss_weights.size() == encoder.loss_layers.size(),
          "config: loss.weights must have one entry per encoder.loss_layers entry");
  weights().validate();
  schedule.validate();
  require(optimizer.kind == "momentum_sgd" || optimizer.kind == "adam",
          "config: optimizer.kind must be momentum_sgd or adam");
  require(optimizer.grad_clip_norm >= 0, "config: optimizer.grad_clip_norm must be >= 0");
  require(run.checkpoint_every >= 1, "config: run.checkpoint_every must be >= 1");
  require(eval.k >= 1 && eval.max_k >= 1, "config: eval.k and eval.max_k must be >= 1");
  require(eval.pca_components >= 1 && eval.plot_components >= 1, "config: PCA component counts must be >= 1");
  require(eval.distance == "euclidean", "config: eval.distance supports only 'euclidean'");
  require(eval.top_n >= 1, "config: eval.top_n must be >= 1");
  require(eval.batch_size >= 1, "config: eval.batch_size must be >= 1");
}

LossWeights ExperimentConfig::weights() const {
  LossWeights w;
  for (std::size_t i = 0; i < encoder.loss_layers.size() && i < loss_weights.size(); ++i)
    w.lambda_by_layer[encoder.loss_layers[i]] = loss_weights[i];
  return w;
}

EncoderConfig ExperimentConfig::encoder_config() const {
  EncoderConfig e = encoder;
  e.rng_seed = mix_seed(run.seed, 0x656e63);
  return e;
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream o;
  std::string section;
  for (const auto& k : key_table()) {
    const auto dot = k.name.find('.');
    const std::string sec = k.name.substr(0, dot);
    if (sec != section) {
      o << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    o << k.name.substr(dot + 1) << " = " << k.get(*this) << '\n';
  }
  return o.str();
}

std::uint64_t ExperimentConfig::identity_hash() const {
  ExperimentConfig c = *this;
  c.schedule.total_steps = 0;
  c.run.seed = 0;
  return fnv1a64(c.to_text());
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_key(const std::string& unknown) {
  // Compare against both the dotted name and the bare key so section-less typos match.
  const std::string bare = unknown.substr(unknown.find('.') == std::string::npos ? 0 : unknown.find('.') + 1);
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& k : key_table()) {
    const std::string kb = k.name.substr(k.name.find('.') + 1);
    const std::size_t d = std::min(edit_distance(unknown, k.name), edit_distance(bare, kb));
    if (d < best_d) best_d = d, best = k.name;
  }
  return best;
}

void set_config_value(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value) {
  for (const auto& k : key_table())
    if (k.name == dotted_key) return k.set(cfg, dotted_key, value);
  throw ConfigError("unknown config key '" + dotted_key + "' (did you mean '" + nearest_key(dotted_key) + "'?)");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string dotted = section.empty() ? key : section + "." + key;
    set_config_value(cfg, dotted, line.substr(eq + 1));
  }
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace csf
