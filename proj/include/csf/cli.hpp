#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace csf {

/// Options shared by the subcommands. Unset optionals leave the config value alone.
struct CommandOptions {
  std::filesystem::path config;  // empty: built-in defaults (or the checkpoint's config for eval)
  std::filesystem::path out;
  std::filesystem::path dataset;
  std::filesystem::path checkpoint;
  std::vector<std::string> overrides;  // "section.key=value"
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<int> k;
  std::optional<std::set<int>> subset;
  std::string split = "train";  // generate: "train" or "eval"
  bool resume = false;
  bool init_only = false;
};

/// Exit codes. On failure the last line written to `err` is
/// `error: <kind>: <reason>` with the reason on one line.
enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kConfig = 3,
  kData = 4,
  kCheckpoint = 5,
  kDiverged = 6,
  kInternal = 1,
};

int cmd_generate(const CommandOptions& options, std::ostream& out, std::ostream& err);
int cmd_train(const CommandOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// Parses "0 1 2" or "0,1,2" into a channel set.
std::set<int> parse_subset(const std::string& text);

/// Full command-line entry point.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace csf
