#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "edm/benchgen.hpp"
#include "edm/edm_train.hpp"

namespace edm::cli {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown by parse_command_line for --help; carries the rendered usage text.
class HelpRequested : public std::exception {
 public:
  explicit HelpRequested(std::string text) : text_(std::move(text)) {}
  const char* what() const noexcept override { return text_.c_str(); }

 private:
  std::string text_;
};

enum class Algo { kEdm, kCe };

struct GenConfig {
  int classes = 4;
  int per_class = 500;
  int test_per_class = 250;
  int dim = 8;
  double spread = 0.5;
  int pool_clusters = 4;
  double pool_offset = 3.0;
};

struct Paths {
  std::string out;            // gen: training manifest
  std::string test_out;       // gen: test manifest (optional)
  std::string manifest;       // train/eval/run input
  std::string test_manifest;  // train/eval/run input
  std::string out_dir;
  std::string checkpoint;       // eval: NetD checkpoint
  std::string nets_checkpoint;  // eval: optional NetS checkpoint
  std::string config_file;
};

struct ResolvedConfig {
  std::string command;  // gen | train | eval | run
  NoiseSpec noise;
  TrainConfig train;
  GenConfig gen;
  Paths paths;
  Algo algo = Algo::kEdm;
  int histogram_bins = 20;
  // Every setting known to `command` with its resolved textual value.
  std::map<std::string, std::string> settings;
};

// Keys accepted by a subcommand (flag names without the leading dashes).
std::vector<std::string> keys_for(const std::string& command);

// Reads a flat key=value file; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::string& path);

// Resolution order: built-in defaults < config file < flags < EDM_SEED.
// `env_seed` carries EDM_SEED when set.
ResolvedConfig resolve_config(const std::string& command,
                              const std::map<std::string, std::string>& flags,
                              const std::map<std::string, std::string>& file,
                              const std::optional<std::string>& env_seed = {});

// argv[1] is the subcommand. Reads --config and EDM_SEED itself.
ResolvedConfig parse_command_line(int argc, const char* const* argv);

std::string usage();

}  // namespace edm::cli
