#pragma once

#include <string>

#include "edm/cli_config.hpp"

namespace edm::cli {

// Process exit codes. Stable across versions.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,   // bad flags, config file or parameter values
  kExitData = 3,     // missing/corrupt manifests or checkpoints
  kExitRuntime = 4,  // numerical failure or other error during a run
};

inline constexpr const char* kArtifactVersion = "0.1.0";
inline constexpr int kLogSchemaVersion = 1;

struct Benchmark {
  DatasetManifest train;
  DatasetManifest test;  // empty when test_per_class is 0
};

// Synthetic blobs benchmark described by the gen settings and noise spec;
// the same data `gen` writes and `run` trains on.
Benchmark generate_benchmark(const ResolvedConfig& cfg);

// Executes a resolved `gen`, `train`, `eval` or `run` command. Errors are
// reported as one JSON line on stderr and mapped to an ExitCode.
int run_experiment(const ResolvedConfig& cfg);

// Full entry point used by the edm binary.
int main_entry(int argc, const char* const* argv);

}  // namespace edm::cli
