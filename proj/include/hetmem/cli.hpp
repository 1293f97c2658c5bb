#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace hetmem {

// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitIo = 4,
  kExitDivergence = 5,
};

// Files written by train/sweep-srm/profile go here unless --output-dir is given.
inline constexpr const char* kOutputDirEnv = "HETMEM_OUTPUT_DIR";

/// Entry point for every subcommand. `args` excludes the program name.
/// Results go to `out`, diagnostics and progress to `err`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

// Full range as "lo..hi", anything else comma-separated.
std::string format_layer_set(const std::vector<std::size_t>& layers, std::size_t num_layers);

}  // namespace hetmem
