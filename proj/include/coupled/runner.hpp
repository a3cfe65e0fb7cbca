#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "coupled/io.hpp"
#include "coupled/scenario.hpp"

namespace coupled {

enum class RunMode { OpenLoop, Estimate, ClosedLoop, Compare };

/// "open-loop", "estimate", "closed-loop", "compare"; throws ConfigError otherwise.
RunMode parse_mode(const std::string& name);
std::string mode_name(RunMode mode);

struct RunOptions {
  RunMode mode = RunMode::OpenLoop;
  std::filesystem::path scenario;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;  // overrides the scenario's
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kRuntime = 1;
inline constexpr int kConfig = 2;
}  // namespace exit_code

struct RunOutcome {
  int status = exit_code::kOk;
  std::string message;
  Summary summary;
};

/// Executes one run and writes its artifacts into options.out_dir. Never
/// throws; failures map to the exit codes above. Logs gathered before a
/// runtime failure are still written.
RunOutcome run(const RunOptions& options, const Scenario* preloaded = nullptr);

}  // namespace coupled
