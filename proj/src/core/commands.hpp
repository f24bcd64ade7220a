#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "core/protocol.hpp"
#include "core/report.hpp"

namespace spsd {

struct CommandOptions {
  std::filesystem::path config_path;
  // Falls back to $SPSD_OUT_DIR, then ./spsd_out.
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  std::function<void(const std::string&)> log;
};

std::filesystem::path resolve_out_dir(const std::optional<std::filesystem::path>& out_dir);

// Loads and validates the config and applies the seed override. Nothing is
// written before this succeeds.
ExperimentConfig prepare_config(const CommandOptions& options);

// <out>/runs/<experiment>
std::filesystem::path experiment_dir(const std::filesystem::path& out_root, const ExperimentConfig& config);

// Writes one <out>/<domain>/ folder per synthetic domain.
std::vector<std::filesystem::path> cmd_make_data(const CommandOptions& options);

struct TrainOutcome {
  std::filesystem::path experiment_dir;
  std::vector<RunResult> results;
};

TrainOutcome cmd_train(const CommandOptions& options);
SweepResult cmd_sweep(const CommandOptions& options);
ReportSummary cmd_report(const std::filesystem::path& results_dir,
                         const std::function<void(const std::string&)>& log = {});

}  // namespace spsd
