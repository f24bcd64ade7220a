#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "core/protocol.hpp"

namespace spsd {

struct LoadedRun {
  // Run directory relative to the results root, '/'-separated.
  std::string relative_dir;
  RunResult result;
};

struct ReportSummary {
  std::vector<LoadedRun> runs;
  std::vector<std::string> skipped;
  std::vector<std::filesystem::path> files;
};

// "m±s" with one decimal.
std::string format_mean_std(double mean, double std);

// Collects every run.json under root (ignoring the report folder), sorted by
// path. Unreadable files are listed in skipped.
std::vector<LoadedRun> collect_runs(const std::filesystem::path& root, std::vector<std::string>& skipped);

// Writes accuracy and calibration tables (markdown and CSV), one block-wise
// accuracy plot per run and one heatmap grid per run into root/report.
// Output depends only on the run files, so reruns are byte-identical.
// Throws Error(Io) when no run could be loaded.
ReportSummary generate_report(const std::filesystem::path& root,
                              const std::function<void(const std::string&)>& warn = {});

}  // namespace spsd
