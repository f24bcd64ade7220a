#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "core/data.hpp"
#include "core/distill.hpp"
#include "core/model.hpp"
#include "core/optimizer.hpp"

namespace spsd {

using json = nlohmann::json;

enum class Setting { MultiSource, SingleSource };

const char* to_string(Setting setting);

struct SyntheticDataConfig {
  std::vector<SyntheticDomainSpec> domains;
  int per_domain_count = 500;
  std::uint64_t seed = 0;
  std::vector<double> class_profile;
  // Cue/label agreement used when a domain is held out. Unset means
  // 1 / num_classes, which makes the cue independent of the label.
  std::optional<double> target_spurious_correlation;
};

struct DataConfig {
  // Folder layout on disk (one subdirectory per domain with labels.csv) ...
  std::optional<std::string> root;
  // ... or synthetic domains generated in memory.
  std::optional<SyntheticDataConfig> synthetic;
};

struct HParamGrid {
  std::vector<double> lambda{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<double> beta_final{0.2, 0.4, 0.6, 0.8};
};

struct ExperimentConfig {
  std::string name = "experiment";
  NetworkConfig network;
  DistillConfig distill;
  DataConfig data;
  AugmentConfig augment;
  Setting setting = Setting::MultiSource;
  // Multi-source: held-out domains (empty means every domain in turn).
  std::vector<std::string> targets;
  // Single-source: the one training domain.
  std::string source;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::int64_t total_steps = 3000;
  std::int64_t eval_every = 100;
  int batch_size = 32;
  int eval_batch_size = 128;
  std::string optimizer_name = "adamw";
  AdamWOptions optimizer;
  HParamGrid hparam_grid;
  int num_bins = 15;
  SplitSpec split;
  // Number of target images exported as attention heatmaps per run.
  int heatmaps = 4;
  bool heatmap_rollout = false;

  // Throws Error(Config) naming the offending key.
  void validate() const;
};

ExperimentConfig parse_experiment_config(const json& document);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
json to_json(const ExperimentConfig& config);

json to_json(const NetworkConfig& config);
NetworkConfig parse_network_config(const json& document, const std::string& path = "network");

json to_json(const ChannelStats& stats);
ChannelStats parse_channel_stats(const json& document);

json read_json_file(const std::filesystem::path& path);
// Writes atomically via a temporary file.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace spsd
