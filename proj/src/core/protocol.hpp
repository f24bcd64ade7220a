#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/data.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"

namespace spsd {

struct TrajectoryPoint {
  std::int64_t step = 0;
  double accuracy = 0.0;
};

// Step of maximum pooled validation accuracy; ties go to the earliest step.
std::int64_t select_model_iid(std::span<const TrajectoryPoint> trajectory);

struct StepRecord {
  std::int64_t step = 0;
  int block = 0;
  double beta = 0.0;
  double ce = 0.0;
  double kl = 0.0;
};

struct RunResult {
  std::string experiment;
  Setting setting = Setting::MultiSource;
  Method method = Method::ERM;
  std::string target;
  std::vector<std::string> sources;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  double beta_final = 0.0;
  std::int64_t selected_step = 0;
  double val_accuracy = 0.0;
  std::vector<TrajectoryPoint> trajectory;
  double target_accuracy = 0.0;
  BlockAccuracyProfile block_accuracy;
  CalibrationReport calibration;
  double mean_step_seconds = 0.0;
  double wall_seconds = 0.0;
};

json to_json(const RunResult& result);
RunResult parse_run_result(const json& document);

inline constexpr const char* kResultsCsvHeader =
    "setting,method,target,seed,lambda,beta_final,accuracy,ece,sce,selected_step";
std::string csv_row(const RunResult& result);

struct AggregateCell {
  std::string target;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct AggregateResult {
  std::vector<AggregateCell> per_target;
  double overall = 0.0;
};

// Per-target mean and population std over seeds, plus the unweighted mean of
// the per-target means. All results must share setting and method, and every
// target must cover the same seeds.
AggregateResult aggregate(std::span<const RunResult> results);

// Domain access by name. Synthetic domains are regenerated on demand; a
// held-out synthetic domain uses the target cue correlation.
class DomainCatalog {
 public:
  static DomainCatalog from_config(const ExperimentConfig& config);

  const std::vector<std::string>& names() const { return names_; }
  int index_of(const std::string& name) const;
  DomainDataset load(int index, bool as_target) const;

 private:
  const ExperimentConfig* config_ = nullptr;
  std::vector<std::string> names_;
  std::vector<std::filesystem::path> dirs_;
};

struct TrainOptions {
  // Checkpoints (latest.ckpt, best.ckpt) are written here when set.
  std::optional<std::filesystem::path> work_dir;
  bool resume = false;
  // Stop once this many steps are done (at a checkpoint boundary).
  std::optional<std::int64_t> stop_after;
  std::function<void(const std::string&)> log;
};

struct TrainedModel {
  VisionTransformer<float> model;
  AugmentConfig augment;
  std::int64_t selected_step = 0;
  double val_accuracy = 0.0;
  std::vector<TrajectoryPoint> trajectory;
  std::vector<StepRecord> loss_log;
  double mean_step_seconds = 0.0;
  double wall_seconds = 0.0;
  std::int64_t steps_done = 0;
  bool completed = false;
};

// Trains on the pooled training splits of the source domains and keeps the
// checkpoint chosen by IID selection on the pooled validation splits.
TrainedModel train_model(const ExperimentConfig& config, std::span<const DomainDataset> sources,
                         std::uint64_t seed, const TrainOptions& options = {});

double evaluate_accuracy(const VisionTransformer<float>& model, std::span<const Image> images,
                         std::span<const int> labels, int batch_size);

struct TargetEvaluation {
  double accuracy = 0.0;
  BlockAccuracyProfile blocks;
  CalibrationReport calibration;
};

TargetEvaluation evaluate_target(const TrainedModel& trained, const DomainDataset& target, int num_bins,
                                 int batch_size);

struct RunOptions {
  // Directory holding <target>/<seed>/ run folders; nothing is written when unset.
  std::optional<std::filesystem::path> experiment_dir;
  bool resume = false;
  std::function<void(const std::string&)> log;
};

std::vector<RunResult> run_multi_source(const ExperimentConfig& config, const RunOptions& options = {});
std::vector<RunResult> run_single_source(const ExperimentConfig& config, const RunOptions& options = {});
std::vector<RunResult> run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

struct SweepPoint {
  double lambda = 0.0;
  double beta_final = 0.0;
  // Means over the point's runs.
  double val_accuracy = 0.0;
  double target_accuracy = 0.0;
  std::vector<RunResult> runs;
};

struct SweepResult {
  std::vector<SweepPoint> grid;
  std::size_t best = 0;
};

// Index of the grid point with the highest mean pooled validation accuracy
// (first wins ties).
std::size_t select_sweep_winner(std::span<const SweepPoint> grid);

using ExperimentRunner = std::function<std::vector<RunResult>(const ExperimentConfig&, const RunOptions&)>;

// One full experiment per (lambda, beta_final) grid point. Writes sweep.csv
// and sweep.json into experiment_dir when set.
SweepResult sweep(const ExperimentConfig& config, const RunOptions& options = {},
                  const ExperimentRunner& runner = run_experiment);

std::string format_number(double value, int decimals);

}  // namespace spsd
