#include "core/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "core/checkpoint.hpp"
#include "core/distill.hpp"
#include "core/errors.hpp"
#include "core/image_io.hpp"
#include "core/optimizer.hpp"
#include "core/rng.hpp"

namespace spsd {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kBatchStream = 2;
constexpr std::uint64_t kAugmentStream = 3;
constexpr std::uint64_t kBlockStream = 4;

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream in(state);
  in >> rng;
  if (!in) fail(ErrorKind::Io, "corrupt generator state in checkpoint");
}

json bins_to_json(const std::vector<CalibrationBin>& bins) {
  json out = json::array();
  for (const auto& b : bins)
    out.push_back({{"count", b.count}, {"mean_confidence", b.mean_confidence}, {"mean_accuracy", b.mean_accuracy}});
  return out;
}

std::vector<CalibrationBin> bins_from_json(const json& j) {
  std::vector<CalibrationBin> out;
  for (const auto& b : j)
    out.push_back({b.at("count").get<std::size_t>(), b.at("mean_confidence").get<double>(),
                   b.at("mean_accuracy").get<double>()});
  return out;
}

json loss_log_to_json(const std::vector<StepRecord>& log) {
  json steps = json::array(), blocks = json::array(), beta = json::array(), ce = json::array(),
       kl = json::array();
  for (const auto& r : log) {
    steps.push_back(r.step);
    blocks.push_back(r.block);
    beta.push_back(r.beta);
    ce.push_back(r.ce);
    kl.push_back(r.kl);
  }
  return {{"step", steps}, {"block", blocks}, {"beta", beta}, {"ce", ce}, {"kl", kl}};
}

std::vector<StepRecord> loss_log_from_json(const json& j) {
  std::vector<StepRecord> out;
  const auto& steps = j.at("step");
  for (std::size_t i = 0; i < steps.size(); ++i)
    out.push_back({steps[i].get<std::int64_t>(), j.at("block")[i].get<int>(), j.at("beta")[i].get<double>(),
                   j.at("ce")[i].get<double>(), j.at("kl")[i].get<double>()});
  return out;
}

json trajectory_to_json(const std::vector<TrajectoryPoint>& t) {
  json out = json::array();
  for (const auto& p : t) out.push_back({{"step", p.step}, {"accuracy", p.accuracy}});
  return out;
}

std::vector<TrajectoryPoint> trajectory_from_json(const json& j) {
  std::vector<TrajectoryPoint> out;
  for (const auto& p : j) out.push_back({p.at("step").get<std::int64_t>(), p.at("accuracy").get<double>()});
  return out;
}

void log_line(const std::function<void(const std::string&)>& log, const std::string& message) {
  if (log) log(message);
}

}  // namespace

std::string format_number(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  return buf;
}

std::int64_t select_model_iid(std::span<const TrajectoryPoint> trajectory) {
  if (trajectory.empty()) fail(ErrorKind::InvalidState, "cannot select from an empty trajectory");
  const TrajectoryPoint* best = &trajectory.front();
  for (const auto& p : trajectory)
    if (p.accuracy > best->accuracy) best = &p;
  return best->step;
}

json to_json(const RunResult& r) {
  json blocks = json::object();
  for (const auto& [j, acc] : r.block_accuracy.per_block) blocks[std::to_string(j)] = acc;
  json per_class = json::array();
  for (const auto& bins : r.calibration.per_class) per_class.push_back(bins_to_json(bins));
  return {{"experiment", r.experiment},
          {"setting", to_string(r.setting)},
          {"method", to_string(r.method)},
          {"target", r.target},
          {"sources", r.sources},
          {"seed", r.seed},
          {"lambda", r.lambda},
          {"beta_final", r.beta_final},
          {"selected_step", r.selected_step},
          {"val_accuracy", r.val_accuracy},
          {"trajectory", trajectory_to_json(r.trajectory)},
          {"target_accuracy", r.target_accuracy},
          {"block_accuracy", blocks},
          {"calibration",
           {{"ece", r.calibration.ece},
            {"sce", r.calibration.sce},
            {"num_bins", r.calibration.num_bins},
            {"num_samples", r.calibration.num_samples},
            {"per_bin", bins_to_json(r.calibration.per_bin)},
            {"per_class", per_class}}},
          {"mean_step_seconds", r.mean_step_seconds},
          {"wall_seconds", r.wall_seconds}};
}

RunResult parse_run_result(const json& j) {
  RunResult r;
  try {
    r.experiment = j.at("experiment").get<std::string>();
    const auto setting = j.at("setting").get<std::string>();
    if (setting == "multi_source")
      r.setting = Setting::MultiSource;
    else if (setting == "single_source")
      r.setting = Setting::SingleSource;
    else
      fail(ErrorKind::Validation, "unknown setting " + setting);
    r.method = parse_method(j.at("method").get<std::string>());
    r.target = j.at("target").get<std::string>();
    r.sources = j.at("sources").get<std::vector<std::string>>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.lambda = j.at("lambda").get<double>();
    r.beta_final = j.at("beta_final").get<double>();
    r.selected_step = j.at("selected_step").get<std::int64_t>();
    r.val_accuracy = j.at("val_accuracy").get<double>();
    r.trajectory = trajectory_from_json(j.at("trajectory"));
    r.target_accuracy = j.at("target_accuracy").get<double>();
    for (const auto& [k, v] : j.at("block_accuracy").items()) r.block_accuracy.per_block[std::stoi(k)] = v.get<double>();
    const auto& cal = j.at("calibration");
    r.calibration.ece = cal.at("ece").get<double>();
    r.calibration.sce = cal.at("sce").get<double>();
    r.calibration.num_bins = cal.at("num_bins").get<int>();
    r.calibration.num_samples = cal.at("num_samples").get<std::size_t>();
    r.calibration.per_bin = bins_from_json(cal.at("per_bin"));
    for (const auto& bins : cal.at("per_class")) r.calibration.per_class.push_back(bins_from_json(bins));
    r.mean_step_seconds = j.at("mean_step_seconds").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, std::string("malformed run result: ") + e.what());
  }
  return r;
}

std::string csv_row(const RunResult& r) {
  std::ostringstream out;
  out << to_string(r.setting) << ',' << to_string(r.method) << ',' << r.target << ',' << r.seed << ','
      << format_number(r.lambda, 4) << ',' << format_number(r.beta_final, 4) << ','
      << format_number(r.target_accuracy, 4) << ',' << format_number(r.calibration.ece, 6) << ','
      << format_number(r.calibration.sce, 6) << ',' << r.selected_step;
  return out.str();
}

AggregateResult aggregate(std::span<const RunResult> results) {
  AggregateResult out;
  if (results.empty()) return out;
  const auto setting = results.front().setting;
  const auto method = results.front().method;
  std::map<std::string, std::vector<std::pair<std::uint64_t, double>>> by_target;
  std::vector<std::string> order;
  for (const auto& r : results) {
    if (r.setting != setting || r.method != method)
      fail(ErrorKind::Validation, "aggregate: results mix settings or methods");
    if (!by_target.count(r.target)) order.push_back(r.target);
    by_target[r.target].emplace_back(r.seed, r.target_accuracy);
  }
  std::optional<std::set<std::uint64_t>> seeds;
  for (const auto& target : order) {
    const auto& values = by_target[target];
    std::set<std::uint64_t> these;
    for (const auto& [seed, _] : values)
      if (!these.insert(seed).second)
        fail(ErrorKind::Validation, "aggregate: duplicate seed " + std::to_string(seed) + " for " + target);
    if (seeds && *seeds != these)
      fail(ErrorKind::Validation, "aggregate: target " + target + " covers a different seed set");
    seeds = these;

    AggregateCell cell;
    cell.target = target;
    cell.count = values.size();
    for (const auto& [_, v] : values) cell.mean += v;
    cell.mean /= static_cast<double>(values.size());
    double var = 0;
    for (const auto& [_, v] : values) var += (v - cell.mean) * (v - cell.mean);
    cell.std = std::sqrt(var / static_cast<double>(values.size()));
    out.per_target.push_back(cell);
  }
  for (const auto& cell : out.per_target) out.overall += cell.mean;
  out.overall /= static_cast<double>(out.per_target.size());
  return out;
}

DomainCatalog DomainCatalog::from_config(const ExperimentConfig& config) {
  DomainCatalog cat;
  cat.config_ = &config;
  if (config.data.synthetic) {
    for (const auto& d : config.data.synthetic->domains) cat.names_.push_back(d.name);
  } else {
    const fs::path root = *config.data.root;
    if (!fs::is_directory(root)) fail(ErrorKind::Io, "data.root: " + root.string() + " is not a directory");
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root))
      if (entry.is_directory() && fs::exists(entry.path() / "labels.csv")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      cat.names_.push_back(d.filename().string());
      cat.dirs_.push_back(d);
    }
    if (dirs.empty()) fail(ErrorKind::Io, "data.root: no domain folders with labels.csv under " + root.string());
  }
  return cat;
}

int DomainCatalog::index_of(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) fail(ErrorKind::Config, "unknown domain '" + name + "'");
  return static_cast<int>(it - names_.begin());
}

DomainDataset DomainCatalog::load(int index, bool as_target) const {
  const auto& cfg = *config_;
  if (cfg.data.synthetic) {
    const auto& syn = *cfg.data.synthetic;
    SyntheticDomainSpec spec = syn.domains.at(index);
    if (as_target)
      spec.spurious_correlation =
          syn.target_spurious_correlation.value_or(1.0 / std::max(1, cfg.network.num_classes));
    const SyntheticDomainSpec one[] = {spec};
    return generate_synthetic(one, syn.per_domain_count, cfg.network.num_classes, cfg.network.image_size,
                              syn.seed, syn.class_profile);
  }
  return load_folder_dataset(dirs_.at(index), dirs_.at(index) / "labels.csv", cfg.network.num_classes, index);
}

double evaluate_accuracy(const VisionTransformer<float>& model, std::span<const Image> images,
                         std::span<const int> labels, int batch_size) {
  if (images.empty()) fail(ErrorKind::Validation, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, images.size() - start);
    const auto bundle = model.forward(images.subspan(start, n), {});
    for (Eigen::Index r = 0; r < bundle.full.rows(); ++r) hits += argmax_row(bundle.full, r) == labels[start + r];
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(images.size());
}

TrainedModel train_model(const ExperimentConfig& cfg, std::span<const DomainDataset> sources, std::uint64_t seed,
                         const TrainOptions& opts) {
  const auto wall_start = Clock::now();
  std::vector<Sample> train;
  std::vector<Image> val_images;
  std::vector<int> val_labels;
  std::vector<Sample> val_raw;
  for (const auto& ds : sources) {
    if (ds.empty()) continue;
    auto [tr, va] = split_train_val(ds, cfg.split);
    for (auto& s : tr.samples) train.push_back(std::move(s));
    for (auto& s : va.samples) val_raw.push_back(std::move(s));
  }
  if (train.empty()) fail(ErrorKind::Config, "no training samples in the source domains");
  if (val_raw.empty()) fail(ErrorKind::Config, "validation split of the source domains is empty");

  AugmentConfig aug = cfg.augment;
  aug.resolution = cfg.network.image_size;
  aug.normalization = channel_stats(train);
  for (const auto& s : val_raw) {
    val_images.push_back(eval_transform(s.image, aug));
    val_labels.push_back(s.label);
  }

  TrainedModel out{.model = VisionTransformer<float>(cfg.network, derived_rng({seed, kModelStream})()), .augment = aug};
  auto& model = out.model;
  AdamW optimizer(cfg.optimizer, model.parameters());
  auto batch_rng = derived_rng({seed, kBatchStream});
  auto augment_rng = derived_rng({seed, kAugmentStream});
  auto block_rng = derived_rng({seed, kBlockStream});

  const std::int64_t T = cfg.total_steps;
  const int J = cfg.network.num_blocks;
  ParameterSet<float> best = model.parameters();
  double best_accuracy = -1.0;
  std::int64_t start_step = 0;

  std::optional<fs::path> latest_path, best_path;
  if (opts.work_dir) {
    latest_path = *opts.work_dir / "latest.ckpt";
    best_path = *opts.work_dir / "best.ckpt";
  }

  if (opts.resume && latest_path && fs::exists(*latest_path)) {
    Checkpoint ck = load_checkpoint(*latest_path);
    if (!(ck.network == cfg.network)) fail(ErrorKind::InvalidState, "checkpoint network does not match config");
    if (!ck.optimizer) fail(ErrorKind::InvalidState, "checkpoint has no optimizer state");
    if (ck.extra.value("total_steps", std::int64_t{0}) != T)
      fail(ErrorKind::InvalidState, "checkpoint was written for a different total_steps");
    model = VisionTransformer<float>(cfg.network, std::move(ck.params));
    optimizer.restore(ck.optimizer->steps, std::move(ck.optimizer->first_moment),
                      std::move(ck.optimizer->second_moment));
    start_step = ck.step;
    restore_rng(batch_rng, ck.extra.at("rng").at("batch").get<std::string>());
    restore_rng(augment_rng, ck.extra.at("rng").at("augment").get<std::string>());
    restore_rng(block_rng, ck.extra.at("rng").at("block").get<std::string>());
    out.trajectory = trajectory_from_json(ck.extra.at("trajectory"));
    out.loss_log = loss_log_from_json(ck.extra.at("loss_log"));
    best_accuracy = ck.extra.at("best_accuracy").get<double>();
    if (!out.trajectory.empty()) best = load_checkpoint(*best_path).params;
    log_line(opts.log, "resumed at step " + std::to_string(start_step));
  }

  auto grads = model.zero_gradients();
  ForwardCache<float> cache;
  std::vector<Sample> batch(cfg.batch_size);
  std::vector<Image> images(cfg.batch_size);
  std::vector<int> labels(cfg.batch_size);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  double step_seconds = 0.0;
  std::int64_t steps_here = 0;

  for (std::int64_t t = start_step + 1; t <= T; ++t) {
    const auto step_start = Clock::now();
    for (int b = 0; b < cfg.batch_size; ++b) {
      Sample s = augment(train[pick(batch_rng)], augment_rng, aug);
      labels[b] = s.label;
      images[b] = std::move(s.image);
    }
    int block = 0;
    std::set<int> routes;
    if (cfg.distill.mode != Method::ERM) {
      block = sample_block(block_rng, cfg.distill, J);
      routes.insert(block);
    }
    const auto bundle = model.forward(images, routes, &cache);
    const auto loss = total_loss(bundle, labels, block, t, T, cfg.distill);
    grads.set_zero();
    model.backward(cache, loss.d_full, loss.d_routes, grads);
    optimizer.step(model.parameters(), grads);
    step_seconds += std::chrono::duration<double>(Clock::now() - step_start).count();
    ++steps_here;
    out.loss_log.push_back({t, block, loss.beta, static_cast<double>(loss.ce), static_cast<double>(loss.kl)});

    if (t % cfg.eval_every == 0 || t == T) {
      const double acc = evaluate_accuracy(model, val_images, val_labels, cfg.eval_batch_size);
      out.trajectory.push_back({t, acc});
      const bool improved = acc > best_accuracy;
      if (improved) {
        best_accuracy = acc;
        best = model.parameters();
      }
      log_line(opts.log, "step " + std::to_string(t) + "/" + std::to_string(T) + " ce " +
                             format_number(loss.ce, 4) + " kl " + format_number(loss.kl, 4) + " val " +
                             format_number(acc, 2));
      if (latest_path) {
        if (improved) save_checkpoint(*best_path, Checkpoint{cfg.network, best, std::nullopt, t, json::object()});
        Checkpoint ck{cfg.network, model.parameters(),
                      OptimizerSnapshot{cfg.optimizer, optimizer.steps_taken(), optimizer.first_moment(),
                                        optimizer.second_moment()},
                      t, json::object()};
        ck.extra = {{"total_steps", T},
                    {"rng",
                     {{"batch", rng_state(batch_rng)},
                      {"augment", rng_state(augment_rng)},
                      {"block", rng_state(block_rng)}}},
                    {"trajectory", trajectory_to_json(out.trajectory)},
                    {"best_accuracy", best_accuracy},
                    {"loss_log", loss_log_to_json(out.loss_log)},
                    {"normalization", to_json(aug.normalization)}};
        save_checkpoint(*latest_path, ck);
      }
      if (opts.stop_after && t >= *opts.stop_after && t < T) {
        out.steps_done = t;
        out.mean_step_seconds = steps_here ? step_seconds / steps_here : 0.0;
        out.wall_seconds = std::chrono::duration<double>(Clock::now() - wall_start).count();
        return out;
      }
    }
  }

  out.selected_step = select_model_iid(out.trajectory);
  out.val_accuracy = best_accuracy;
  model = VisionTransformer<float>(cfg.network, std::move(best));
  out.steps_done = T;
  out.completed = true;
  out.mean_step_seconds = steps_here ? step_seconds / steps_here : 0.0;
  out.wall_seconds = std::chrono::duration<double>(Clock::now() - wall_start).count();
  return out;
}

TargetEvaluation evaluate_target(const TrainedModel& trained, const DomainDataset& target, int num_bins,
                                 int batch_size) {
  if (target.empty()) fail(ErrorKind::Validation, "target domain is empty");
  std::vector<Image> images;
  for (const auto& s : target.samples) images.push_back(eval_transform(s.image, trained.augment));
  const auto labels = target.labels();

  const auto classes = trained.model.config().num_classes;
  Matrix<float> logits(static_cast<Eigen::Index>(images.size()), classes);
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, images.size() - start);
    const auto bundle = trained.model.forward(std::span<const Image>(images).subspan(start, n), {});
    logits.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = bundle.full;
  }
  TargetEvaluation eval;
  eval.accuracy = top1_accuracy(logits, labels);
  eval.calibration = calibration_report(softmax_probabilities(logits), labels, num_bins);
  eval.blocks = blockwise_accuracy(trained.model, images, labels, batch_size);
  return eval;
}

namespace {

struct Job {
  std::vector<int> sources;
  std::vector<int> targets;
  std::uint64_t seed = 0;
  std::optional<fs::path> work_dir;
};

fs::path run_dir(const fs::path& experiment_dir, const std::string& target, std::uint64_t seed) {
  return experiment_dir / target / std::to_string(seed);
}

void write_results_csv(const fs::path& experiment_dir) {
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& entry : fs::recursive_directory_iterator(experiment_dir)) {
    if (entry.path().filename() != "run.json") continue;
    const auto rel = fs::relative(entry.path(), experiment_dir).string();
    if (rel.rfind("sweep/", 0) == 0) continue;
    try {
      const json doc = read_json_file(entry.path());
      if (!doc.contains("result")) continue;
      rows.emplace_back(rel, csv_row(parse_run_result(doc.at("result"))));
    } catch (const std::exception&) {
      // Partially written or foreign files are left out of the table.
    }
  }
  std::sort(rows.begin(), rows.end());
  std::string text = std::string(kResultsCsvHeader) + "\n";
  for (const auto& [_, row] : rows) text += row + "\n";
  write_text_file(experiment_dir / "results.csv", text);
}

std::vector<RunResult> execute_job(const ExperimentConfig& cfg, const DomainCatalog& catalog, const Job& job,
                                   const RunOptions& opts) {
  const auto& names = catalog.names();
  std::vector<std::string> source_names;
  for (int s : job.sources) source_names.push_back(names[s]);

  // Completed runs are reused on resume.
  if (opts.resume && opts.experiment_dir) {
    std::vector<RunResult> done;
    for (int t : job.targets) {
      const auto path = run_dir(*opts.experiment_dir, names[t], job.seed) / "run.json";
      if (!fs::exists(path)) break;
      try {
        done.push_back(parse_run_result(read_json_file(path).at("result")));
      } catch (const std::exception&) {
        break;
      }
    }
    if (done.size() == job.targets.size()) {
      log_line(opts.log, "skipping completed run(s) for seed " + std::to_string(job.seed));
      return done;
    }
  }

  std::vector<DomainDataset> sources;
  for (int s : job.sources) sources.push_back(catalog.load(s, false));

  TrainOptions train_opts;
  train_opts.work_dir = job.work_dir;
  train_opts.resume = opts.resume;
  train_opts.log = opts.log;
  const TrainedModel trained = train_model(cfg, sources, job.seed, train_opts);

  ExperimentConfig snapshot = cfg;
  snapshot.augment = trained.augment;

  std::vector<RunResult> results;
  for (int t : job.targets) {
    const auto target = catalog.load(t, true);
    const auto eval = evaluate_target(trained, target, cfg.num_bins, cfg.eval_batch_size);
    RunResult r;
    r.experiment = cfg.name;
    r.setting = cfg.setting;
    r.method = cfg.distill.mode;
    r.target = names[t];
    r.sources = source_names;
    r.seed = job.seed;
    r.lambda = cfg.distill.lambda;
    r.beta_final = cfg.distill.beta_final;
    r.selected_step = trained.selected_step;
    r.val_accuracy = trained.val_accuracy;
    r.trajectory = trained.trajectory;
    r.target_accuracy = eval.accuracy;
    r.block_accuracy = eval.blocks;
    r.calibration = eval.calibration;
    r.mean_step_seconds = trained.mean_step_seconds;
    r.wall_seconds = trained.wall_seconds;
    log_line(opts.log, "target " + r.target + " seed " + std::to_string(job.seed) + ": accuracy " +
                           format_number(r.target_accuracy, 2) + " (selected step " +
                           std::to_string(r.selected_step) + ")");

    if (opts.experiment_dir) {
      const auto dir = run_dir(*opts.experiment_dir, r.target, job.seed);
      fs::create_directories(dir);
      json artifacts = {{"results", "run.json"}};
      if (job.work_dir) {
        artifacts["checkpoint"] = fs::relative(*job.work_dir / "best.ckpt", dir).string();
        artifacts["latest_checkpoint"] = fs::relative(*job.work_dir / "latest.ckpt", dir).string();
      }
      json heatmaps = json::array();
      const int count = std::min<int>(cfg.heatmaps, static_cast<int>(target.size()));
      for (int i = 0; i < count; ++i) {
        char input_name[32], map_name[32];
        std::snprintf(input_name, sizeof(input_name), "input_%02d.png", i);
        std::snprintf(map_name, sizeof(map_name), "heatmap_%02d.png", i);
        write_png(dir / input_name, target.samples[i].image);
        const auto map = attention_heatmap(trained.model, eval_transform(target.samples[i].image, trained.augment),
                                           cfg.heatmap_rollout ? HeatmapMode::Rollout
                                                               : HeatmapMode::ClassTokenAttention);
        write_png(dir / map_name, map);
        heatmaps.push_back({{"input", input_name}, {"heatmap", map_name}});
      }
      artifacts["heatmaps"] = heatmaps;

      json run = {{"result", to_json(r)},
                  {"config", to_json(snapshot)},
                  {"loss_log", loss_log_to_json(trained.loss_log)}};
      write_text_file(dir / "run.json", run.dump(1) + "\n");
      artifacts["csv_row"] = csv_row(r);
      json manifest = {{"run_id", cfg.name + "/" + r.target + "/" + std::to_string(job.seed)},
                       {"config", to_json(snapshot)},
                       {"artifacts", artifacts},
                       {"wall_seconds", trained.wall_seconds},
                       {"mean_step_seconds", trained.mean_step_seconds}};
      write_text_file(dir / "manifest.json", manifest.dump(1) + "\n");
    }
    results.push_back(std::move(r));
  }
  return results;
}

std::vector<RunResult> execute_jobs(const ExperimentConfig& cfg, const DomainCatalog& catalog,
                                    const std::vector<Job>& jobs, const RunOptions& opts) {
  std::vector<RunResult> all;
  for (const auto& job : jobs) {
    auto results = execute_job(cfg, catalog, job, opts);
    for (auto& r : results) all.push_back(std::move(r));
  }
  if (opts.experiment_dir) write_results_csv(*opts.experiment_dir);
  return all;
}

}  // namespace

std::vector<RunResult> run_multi_source(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (cfg.setting != Setting::MultiSource) fail(ErrorKind::Config, "protocol.setting: expected multi_source");
  const auto catalog = DomainCatalog::from_config(cfg);
  const int n = static_cast<int>(catalog.names().size());
  if (n < 2) fail(ErrorKind::Config, "data: multi-source generalization needs at least 2 domains");
  std::vector<int> targets;
  if (cfg.targets.empty()) {
    for (int i = 0; i < n; ++i) targets.push_back(i);
  } else {
    for (const auto& name : cfg.targets) targets.push_back(catalog.index_of(name));
  }
  std::vector<Job> jobs;
  for (int t : targets) {
    for (auto seed : cfg.seeds) {
      Job job;
      for (int s = 0; s < n; ++s)
        if (s != t) job.sources.push_back(s);
      job.targets = {t};
      job.seed = seed;
      if (opts.experiment_dir) job.work_dir = run_dir(*opts.experiment_dir, catalog.names()[t], seed);
      jobs.push_back(std::move(job));
    }
  }
  return execute_jobs(cfg, catalog, jobs, opts);
}

std::vector<RunResult> run_single_source(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (cfg.setting != Setting::SingleSource) fail(ErrorKind::Config, "protocol.setting: expected single_source");
  const auto catalog = DomainCatalog::from_config(cfg);
  const int source = catalog.index_of(cfg.source);
  std::vector<int> targets;
  if (cfg.targets.empty()) {
    for (int i = 0; i < static_cast<int>(catalog.names().size()); ++i)
      if (i != source) targets.push_back(i);
  } else {
    for (const auto& name : cfg.targets) {
      const int t = catalog.index_of(name);
      if (t == source) fail(ErrorKind::Config, "protocol.targets: target domain equals the source domain");
      targets.push_back(t);
    }
  }
  if (targets.empty()) fail(ErrorKind::Config, "protocol.targets: no target domains besides the source");
  std::vector<Job> jobs;
  for (auto seed : cfg.seeds) {
    Job job;
    job.sources = {source};
    job.targets = targets;
    job.seed = seed;
    if (opts.experiment_dir)
      job.work_dir = *opts.experiment_dir / ("_source_" + cfg.source) / std::to_string(seed);
    jobs.push_back(std::move(job));
  }
  return execute_jobs(cfg, catalog, jobs, opts);
}

std::vector<RunResult> run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  return cfg.setting == Setting::MultiSource ? run_multi_source(cfg, opts) : run_single_source(cfg, opts);
}

std::size_t select_sweep_winner(std::span<const SweepPoint> grid) {
  if (grid.empty()) fail(ErrorKind::Config, "protocol.hparam_grid: grid is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (grid[i].val_accuracy > grid[best].val_accuracy) best = i;
  return best;
}

SweepResult sweep(const ExperimentConfig& cfg, const RunOptions& opts, const ExperimentRunner& runner) {
  if (cfg.hparam_grid.lambda.empty() || cfg.hparam_grid.beta_final.empty())
    fail(ErrorKind::Config, "protocol.hparam_grid: grid is empty");
  SweepResult out;
  std::string table = "lambda,beta_final,val_accuracy,target_accuracy,runs\n";
  std::string all_rows = std::string(kResultsCsvHeader) + "\n";
  for (double lambda : cfg.hparam_grid.lambda) {
    for (double beta : cfg.hparam_grid.beta_final) {
      ExperimentConfig point = cfg;
      point.distill.lambda = lambda;
      point.distill.beta_final = beta;
      RunOptions point_opts = opts;
      if (opts.experiment_dir)
        point_opts.experiment_dir = *opts.experiment_dir / "sweep" /
                                    ("lambda_" + format_number(lambda, 2) + "_beta_" + format_number(beta, 2));
      log_line(opts.log, "grid point lambda=" + format_number(lambda, 2) + " beta_final=" + format_number(beta, 2));
      SweepPoint sp;
      sp.lambda = lambda;
      sp.beta_final = beta;
      sp.runs = runner(point, point_opts);
      for (const auto& r : sp.runs) {
        sp.val_accuracy += r.val_accuracy;
        sp.target_accuracy += r.target_accuracy;
        all_rows += csv_row(r) + "\n";
      }
      if (!sp.runs.empty()) {
        sp.val_accuracy /= static_cast<double>(sp.runs.size());
        sp.target_accuracy /= static_cast<double>(sp.runs.size());
      }
      table += format_number(lambda, 4) + "," + format_number(beta, 4) + "," + format_number(sp.val_accuracy, 4) +
               "," + format_number(sp.target_accuracy, 4) + "," + std::to_string(sp.runs.size()) + "\n";
      out.grid.push_back(std::move(sp));
    }
  }
  out.best = select_sweep_winner(out.grid);
  if (opts.experiment_dir) {
    write_text_file(*opts.experiment_dir / "sweep.csv", table);
    write_text_file(*opts.experiment_dir / "sweep_results.csv", all_rows);
    json grid = json::array();
    for (const auto& p : out.grid)
      grid.push_back({{"lambda", p.lambda},
                      {"beta_final", p.beta_final},
                      {"val_accuracy", p.val_accuracy},
                      {"target_accuracy", p.target_accuracy}});
    json summary = {{"best", {{"lambda", out.grid[out.best].lambda}, {"beta_final", out.grid[out.best].beta_final}}},
                    {"grid", grid}};
    write_text_file(*opts.experiment_dir / "sweep.json", summary.dump(1) + "\n");
  }
  return out;
}

}  // namespace spsd
