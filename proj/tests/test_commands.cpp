#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "core/commands.hpp"
#include "core/errors.hpp"

using namespace spsd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("spsd_cmd_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json tiny_doc(const std::string& name, const std::string& mode, int steps) {
  json doc = json::parse(R"({
    "network": {"image_size": 16, "patch_size": 8, "embed_dim": 16, "num_blocks": 2, "num_heads": 2,
                "mlp_ratio": 2.0, "num_classes": 3},
    "data": {"synthetic": {"per_domain_count": 30, "seed": 2, "domains": [
      {"name": "a", "background_tint": [0.5, 0.3, 0.3], "texture_seed": 1, "spurious_correlation": 0.8},
      {"name": "b", "background_tint": [0.3, 0.5, 0.3], "texture_seed": 2, "spurious_correlation": 0.8},
      {"name": "c", "background_tint": [0.3, 0.3, 0.5], "texture_seed": 3, "spurious_correlation": 0.8}]}},
    "distill": {"lambda": 0.7, "beta_final": 0.8},
    "protocol": {"targets": ["a"], "seeds": [0], "eval_every": 5, "batch_size": 8, "eval_batch_size": 64,
                 "heatmaps": 2}
  })");
  doc["name"] = name;
  doc["distill"]["mode"] = mode;
  doc["protocol"]["total_steps"] = steps;
  return doc;
}

fs::path write_config(const fs::path& dir, const json& doc) {
  const auto path = dir / (doc.at("name").get<std::string>() + ".json");
  std::ofstream(path) << doc.dump(2);
  return path;
}

CommandOptions options(const fs::path& config, const fs::path& out) {
  CommandOptions o;
  o.config_path = config;
  o.out_dir = out;
  return o;
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

}  // namespace

TEST(MakeData, WritesEveryDomainDeterministically) {
  const auto out = scratch("makedata");
  const auto opts = options(SPSD_SOURCE_DIR "/configs/synthetic_dg.json", out / "data");
  const auto dirs = cmd_make_data(opts);
  ASSERT_EQ(dirs.size(), 4u);
  for (const auto& d : dirs) {
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(d)) pngs += e.path().extension() == ".png";
    EXPECT_EQ(pngs, 500);
    EXPECT_TRUE(fs::exists(d / "labels.csv"));
  }
  const auto first = snapshot_tree(out / "data");
  EXPECT_EQ(first.size(), 2004u);
  fs::remove_all(out / "data");
  cmd_make_data(opts);
  EXPECT_TRUE(snapshot_tree(out / "data") == first);
  fs::remove_all(out);
}

TEST(MakeData, InvalidDomainNamesFieldAndWritesNothing) {
  const auto dir = scratch("baddata");
  auto doc = tiny_doc("bad", "ERM", 5);
  doc["data"]["synthetic"]["domains"][1]["spurious_correlation"] = 1.5;
  try {
    cmd_make_data(options(write_config(dir, doc), dir / "out"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Validation);
    EXPECT_NE(std::string(e.what()).find("spurious_correlation"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(dir / "out"));
  fs::remove_all(dir);
}

TEST(Train, ErmSmokeRunWritesManifest) {
  const auto dir = scratch("erm");
  const auto outcome = cmd_train(options(write_config(dir, tiny_doc("tiny_erm", "ERM", 50)), dir / "out"));
  ASSERT_EQ(outcome.results.size(), 1u);
  EXPECT_EQ(outcome.experiment_dir, dir / "out" / "runs" / "tiny_erm");
  const auto run = outcome.experiment_dir / "a" / "0";
  const auto manifest = read_json_file(run / "manifest.json");
  EXPECT_EQ(manifest.at("run_id"), "tiny_erm/a/0");
  EXPECT_GT(manifest.at("mean_step_seconds").get<double>(), 0.0);
  EXPECT_GE(manifest.at("wall_seconds").get<double>(), manifest.at("mean_step_seconds").get<double>());
  for (const auto& key : {"results", "checkpoint", "latest_checkpoint"})
    EXPECT_TRUE(fs::exists(run / manifest.at("artifacts").at(key).get<std::string>())) << key;
  EXPECT_EQ(manifest.at("artifacts").at("heatmaps").size(), 2u);
  EXPECT_EQ(manifest.at("artifacts").at("csv_row"), csv_row(outcome.results[0]));

  // The snapshot is a complete config that reproduces the run.
  const auto snapshot = parse_experiment_config(manifest.at("config"));
  EXPECT_EQ(snapshot.total_steps, 50);
  auto again_doc = manifest.at("config");
  again_doc["name"] = "tiny_erm_again";
  const auto again = cmd_train(options(write_config(dir, again_doc), dir / "out"));
  EXPECT_EQ(again.results[0].target_accuracy, outcome.results[0].target_accuracy);
  EXPECT_EQ(again.results[0].selected_step, outcome.results[0].selected_step);

  const auto csv = slurp(outcome.experiment_dir / "results.csv");
  EXPECT_EQ(csv, std::string(kResultsCsvHeader) + "\n" + csv_row(outcome.results[0]) + "\n");
  fs::remove_all(dir);
}

TEST(Train, SelfDistillationRecordsBothLossTerms) {
  const auto dir = scratch("spsd");
  const auto outcome = cmd_train(options(write_config(dir, tiny_doc("tiny_spsd", "SPSD", 20)), dir / "out"));
  const auto log = read_json_file(outcome.experiment_dir / "a" / "0" / "run.json").at("loss_log");
  ASSERT_EQ(log.at("step").size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(log.at("step")[i], i + 1);
    EXPECT_GT(log.at("ce")[i].get<double>(), 0.0);
    EXPECT_GE(log.at("kl")[i].get<double>(), 0.0);
    EXPECT_EQ(log.at("block")[i], 1);
  }
  EXPECT_EQ(outcome.results[0].lambda, 0.7);
  EXPECT_EQ(outcome.results[0].beta_final, 0.8);
  fs::remove_all(dir);
}

TEST(Train, ResumeContinuesOnSchedule) {
  const auto dir = scratch("resume");
  const auto config = write_config(dir, tiny_doc("tiny_resume", "SPSD", 20));
  const auto straight = cmd_train(options(config, dir / "straight"));

  // Interrupt a run halfway, as a killed process would leave it.
  auto opts = options(config, dir / "out");
  const auto cfg = prepare_config(opts);
  const auto catalog = DomainCatalog::from_config(cfg);
  std::vector<DomainDataset> sources{catalog.load(1, false), catalog.load(2, false)};
  TrainOptions partial;
  partial.work_dir = experiment_dir(dir / "out", cfg) / "a" / "0";
  partial.stop_after = 10;
  ASSERT_FALSE(train_model(cfg, sources, 0, partial).completed);
  EXPECT_FALSE(fs::exists(*partial.work_dir / "run.json"));

  std::vector<std::string> lines;
  opts.resume = true;
  opts.log = [&](const std::string& s) { lines.push_back(s); };
  const auto resumed = cmd_train(opts);
  EXPECT_TRUE(std::any_of(lines.begin(), lines.end(),
                          [](const std::string& s) { return s.find("resumed at step 10") != std::string::npos; }));
  EXPECT_EQ(resumed.results[0].target_accuracy, straight.results[0].target_accuracy);
  EXPECT_EQ(resumed.results[0].calibration.ece, straight.results[0].calibration.ece);

  const auto log = read_json_file(resumed.experiment_dir / "a" / "0" / "run.json").at("loss_log");
  ASSERT_EQ(log.at("step").size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto step = log.at("step")[i].get<std::int64_t>();
    EXPECT_EQ(log.at("beta")[i].get<double>(), static_cast<float>(beta_at(step, {0.8, 20})));
  }
  EXPECT_EQ(slurp(resumed.experiment_dir / "results.csv"), slurp(straight.experiment_dir / "results.csv"));
  fs::remove_all(dir);
}

TEST(Train, ConfigErrorsComeBeforeOutput) {
  const auto dir = scratch("badtrain");
  auto doc = tiny_doc("bad_targets", "ERM", 5);
  doc["protocol"]["targets"] = {"zzz"};
  EXPECT_THROW(cmd_train(options(write_config(dir, doc), dir / "out")), Error);
  doc = tiny_doc("bad_key", "ERM", 5);
  doc["protocol"]["epochs"] = 3;
  try {
    cmd_train(options(write_config(dir, doc), dir / "out"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("protocol.epochs"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(dir / "out"));
  fs::remove_all(dir);
}

TEST(Train, SeedOverride) {
  const auto dir = scratch("seed");
  auto doc = tiny_doc("tiny_seed", "ERM", 5);
  doc["protocol"]["seeds"] = {0, 1, 2};
  auto opts = options(write_config(dir, doc), dir / "out");
  opts.seed = 7;
  const auto outcome = cmd_train(opts);
  ASSERT_EQ(outcome.results.size(), 1u);
  EXPECT_EQ(outcome.results[0].seed, 7u);
  EXPECT_TRUE(fs::exists(outcome.experiment_dir / "a" / "7" / "run.json"));
  fs::remove_all(dir);
}

TEST(Train, OutputRootFallsBackToEnvironment) {
  const auto dir = scratch("env");
  ::setenv("SPSD_OUT_DIR", (dir / "from_env").c_str(), 1);
  EXPECT_EQ(resolve_out_dir(std::nullopt), dir / "from_env");
  EXPECT_EQ(resolve_out_dir(fs::path("explicit")), fs::path("explicit"));
  ::unsetenv("SPSD_OUT_DIR");
  EXPECT_EQ(resolve_out_dir(std::nullopt), fs::path("spsd_out"));
  fs::remove_all(dir);
}

TEST(SweepCommand, FullGridAndResume) {
  const auto dir = scratch("sweep");
  auto doc = tiny_doc("tiny_sweep", "SPSD", 2);
  doc["protocol"]["eval_every"] = 1;
  doc["protocol"]["heatmaps"] = 0;
  auto opts = options(write_config(dir, doc), dir / "out");
  const auto result = cmd_sweep(opts);
  ASSERT_EQ(result.grid.size(), 20u);
  const auto exp = dir / "out" / "runs" / "tiny_sweep";
  std::istringstream table(slurp(exp / "sweep.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(table, line)) ++rows;
  EXPECT_EQ(rows, 20);
  const auto summary = read_json_file(exp / "sweep.json");
  EXPECT_EQ(summary.at("best").at("lambda").get<double>(), result.grid[result.best].lambda);
  EXPECT_EQ(summary.at("grid").size(), 20u);

  // Interrupt: one grid point lost its result.
  fs::remove(exp / "sweep" / "lambda_0.50_beta_0.40" / "a" / "0" / "run.json");
  std::vector<std::string> lines;
  opts.resume = true;
  opts.log = [&](const std::string& s) { lines.push_back(s); };
  const auto again = cmd_sweep(opts);
  EXPECT_EQ(std::count_if(lines.begin(), lines.end(),
                          [](const std::string& s) { return s.find("skipping") != std::string::npos; }),
            19);
  EXPECT_EQ(again.best, result.best);
  for (std::size_t i = 0; i < 20; ++i)
    EXPECT_EQ(again.grid[i].target_accuracy, result.grid[i].target_accuracy);

  auto empty = doc;
  empty["name"] = "tiny_empty";
  empty["protocol"]["hparam_grid"] = {{"lambda", json::array()}, {"beta_final", {0.2}}};
  try {
    cmd_sweep(options(write_config(dir, empty), dir / "out"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  EXPECT_FALSE(fs::exists(dir / "out" / "runs" / "tiny_empty"));
  fs::remove_all(dir);
}

TEST(Report, TablesPlotsAndStability) {
  const auto dir = scratch("report");
  std::map<std::string, std::vector<RunResult>> by_method;
  // Deliberately trained out of table order.
  for (const std::string method : {"SPSD", "ERM", "SD"}) {
    auto doc = tiny_doc("tiny_" + method, method, 10);
    doc["protocol"]["seeds"] = {0, 1, 2};
    by_method[method] = cmd_train(options(write_config(dir, doc), dir / "out")).results;
  }
  const auto root = dir / "out" / "runs";
  std::vector<std::string> lines;
  const auto summary = cmd_report(root, [&](const std::string& s) { lines.push_back(s); });
  EXPECT_EQ(summary.runs.size(), 9u);
  EXPECT_TRUE(summary.skipped.empty());

  const auto md = slurp(root / "report" / "accuracy.md");
  const auto erm = md.find("| ERM |"), sd = md.find("| SD |"), spsd = md.find("| SPSD |");
  ASSERT_NE(erm, std::string::npos);
  ASSERT_NE(sd, std::string::npos);
  ASSERT_NE(spsd, std::string::npos);
  EXPECT_LT(erm, sd);
  EXPECT_LT(sd, spsd);
  EXPECT_NE(md.find("## a+b+c (multi_source)"), std::string::npos);
  for (const auto& [method, results] : by_method) {
    const auto agg = aggregate(results);
    const auto cell = format_mean_std(agg.per_target[0].mean, agg.per_target[0].std);
    const auto row_start = md.find("| " + method + " |");
    const auto row = md.substr(row_start, md.find('\n', row_start) - row_start);
    EXPECT_EQ(row, "| " + method + " | " + cell + " | " + format_number(agg.overall, 1) + " |");
  }

  int svgs = 0;
  for (const auto& e : fs::directory_iterator(root / "report" / "blocks")) svgs += e.path().extension() == ".svg";
  EXPECT_EQ(svgs, 9);
  EXPECT_TRUE(fs::exists(root / "report" / "blocks" / "tiny_SD_a_1.svg"));
  EXPECT_TRUE(fs::exists(root / "report" / "heatmaps" / "tiny_SD_a_1.png"));
  EXPECT_TRUE(fs::exists(root / "report" / "calibration.md"));

  const auto before = snapshot_tree(root / "report");
  cmd_report(root);
  EXPECT_TRUE(snapshot_tree(root / "report") == before);

  std::ofstream(root / "tiny_SD" / "a" / "2" / "run.json") << "{ truncated";
  lines.clear();
  const auto partial = cmd_report(root, [&](const std::string& s) { lines.push_back(s); });
  EXPECT_EQ(partial.runs.size(), 8u);
  ASSERT_EQ(partial.skipped.size(), 1u);
  EXPECT_NE(partial.skipped[0].find("tiny_SD/a/2/run.json"), std::string::npos);
  EXPECT_TRUE(std::any_of(lines.begin(), lines.end(), [](const std::string& s) {
    return s.find("warning: skipping") != std::string::npos && s.find("tiny_SD/a/2") != std::string::npos;
  }));

  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.path().filename() == "run.json") std::ofstream(e.path()) << "[]";
  try {
    cmd_report(root);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
  fs::remove_all(dir);
}
