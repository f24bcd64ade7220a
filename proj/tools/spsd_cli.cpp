#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "spsd/spsd.h"

namespace {

void print_line(const char* line, void*) {
  std::printf("%s\n", line);
  std::fflush(stdout);
}

int finish(spsd_status status) {
  if (status == SPSD_OK) return 0;
  std::fprintf(stderr, "error (%s): %s\n", spsd_status_string(status), spsd_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-distillation training for vision transformers under domain shift"};
  app.require_subcommand(1);

  std::string config, out;
  std::uint64_t seed = 0;
  bool resume = false;

  auto add_common = [&](CLI::App* cmd, bool training) {
    cmd->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out, "output root (default: $SPSD_OUT_DIR or ./spsd_out)");
    if (training) {
      cmd->add_option("--seed", seed, "run only this seed");
      cmd->add_flag("--resume", resume, "continue from checkpoints and skip finished runs");
    }
  };

  auto* make_data = app.add_subcommand("make-data", "write synthetic domains as image folders");
  add_common(make_data, false);
  auto* train = app.add_subcommand("train", "train and evaluate every configured run");
  add_common(train, true);
  auto* sweep = app.add_subcommand("sweep", "grid search over lambda and beta_final");
  add_common(sweep, true);
  auto* report = app.add_subcommand("report", "tables and plots from finished runs");
  std::string results_dir;
  report->add_option("dir", results_dir, "results directory (default: <out>/runs)");
  report->add_option("--out", out, "output root used when dir is omitted");

  CLI11_PARSE(app, argc, argv);

  spsd_command_options opts{};
  opts.config_path = config.c_str();
  opts.out_dir = out.empty() ? nullptr : out.c_str();
  opts.resume = resume ? 1 : 0;
  opts.log = print_line;
  for (auto* cmd : {train, sweep}) {
    if (cmd->parsed() && cmd->count("--seed") > 0) {
      opts.has_seed = 1;
      opts.seed = seed;
    }
  }

  if (make_data->parsed()) return finish(spsd_make_data(&opts));
  if (train->parsed()) return finish(spsd_train(&opts));
  if (sweep->parsed()) return finish(spsd_sweep(&opts));

  if (results_dir.empty()) {
    std::string root = out;
    if (root.empty()) {
      const char* env = std::getenv("SPSD_OUT_DIR");
      root = env && *env ? env : "spsd_out";
    }
    results_dir = root + "/runs";
  }
  return finish(spsd_report(results_dir.c_str(), print_line, nullptr));
}
