#include "core/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "core/errors.hpp"
#include "core/image_io.hpp"

namespace spsd {

namespace fs = std::filesystem;

namespace {

const char* const kReportDir = "report";

int method_rank(Method m) {
  switch (m) {
    case Method::ERM: return 0;
    case Method::SD: return 1;
    case Method::SPSD: return 2;
  }
  return 3;
}

// Runs over the same domains in the same setting share a table.
struct TableKey {
  std::string domains;
  Setting setting;

  bool operator<(const TableKey& o) const { return std::tie(domains, setting) < std::tie(o.domains, o.setting); }
};

struct RowKey {
  int rank;
  double lambda;
  double beta_final;
  std::string experiment;

  bool operator<(const RowKey& o) const {
    return std::tie(rank, lambda, beta_final, experiment) < std::tie(o.rank, o.lambda, o.beta_final, o.experiment);
  }
};

struct Row {
  std::string label;
  std::vector<RunResult> runs;
};

struct Table {
  std::string domains;
  Setting setting;
  std::vector<std::string> targets;
  std::vector<Row> rows;
};

std::vector<Table> build_tables(const std::vector<LoadedRun>& runs) {
  // Single-source runs list one source; the domain set is the union over the experiment.
  std::map<std::pair<std::string, Setting>, std::set<std::string>> universe;
  for (const auto& r : runs) {
    auto& names = universe[{r.result.experiment, r.result.setting}];
    names.insert(r.result.sources.begin(), r.result.sources.end());
    names.insert(r.result.target);
  }
  std::map<TableKey, std::map<RowKey, std::vector<RunResult>>> grouped;
  for (const auto& r : runs) {
    const auto& res = r.result;
    std::string domains;
    for (const auto& n : universe[{res.experiment, res.setting}]) domains += (domains.empty() ? "" : "+") + n;
    const bool tuned = res.method != Method::ERM;
    grouped[{domains, res.setting}][{method_rank(res.method), tuned ? res.lambda : 0.0, tuned ? res.beta_final : 0.0,
                                     res.experiment}]
        .push_back(res);
  }

  std::vector<Table> tables;
  for (auto& [tkey, rows] : grouped) {
    Table table{tkey.domains, tkey.setting, {}, {}};
    // Methods appearing more than once get their experiment and hyperparameters in the label.
    std::map<int, int> variants;
    for (const auto& [key, _] : rows) ++variants[key.rank];
    std::set<std::string> targets;
    for (auto& [key, list] : rows) {
      std::string label = to_string(list.front().method);
      if (variants[key.rank] > 1) {
        label += " (" + key.experiment;
        if (key.rank != method_rank(Method::ERM))
          label += ", lambda=" + format_number(key.lambda, 2) + ", beta_final=" + format_number(key.beta_final, 2);
        label += ")";
      }
      std::sort(list.begin(), list.end(), [](const RunResult& a, const RunResult& b) {
        return std::tie(a.target, a.seed) < std::tie(b.target, b.seed);
      });
      for (const auto& r : list) targets.insert(r.target);
      table.rows.push_back({label, list});
    }
    table.targets.assign(targets.begin(), targets.end());
    tables.push_back(std::move(table));
  }
  return tables;
}

struct Stat {
  double mean = 0, std = 0;
  std::size_t n = 0;
};

Stat stat_of(const std::vector<double>& v) {
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(v.size()));
  return s;
}

std::vector<double> values_for(const Row& row, const std::string& target,
                               const std::function<double(const RunResult&)>& field) {
  std::vector<double> out;
  for (const auto& r : row.runs)
    if (r.target == target) out.push_back(field(r));
  return out;
}

std::string escape_csv(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_accuracy_tables(const std::vector<Table>& tables, const fs::path& dir,
                           const std::function<void(const std::string&)>& warn, ReportSummary& summary) {
  std::ostringstream md, csv;
  csv << "domains,setting,method,target,mean,std,runs\n";
  md << "# Target accuracy (%)\n";
  for (const auto& table : tables) {
    md << "\n## " << table.domains << " (" << to_string(table.setting) << ")\n\n| Method |";
    for (const auto& t : table.targets) md << ' ' << t << " |";
    md << " Avg |\n|---|";
    for (std::size_t i = 0; i <= table.targets.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& row : table.rows) {
      md << "| " << row.label << " |";
      for (const auto& t : table.targets) {
        const auto s = stat_of(values_for(row, t, [](const RunResult& r) { return r.target_accuracy; }));
        md << ' ' << (s.n ? format_mean_std(s.mean, s.std) : "-") << " |";
        if (s.n)
          csv << escape_csv(table.domains) << ',' << to_string(table.setting) << ',' << escape_csv(row.label)
              << ',' << escape_csv(t) << ',' << format_number(s.mean, 4) << ',' << format_number(s.std, 4) << ','
              << s.n << '\n';
      }
      std::string avg = "-";
      try {
        const auto agg = aggregate(row.runs);
        avg = format_number(agg.overall, 1);
        csv << escape_csv(table.domains) << ',' << to_string(table.setting) << ',' << escape_csv(row.label)
            << ",Avg," << format_number(agg.overall, 4) << ",," << row.runs.size() << '\n';
      } catch (const Error& e) {
        if (warn) warn("warning: no average for " + table.domains + " " + row.label + ": " + e.what());
      }
      md << ' ' << avg << " |\n";
    }
  }
  write_text_file(dir / "accuracy.md", md.str());
  write_text_file(dir / "accuracy.csv", csv.str());
  summary.files.push_back(dir / "accuracy.md");
  summary.files.push_back(dir / "accuracy.csv");
}

void write_calibration_tables(const std::vector<Table>& tables, const fs::path& dir, ReportSummary& summary) {
  std::ostringstream md, csv;
  csv << "domains,setting,method,target,num_bins,ece_mean,ece_std,sce_mean,sce_std,runs\n";
  md << "# Calibration error (%)\n";
  for (const auto& table : tables) {
    md << "\n## " << table.domains << " (" << to_string(table.setting) << ")\n\n| Method | Target | Bins | ECE | SCE |\n"
       << "|---|---|---|---|---|\n";
    for (const auto& row : table.rows) {
      for (const auto& t : table.targets) {
        const auto e = stat_of(values_for(row, t, [](const RunResult& r) { return 100.0 * r.calibration.ece; }));
        if (!e.n) continue;
        const auto s = stat_of(values_for(row, t, [](const RunResult& r) { return 100.0 * r.calibration.sce; }));
        int bins = 0;
        for (const auto& r : row.runs)
          if (r.target == t) bins = r.calibration.num_bins;
        md << "| " << row.label << " | " << t << " | " << bins << " | " << format_mean_std(e.mean, e.std) << " | "
           << format_mean_std(s.mean, s.std) << " |\n";
        csv << escape_csv(table.domains) << ',' << to_string(table.setting) << ',' << escape_csv(row.label) << ','
            << escape_csv(t) << ',' << bins << ',' << format_number(e.mean, 4) << ',' << format_number(e.std, 4)
            << ',' << format_number(s.mean, 4) << ',' << format_number(s.std, 4) << ',' << e.n << '\n';
      }
    }
  }
  write_text_file(dir / "calibration.md", md.str());
  write_text_file(dir / "calibration.csv", csv.str());
  summary.files.push_back(dir / "calibration.md");
  summary.files.push_back(dir / "calibration.csv");
}

std::string flat_name(const std::string& relative_dir) {
  std::string out = relative_dir;
  std::replace(out.begin(), out.end(), '/', '_');
  return out.empty() ? "run" : out;
}

// Accuracy per block route as a line plot.
std::string block_plot_svg(const LoadedRun& run) {
  const auto& blocks = run.result.block_accuracy.per_block;
  const int width = 360, height = 240, left = 48, right = 16, top = 32, bottom = 40;
  const double pw = width - left - right, ph = height - top - bottom;
  const int n = static_cast<int>(blocks.size());
  auto x_of = [&](int i) { return left + (n > 1 ? pw * i / (n - 1) : pw / 2); };
  auto y_of = [&](double acc) { return top + ph * (1.0 - std::clamp(acc, 0.0, 100.0) / 100.0); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"18\">" << to_string(run.result.method) << " " << run.result.target << " seed "
    << run.result.seed << "</text>\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    const double y = y_of(tick);
    s << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << format_number(y, 1) << "\" y2=\""
      << format_number(y, 1) << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << format_number(y + 4, 1) << "\" text-anchor=\"end\">" << tick
      << "</text>\n";
  }
  std::string points;
  int i = 0;
  for (const auto& [block, acc] : blocks) {
    const double x = x_of(i), y = y_of(acc);
    points += format_number(x, 1) + "," + format_number(y, 1) + " ";
    s << "<circle cx=\"" << format_number(x, 1) << "\" cy=\"" << format_number(y, 1)
      << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    s << "<text x=\"" << format_number(x, 1) << "\" y=\"" << height - bottom + 16 << "\" text-anchor=\"middle\">"
      << block << "</text>\n";
    ++i;
  }
  if (!points.empty()) points.pop_back();
  s << "<polyline points=\"" << points << "\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 6 << "\" text-anchor=\"middle\">block</text>\n";
  s << "<text x=\"12\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 12 " << top + ph / 2
    << ")\" text-anchor=\"middle\">accuracy (%)</text>\n";
  s << "</svg>\n";
  return s.str();
}

// Inputs on the top row, heatmaps below, 2 px white gutters.
bool write_heatmap_grid(const fs::path& run_dir, const fs::path& out) {
  std::vector<Image> inputs, maps;
  for (int i = 0; i < 100; ++i) {
    char in_name[32], map_name[32];
    std::snprintf(in_name, sizeof(in_name), "input_%02d.png", i);
    std::snprintf(map_name, sizeof(map_name), "heatmap_%02d.png", i);
    if (!fs::exists(run_dir / in_name) || !fs::exists(run_dir / map_name)) break;
    inputs.push_back(read_png(run_dir / in_name));
    maps.push_back(read_png(run_dir / map_name));
  }
  if (inputs.empty()) return false;
  const int gap = 2;
  int cell_h = 0, cell_w = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    cell_h = std::max({cell_h, inputs[i].height, maps[i].height});
    cell_w = std::max({cell_w, inputs[i].width, maps[i].width});
  }
  const int cols = static_cast<int>(inputs.size());
  Image grid(2 * cell_h + 3 * gap, cols * cell_w + (cols + 1) * gap, 1.0f);
  auto paste = [&](const Image& img, int row, int col) {
    const int y0 = gap + row * (cell_h + gap), x0 = gap + col * (cell_w + gap);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) grid.at(y0 + y, x0 + x, c) = img.at(y, x, c);
  };
  for (int i = 0; i < cols; ++i) {
    paste(inputs[i], 0, i);
    paste(maps[i], 1, i);
  }
  write_png(out, grid);
  return true;
}

}  // namespace

std::string format_mean_std(double mean, double std) {
  return format_number(mean, 1) + "±" + format_number(std, 1);
}

std::vector<LoadedRun> collect_runs(const fs::path& root, std::vector<std::string>& skipped) {
  std::vector<fs::path> files;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_directory() && it.depth() == 0 && it->path().filename() == kReportDir) {
      it.disable_recursion_pending();
      continue;
    }
    if (it->path().filename() == "run.json") files.push_back(it->path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LoadedRun> runs;
  for (const auto& path : files) {
    const auto rel = fs::relative(path.parent_path(), root).generic_string();
    try {
      const json doc = read_json_file(path);
      if (!doc.contains("result")) fail(ErrorKind::Validation, "no result section");
      runs.push_back({rel == "." ? "" : rel, parse_run_result(doc.at("result"))});
    } catch (const std::exception& e) {
      skipped.push_back(path.string() + ": " + e.what());
    }
  }
  return runs;
}

ReportSummary generate_report(const fs::path& root, const std::function<void(const std::string&)>& warn) {
  if (!fs::is_directory(root)) fail(ErrorKind::Io, "results directory " + root.string() + " does not exist");
  ReportSummary summary;
  summary.runs = collect_runs(root, summary.skipped);
  for (const auto& s : summary.skipped)
    if (warn) warn("warning: skipping " + s);
  if (summary.runs.empty())
    fail(ErrorKind::Io, "no readable run results under " + root.string() + " (" +
                            std::to_string(summary.skipped.size()) + " skipped)");

  const fs::path dir = root / kReportDir;
  fs::create_directories(dir / "blocks");
  fs::create_directories(dir / "heatmaps");
  const auto tables = build_tables(summary.runs);
  write_accuracy_tables(tables, dir, warn, summary);
  write_calibration_tables(tables, dir, summary);

  for (const auto& run : summary.runs) {
    const std::string name = flat_name(run.relative_dir);
    if (!run.result.block_accuracy.per_block.empty()) {
      const auto path = dir / "blocks" / (name + ".svg");
      write_text_file(path, block_plot_svg(run));
      summary.files.push_back(path);
    }
    const auto grid_path = dir / "heatmaps" / (name + ".png");
    try {
      if (write_heatmap_grid(root / run.relative_dir, grid_path)) summary.files.push_back(grid_path);
    } catch (const Error& e) {
      if (warn) warn("warning: no heatmap grid for " + run.relative_dir + ": " + e.what());
    }
  }
  return summary;
}

}  // namespace spsd
