#include "maoml/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "maoml/error.hpp"

namespace maoml::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double mean(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string fixed2(double x) {
  if (std::isnan(x)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string exact(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string pct(double fraction) { return fixed2(100.0 * fraction); }

std::string pct_pm(double m, double s) {
  if (std::isnan(m)) return "n/a";
  return pct(m) + " ± " + pct(s);
}

bool in_group(const CellResult& c, Method m, tasks::Setting s) { return c.key.method == m && c.key.setting == s; }

std::vector<std::uint64_t> seeds_of(const RunReport& r, Method m, tasks::Setting s) {
  std::vector<std::uint64_t> seeds;
  for (const auto& c : r.cells)
    if (in_group(c, m, s) && std::find(seeds.begin(), seeds.end(), c.key.seed) == seeds.end())
      seeds.push_back(c.key.seed);
  return seeds;
}

/// Task results of one (method, setting, seed), from every ok cell.
std::vector<const TaskResult*> task_results(const RunReport& r, Method m, tasks::Setting s, std::uint64_t seed) {
  std::vector<const TaskResult*> out;
  for (const auto& c : r.cells)
    if (c.ok && in_group(c, m, s) && c.key.seed == seed)
      for (const auto& t : c.tasks) out.push_back(&t);
  return out;
}

}  // namespace

std::vector<std::pair<Method, tasks::Setting>> report_groups(const RunReport& report) {
  std::vector<std::pair<Method, tasks::Setting>> groups;
  for (const auto& c : report.cells) {
    std::pair g{c.key.method, c.key.setting};
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) groups.push_back(g);
  }
  return groups;
}

std::vector<SummaryRow> summarize(const RunReport& report) {
  std::vector<SummaryRow> rows;
  for (auto [m, s] : report_groups(report)) {
    SummaryRow row{m, s, 0.0, 0.0, 0.0, {}, 0};
    std::vector<double> maes;
    for (const auto& c : report.cells)
      if (in_group(c, m, s) && !c.ok) ++row.failed_cells;
    for (auto seed : seeds_of(report, m, s)) {
      const auto results = task_results(report, m, s, seed);
      if (results.empty()) continue;
      std::vector<double> acc, mae;
      for (const auto* t : results) {
        acc.push_back(t->accuracy);
        mae.push_back(t->mae);
      }
      row.seed_accuracy.push_back(mean(acc));
      maes.push_back(mean(mae));
    }
    row.mean_accuracy = mean(row.seed_accuracy);
    row.std_accuracy = sample_std(row.seed_accuracy);
    row.mean_mae = mean(maes);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<PerTaskRow> per_task_table(const RunReport& report) {
  std::vector<PerTaskRow> rows;
  for (auto [m, s] : report_groups(report)) {
    std::vector<double> task_means, task_maes;
    for (const auto& id : report.task_ids) {
      std::vector<double> acc, mae;
      for (auto seed : seeds_of(report, m, s))
        for (const auto* t : task_results(report, m, s, seed))
          if (t->task_id == id) {
            acc.push_back(t->accuracy);
            mae.push_back(t->mae);
          }
      if (acc.empty()) continue;
      rows.push_back({m, s, id, mean(acc), sample_std(acc), mean(mae)});
      task_means.push_back(rows.back().mean_accuracy);
      task_maes.push_back(rows.back().mean_mae);
    }
    // the Average row's spread is the spread of the per-seed grand averages
    std::vector<double> seed_avg;
    for (auto seed : seeds_of(report, m, s)) {
      std::vector<double> acc;
      for (const auto* t : task_results(report, m, s, seed)) acc.push_back(t->accuracy);
      if (!acc.empty()) seed_avg.push_back(mean(acc));
    }
    rows.push_back({m, s, "Average", mean(task_means), sample_std(seed_avg), mean(task_maes)});
  }
  return rows;
}

std::vector<PerLabelRow> per_label_table(const RunReport& report) {
  std::vector<PerLabelRow> rows;
  const std::size_t k = report.class_names.size();
  for (auto [m, s] : report_groups(report)) {
    std::vector<std::vector<double>> per_label(k);
    for (auto seed : seeds_of(report, m, s)) {
      std::vector<std::size_t> count(k, 0), correct(k, 0);
      for (const auto* t : task_results(report, m, s, seed))
        for (std::size_t l = 0; l < k && l < t->per_label_count.size(); ++l) {
          count[l] += t->per_label_count[l];
          correct[l] += t->per_label_correct[l];
        }
      for (std::size_t l = 0; l < k; ++l)
        if (count[l] > 0) per_label[l].push_back(static_cast<double>(correct[l]) / static_cast<double>(count[l]));
    }
    std::vector<double> present;
    for (std::size_t l = 0; l < k; ++l) {
      PerLabelRow row{m, s, l, report.class_names[l], std::nullopt};
      if (!per_label[l].empty()) {
        row.accuracy = mean(per_label[l]);
        present.push_back(*row.accuracy);
      }
      rows.push_back(row);
    }
    PerLabelRow avg{m, s, k, "Average", std::nullopt};
    if (!present.empty()) avg.accuracy = mean(present);
    rows.push_back(avg);
  }
  return rows;
}

// ----------------------------------------------------------------------------

std::string summary_csv(const RunReport& report) {
  std::ostringstream os;
  os << "method,setting,accuracy_pct,accuracy_std_pct,mae,seeds,failed_cells,accuracy,accuracy_std\n";
  for (const auto& r : summarize(report))
    os << to_string(r.method) << ',' << tasks::to_string(r.setting) << ',' << pct(r.mean_accuracy) << ','
       << pct(r.std_accuracy) << ',' << fixed2(r.mean_mae) << ',' << r.seed_accuracy.size() << ',' << r.failed_cells
       << ',' << exact(r.mean_accuracy) << ',' << exact(r.std_accuracy) << '\n';
  return os.str();
}

std::string per_task_csv(const RunReport& report) {
  std::ostringstream os;
  os << "method,setting,task_id,accuracy_pct,accuracy_std_pct,mae,accuracy\n";
  for (const auto& r : per_task_table(report))
    os << to_string(r.method) << ',' << tasks::to_string(r.setting) << ',' << r.task_id << ','
       << pct(r.mean_accuracy) << ',' << pct(r.std_accuracy) << ',' << fixed2(r.mean_mae) << ','
       << exact(r.mean_accuracy) << '\n';
  return os.str();
}

std::string per_label_csv(const RunReport& report) {
  std::ostringstream os;
  os << "method,setting,label,label_name,accuracy_pct,accuracy\n";
  for (const auto& r : per_label_table(report)) {
    os << to_string(r.method) << ',' << tasks::to_string(r.setting) << ',';
    if (r.label == report.class_names.size())
      os << "avg";
    else
      os << r.label;
    os << ',' << r.label_name << ',' << (r.accuracy ? pct(*r.accuracy) : "n/a") << ','
       << (r.accuracy ? exact(*r.accuracy) : "") << '\n';
  }
  return os.str();
}

std::string markdown_tables(const RunReport& report) {
  const auto summary = summarize(report);
  const auto groups = report_groups(report);
  const std::vector<Method> all_methods = {Method::ft, Method::maml, Method::maoml};
  const std::vector<tasks::Setting> all_settings = {tasks::Setting::zero_shot, tasks::Setting::few_shot};
  auto has = [&](Method m, tasks::Setting s) {
    return std::find(groups.begin(), groups.end(), std::pair{m, s}) != groups.end();
  };
  std::vector<tasks::Setting> settings;
  for (auto s : all_settings)
    for (auto m : all_methods)
      if (has(m, s) && std::find(settings.begin(), settings.end(), s) == settings.end()) settings.push_back(s);
  auto setting_title = [](tasks::Setting s) { return s == tasks::Setting::zero_shot ? "Zero-shot" : "Few-shot"; };
  auto method_title = [](Method m) {
    switch (m) {
      case Method::ft: return "FT";
      case Method::maml: return "MAML";
      case Method::maoml: return "MAOML";
    }
    return "?";
  };

  std::ostringstream os;
  os << "# Results\n\n";
  os << "Accuracy in percent, mean ± sample std over seeds. ICL columns are placeholders (not evaluated).\n\n";

  os << "## Average accuracy across the test sets of all tasks\n\n| Model |";
  for (auto s : settings) {
    os << ' ' << setting_title(s) << " ICL |";
    for (auto m : all_methods)
      if (has(m, s)) os << ' ' << setting_title(s) << ' ' << method_title(m) << " |";
  }
  os << "\n|---|";
  for (auto s : settings) {
    os << "---|";
    for (auto m : all_methods)
      if (has(m, s)) os << "---|";
  }
  os << "\n| MLP |";
  for (auto s : settings) {
    os << " n/a |";
    for (auto m : all_methods)
      if (has(m, s))
        for (const auto& r : summary)
          if (r.method == m && r.setting == s) os << ' ' << pct_pm(r.mean_accuracy, r.std_accuracy) << " |";
  }
  os << "\n\n";

  const auto tasks_rows = per_task_table(report);
  os << "## Per-task accuracy\n\n| Task |";
  for (auto [m, s] : groups) os << ' ' << method_title(m) << " (" << setting_title(s) << ") |";
  os << "\n|---|";
  for (std::size_t i = 0; i < groups.size(); ++i) os << "---|";
  os << '\n';
  std::vector<std::string> row_ids = report.task_ids;
  row_ids.push_back("Average");
  for (const auto& id : row_ids) {
    os << "| " << id << " |";
    for (auto [m, s] : groups) {
      std::string cell = "n/a";
      for (const auto& r : tasks_rows)
        if (r.method == m && r.setting == s && r.task_id == id) cell = pct_pm(r.mean_accuracy, r.std_accuracy);
      os << ' ' << cell << " |";
    }
    os << '\n';
  }
  os << '\n';

  const auto label_rows = per_label_table(report);
  os << "## Per-label accuracy\n\n| Label |";
  for (auto [m, s] : groups) os << ' ' << method_title(m) << " (" << setting_title(s) << ") |";
  os << "\n|---|";
  for (std::size_t i = 0; i < groups.size(); ++i) os << "---|";
  os << '\n';
  std::vector<std::string> labels = report.class_names;
  labels.push_back("Average");
  for (const auto& name : labels) {
    os << "| " << name << " |";
    for (auto [m, s] : groups) {
      std::string cell = "n/a";
      for (const auto& r : label_rows)
        if (r.method == m && r.setting == s && r.label_name == name && r.accuracy) cell = pct(*r.accuracy);
      os << ' ' << cell << " |";
    }
    os << '\n';
  }

  std::size_t failed = 0;
  for (const auto& c : report.cells) failed += c.ok ? 0 : 1;
  if (failed > 0) {
    os << "\n## Failed cells\n\n";
    for (const auto& c : report.cells)
      if (!c.ok) os << "- `" << c.key.id() << "`: " << c.error << '\n';
  }

  os << "\n## Configuration\n\n";
  if (report.config.contains("seeds")) os << "Seeds: `" << report.config.at("seeds").dump() << "`\n\n";
  os << "```json\n" << report.config.dump(2) << "\n```\n";
  return os.str();
}

// ----------------------------------------------------------------------------

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

RenderedFiles render_report(const RunReport& report, const fs::path& dir, const std::vector<ReportFormat>& formats) {
  RenderedFiles out;
  auto emit = [&](const std::string& name, const std::string& body) {
    write_file_atomic(dir / name, body);
    out.files.push_back(dir / name);
  };
  for (auto f : formats) {
    switch (f) {
      case ReportFormat::csv:
        emit("summary.csv", summary_csv(report));
        emit("per_task.csv", per_task_csv(report));
        emit("per_label.csv", per_label_csv(report));
        break;
      case ReportFormat::json: emit("report.json", json(report).dump(2) + "\n"); break;
      case ReportFormat::markdown: emit("report.md", markdown_tables(report)); break;
    }
  }
  return out;
}

RunReport load_report(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw DataError("cannot open report '" + json_path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("report '" + json_path.string() + "' is not valid JSON: " + e.what());
  }
  return j.get<RunReport>();
}

}  // namespace maoml::harness
