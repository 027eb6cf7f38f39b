#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "maoml/harness/experiment.hpp"

namespace maoml::harness {

struct SummaryRow {
  Method method;
  tasks::Setting setting;
  double mean_accuracy = 0.0;  ///< mean over seeds of the unweighted per-task average
  double std_accuracy = 0.0;   ///< sample std over seeds
  double mean_mae = 0.0;
  std::vector<double> seed_accuracy;
  std::size_t failed_cells = 0;
};

struct PerTaskRow {
  Method method;
  tasks::Setting setting;
  std::string task_id;  ///< "Average" for the closing row of each group
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_mae = 0.0;
};

struct PerLabelRow {
  Method method;
  tasks::Setting setting;
  std::size_t label = 0;
  std::string label_name;          ///< "Average" for the closing row of each group
  std::optional<double> accuracy;  ///< mean over seeds; absent when no samples
};

/// (method, setting) pairs present in the report, in config order.
std::vector<std::pair<Method, tasks::Setting>> report_groups(const RunReport& report);

std::vector<SummaryRow> summarize(const RunReport& report);
/// One row per task plus a closing "Average" row per group.
std::vector<PerTaskRow> per_task_table(const RunReport& report);
/// Labels pooled over every evaluated test set, then averaged over seeds.
std::vector<PerLabelRow> per_label_table(const RunReport& report);

enum class ReportFormat { csv, json, markdown };

struct RenderedFiles {
  std::vector<std::filesystem::path> files;
};

/// Writes summary.csv / per_task.csv / per_label.csv (csv), report.json (json)
/// and report.md (markdown) into `dir`. Files are replaced atomically.
RenderedFiles render_report(const RunReport& report, const std::filesystem::path& dir,
                            const std::vector<ReportFormat>& formats = {ReportFormat::csv, ReportFormat::json,
                                                                       ReportFormat::markdown});

std::string summary_csv(const RunReport& report);
std::string per_task_csv(const RunReport& report);
std::string per_label_csv(const RunReport& report);
std::string markdown_tables(const RunReport& report);

RunReport load_report(const std::filesystem::path& json_path);

/// Writes `contents` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace maoml::harness
