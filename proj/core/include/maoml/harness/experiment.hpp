#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maoml/meta/training.hpp"
#include "maoml/tasks/synth.hpp"

namespace maoml::harness {

enum class Method { ft, maml, maoml };
std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct ExperimentConfig {
  std::string dataset;
  std::vector<Method> methods = {Method::ft, Method::maml, Method::maoml};
  /// Loss per method; absent entries use the method default (ft/maml: ce, maoml: corn).
  std::map<Method, meta::LossKind> losses;
  std::vector<tasks::Setting> settings = {tasks::Setting::zero_shot, tasks::Setting::few_shot};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::size_t> hidden_dims = {64, 32};
  meta::MetaConfig meta;
  /// Per-method MetaConfig, replacing `meta` for that method (JSON key "maml").
  std::map<Method, meta::MetaConfig> meta_overrides;
  /// Per-(method, setting) MetaConfig, replacing both of the above (JSON key "maml/few-shot").
  std::map<std::pair<Method, tasks::Setting>, meta::MetaConfig> setting_overrides;
  meta::FinetuneOptions finetune;
  /// Per-setting fine-tuning options, replacing `finetune`.
  std::map<tasks::Setting, meta::FinetuneOptions> finetune_overrides;
  /// Zero-shot holdouts to run; empty means every task.
  std::vector<std::string> holdouts;
  std::string output_dir;
  std::size_t threads = 1;
  bool deterministic = false;

  meta::LossKind loss_for(Method m) const;
  meta::MetaConfig meta_for(Method m) const;
  meta::MetaConfig meta_for(Method m, tasks::Setting s) const;
  meta::FinetuneOptions finetune_for(tasks::Setting s) const;
  /// Throws ConfigError; run before any training starts.
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Reads a JSON config file; unknown keys are rejected.
ExperimentConfig load_config(const std::string& path);

struct CellKey {
  Method method = Method::ft;
  tasks::Setting setting = tasks::Setting::few_shot;
  std::uint64_t seed = 0;
  std::optional<std::string> holdout;

  std::string id() const;
  friend bool operator==(const CellKey&, const CellKey&) = default;
};

struct TaskResult {
  std::string task_id;
  double accuracy = 0.0;
  double mae = 0.0;
  std::vector<std::size_t> per_label_count;
  std::vector<std::size_t> per_label_correct;
  std::size_t count = 0;

  friend bool operator==(const TaskResult&, const TaskResult&) = default;
};

struct CellResult {
  CellKey key;
  bool ok = true;
  std::string error;
  std::vector<TaskResult> tasks;
  std::size_t trained_models = 0;
  std::size_t audit_size = 0;
  /// Audited training examples that belong to the zero-shot holdout (must be 0).
  std::size_t holdout_leaks = 0;
  std::size_t skipped_batches = 0;

  friend bool operator==(const CellResult&, const CellResult&) = default;
};

struct RunReport {
  nlohmann::json config;
  std::vector<std::string> task_ids;
  std::vector<std::string> class_names;
  std::vector<CellResult> cells;

  friend bool operator==(const RunReport&, const RunReport&) = default;
};

void to_json(nlohmann::json& j, const RunReport& r);
void from_json(const nlohmann::json& j, RunReport& r);

/// Everything produced by one training + evaluation cell.
struct CellOutcome {
  CellResult result;
  model::Model model;
  std::vector<meta::TraceRecord> trace;
  std::vector<double> finetune_loss;
  std::vector<std::string> audit_ids;
};

model::ModelConfig model_config_for(const ExperimentConfig& config, Method method, std::uint64_t seed,
                                    std::span<const tasks::TaskDataset> data);

meta::LabeledData to_labeled(const tasks::TaskDataset& task, tasks::Split split);

/// Trains the model of one cell on its SplitPlan's training tasks and
/// optionally evaluates it on the plan's evaluation tasks.
CellOutcome run_cell(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data, const CellKey& key,
                     bool evaluate = true);

/// Evaluates a trained model on the test split of `eval_tasks`. Few-shot meta
/// models first adapt on each task's train split.
std::vector<TaskResult> evaluate_model(const ExperimentConfig& config, const model::Model& trained, Method method,
                                       tasks::Setting setting, std::span<const tasks::TaskDataset> data,
                                       std::span<const std::string> eval_tasks, meta::AuditLog* audit = nullptr);

std::vector<CellKey> enumerate_cells(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data);

using ProgressFn = std::function<void(const CellResult&, std::size_t done, std::size_t total)>;

/// Runs every (method, setting, seed[, holdout]) cell. A failing cell is
/// recorded with ok = false and does not stop the run. When `trace_lines` is
/// non-null it receives the JSON-lines training trace of every cell, in cell order.
RunReport run_experiment(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data,
                         std::vector<std::string>* trace_lines = nullptr, const ProgressFn& progress = {});

/// Loads config.dataset and runs it.
RunReport run_experiment(const ExperimentConfig& config, std::vector<std::string>* trace_lines = nullptr,
                         const ProgressFn& progress = {});

}  // namespace maoml::harness
