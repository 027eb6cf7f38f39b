#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maoml/autodiff/hvp.hpp"
#include "maoml/model/mlp.hpp"
#include "maoml/ordinal/corn.hpp"

namespace maoml::meta {

enum class LossKind { ce, corn };
enum class GradMode { first_order, hvp_second_order };

std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);
std::string to_string(GradMode m);
GradMode grad_mode_from_string(const std::string& s);

/// The head a loss requires: ce -> categorical, corn -> ordinal.
model::HeadKind head_for(LossKind loss);
/// Throws ConfigError unless `config.head` matches `loss`.
void check_head(const model::ModelConfig& config, LossKind loss);

/// Rows of labelled examples, with one audit id per row.
struct LabeledData {
  ad::Tensor x;  ///< [N, D]
  std::vector<ordinal::RankLabel> y;
  std::vector<std::string> ids;

  std::size_t size() const noexcept { return y.size(); }
  LabeledData rows(std::span<const std::size_t> index) const;
  static LabeledData concat(std::span<const LabeledData> parts);
};

/// Set of example ids that entered a gradient computation. Thread-safe.
class AuditLog {
 public:
  void record(std::span<const std::string> ids);
  std::vector<std::string> ids() const;
  std::size_t size() const;
  bool contains_prefix(const std::string& prefix) const;

 private:
  mutable std::mutex mutex_;
  std::set<std::string> ids_;
};

/// Scalar training loss of `data` under `loss`.
ad::Var model_loss(ad::Tape& tape, const model::ModelConfig& config, const ad::ParamVars& params,
                   const LabeledData& data, LossKind loss);

/// LossFn closure over a data set; records the rows in `audit` on every call.
ad::LossFn make_loss_fn(const model::ModelConfig& config, std::shared_ptr<const LabeledData> data, LossKind loss,
                        AuditLog* audit = nullptr);

// ----------------------------------------------------------------------------
// Plain gradient training

/// Loss of the rows selected for one mini-batch.
using BatchLossFn =
    std::function<ad::Var(ad::Tape&, const ad::ParamVars&, std::span<const std::size_t> rows)>;

struct DescentResult {
  ad::ParamSet params;
  std::vector<double> epoch_loss;  ///< mean pre-step batch loss per epoch
  std::size_t steps = 0;
  std::size_t skipped_batches = 0;
  std::vector<std::string> warnings;
};

/// Shuffled mini-batch gradient descent over `n` rows: theta <- theta - lr * g.
/// Batches raising DegenerateBatchError are skipped and counted.
DescentResult minibatch_descent(const ad::ParamSet& init, std::size_t n, const BatchLossFn& loss, double lr,
                                std::size_t epochs, std::size_t batch_size, std::uint64_t seed);

struct FinetuneOptions {
  LossKind loss = LossKind::ce;
  double lr = 0.05;
  std::size_t epochs = 30;
  std::size_t batch_size = 20;
  std::uint64_t seed = 0;
};

struct FinetuneResult {
  model::Model model;
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
  std::size_t skipped_batches = 0;
  std::vector<std::string> warnings;
};

FinetuneResult finetune(const model::Model& model, const LabeledData& data, const FinetuneOptions& options,
                        AuditLog* audit = nullptr);

// ----------------------------------------------------------------------------
// Bilevel meta-learning

struct MetaConfig {
  double alpha = 0.1;  ///< inner step size
  double beta = 0.01;  ///< outer step size
  std::size_t inner_steps = 1;
  std::size_t meta_batch_size = 5;
  std::size_t support_size = 10;  ///< support examples per task episode
  std::size_t query_size = 0;     ///< 0: every train example not in the support
  std::size_t epochs = 30;
  GradMode grad_mode = GradMode::first_order;
  std::uint64_t seed = 0;
  double hvp_step = 1e-5;
  std::size_t threads = 1;
  /// Adaptation steps on a task's labelled examples before evaluation.
  std::size_t eval_inner_steps = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const MetaConfig& c);
/// Partial update: keys absent from `j` keep their current value.
void from_json(const nlohmann::json& j, MetaConfig& c);

/// theta' after `steps` descent steps on `support` from a copy of `params`.
ad::ParamSet inner_adapt(const ad::ParamSet& params, const ad::LossFn& support, double alpha, std::size_t steps);

/// One task of a meta-batch: support loss drives the inner loop, query loss
/// the meta-objective.
struct TaskObjective {
  ad::LossFn support;
  ad::LossFn query;
};

struct MetaStepStats {
  std::vector<double> query_loss;  ///< L_query(theta'_i) per task
  double meta_grad_norm = 0.0;
};

struct MetaGradient {
  ad::ParamSet gradient;
  MetaStepStats stats;
};

/// Sum over tasks of d L_query(theta'_i) / d theta.
///  first-order:       g_q(theta'_i)
///  hvp-second-order:  g_q - alpha * H_support(theta) g_q   (inner_steps <= 1)
/// Per-task work may run on `config.threads` workers; the reduction is in
/// task order, so results do not depend on the thread count.
MetaGradient meta_gradient(const ad::ParamSet& params, std::span<const TaskObjective> tasks, const MetaConfig& config);

struct MetaStepResult {
  ad::ParamSet params;
  MetaStepStats stats;
};

/// theta <- theta - beta * meta_gradient.
MetaStepResult meta_step(const ad::ParamSet& params, std::span<const TaskObjective> tasks, const MetaConfig& config);

/// A meta-training task: its identifier and labelled training pool.
struct MetaTask {
  std::string id;
  LabeledData data;
};

struct TraceRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::vector<std::string> task_ids;
  std::vector<double> query_loss;
  double meta_grad_norm = 0.0;
};

struct TrainResult {
  model::Model model;
  std::vector<TraceRecord> trace;
};

/// Outer loop: each epoch visits the tasks in a fresh uniform shuffle, in
/// meta-batches of `meta_batch_size`; each task contributes a disjoint
/// support/query episode sampled from its pool.
TrainResult train_meta(std::span<const MetaTask> tasks, const model::Model& init, LossKind loss,
                       const MetaConfig& config, AuditLog* audit = nullptr);
/// Categorical head + cross-entropy.
TrainResult train_maml(std::span<const MetaTask> tasks, const model::Model& init, const MetaConfig& config,
                       AuditLog* audit = nullptr);
/// Ordinal head + CORN loss.
TrainResult train_maoml(std::span<const MetaTask> tasks, const model::Model& init, const MetaConfig& config,
                        AuditLog* audit = nullptr);

/// Test-time adaptation on a task's labelled examples (alpha, eval_inner_steps).
model::Model adapt_model(const model::Model& model, const LabeledData& support, LossKind loss,
                         const MetaConfig& config, AuditLog* audit = nullptr);

/// One JSON object per line: {"step", "epoch", "tasks", "query_loss", "meta_grad_norm"}.
void write_trace_jsonl(std::ostream& out, std::span<const TraceRecord> trace, const nlohmann::json& tags = {});

}  // namespace maoml::meta
