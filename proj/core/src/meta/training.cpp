#include "maoml/meta/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maoml/error.hpp"
#include "maoml/util/parallel.hpp"
#include "maoml/util/rng.hpp"

namespace maoml::meta {

using ad::ParamSet;

std::string to_string(LossKind k) { return k == LossKind::ce ? "ce" : "corn"; }

LossKind loss_from_string(const std::string& s) {
  if (s == "ce") return LossKind::ce;
  if (s == "corn") return LossKind::corn;
  throw ConfigError("unknown loss '" + s + "'");
}

std::string to_string(GradMode m) { return m == GradMode::first_order ? "first-order" : "hvp-second-order"; }

GradMode grad_mode_from_string(const std::string& s) {
  if (s == "first-order") return GradMode::first_order;
  if (s == "hvp-second-order") return GradMode::hvp_second_order;
  throw ConfigError("unknown grad mode '" + s + "'");
}

model::HeadKind head_for(LossKind loss) {
  return loss == LossKind::ce ? model::HeadKind::categorical : model::HeadKind::ordinal;
}

void check_head(const model::ModelConfig& config, LossKind loss) {
  if (config.head != head_for(loss))
    throw ConfigError("loss '" + to_string(loss) + "' needs a " + model::to_string(head_for(loss)) +
                      " head, model has a " + model::to_string(config.head) + " head");
}

// ----------------------------------------------------------------------------

LabeledData LabeledData::rows(std::span<const std::size_t> index) const {
  if (index.empty()) throw ValidationError("LabeledData::rows: empty selection");
  const std::size_t d = x.dim(1);
  ad::Tensor sub({index.size(), d});
  LabeledData out;
  for (std::size_t r = 0; r < index.size(); ++r) {
    const std::size_t i = index[r];
    if (i >= size()) throw ValidationError("LabeledData::rows: row out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(i * d), d,
                sub.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    out.y.push_back(y[i]);
    if (!ids.empty()) out.ids.push_back(ids[i]);
  }
  out.x = std::move(sub);
  return out;
}

LabeledData LabeledData::concat(std::span<const LabeledData> parts) {
  if (parts.empty()) throw ValidationError("LabeledData::concat: nothing to concatenate");
  const std::size_t d = parts[0].x.dim(1);
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.x.dim(1) != d) throw ShapeError("LabeledData::concat: feature widths differ");
    n += p.size();
  }
  LabeledData out;
  std::vector<double> data;
  data.reserve(n * d);
  for (const auto& p : parts) {
    data.insert(data.end(), p.x.data().begin(), p.x.data().end());
    out.y.insert(out.y.end(), p.y.begin(), p.y.end());
    out.ids.insert(out.ids.end(), p.ids.begin(), p.ids.end());
  }
  out.x = ad::Tensor({n, d}, std::move(data));
  return out;
}

void AuditLog::record(std::span<const std::string> ids) {
  std::lock_guard lock(mutex_);
  ids_.insert(ids.begin(), ids.end());
}

std::vector<std::string> AuditLog::ids() const {
  std::lock_guard lock(mutex_);
  return {ids_.begin(), ids_.end()};
}

std::size_t AuditLog::size() const {
  std::lock_guard lock(mutex_);
  return ids_.size();
}

bool AuditLog::contains_prefix(const std::string& prefix) const {
  std::lock_guard lock(mutex_);
  auto it = ids_.lower_bound(prefix);
  return it != ids_.end() && it->compare(0, prefix.size(), prefix) == 0;
}

ad::Var model_loss(ad::Tape& tape, const model::ModelConfig& config, const ad::ParamVars& params,
                   const LabeledData& data, LossKind loss) {
  const ad::Var logits = model::forward(config, params, tape.constant(data.x));
  return loss == LossKind::ce ? model::cross_entropy_loss(logits, data.y) : ordinal::corn_loss(logits, data.y);
}

ad::LossFn make_loss_fn(const model::ModelConfig& config, std::shared_ptr<const LabeledData> data, LossKind loss,
                        AuditLog* audit) {
  return [config, data = std::move(data), loss, audit](ad::Tape& tape, const ad::ParamVars& params) {
    if (audit) audit->record(data->ids);
    return model_loss(tape, config, params, *data, loss);
  };
}

// ----------------------------------------------------------------------------

DescentResult minibatch_descent(const ParamSet& init, std::size_t n, const BatchLossFn& loss, double lr,
                                std::size_t epochs, std::size_t batch_size, std::uint64_t seed) {
  if (n == 0) throw ValidationError("minibatch_descent: no training rows");
  if (batch_size == 0) throw ValidationError("minibatch_descent: batch size must be positive");
  if (!(lr >= 0.0)) throw ValidationError("minibatch_descent: negative learning rate");
  batch_size = std::min(batch_size, n);

  DescentResult out{init, {}, 0, 0, {}};
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng({seed, 0x4550u, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch_size, n - start));
      ad::Tape tape;
      const auto vars = tape.bind(out.params);
      ad::Var value;
      try {
        value = loss(tape, vars, rows);
      } catch (const DegenerateBatchError& e) {
        ++out.skipped_batches;
        out.warnings.push_back("epoch " + std::to_string(epoch) + ": skipped batch: " + e.what());
        continue;
      }
      const double v = value.value().item();
      ParamSet grad = tape.backward(value);
      loss_sum += v;
      ++counted;
      if (lr != 0.0) out.params.axpy(-lr, grad);
      ++out.steps;
    }
    out.epoch_loss.push_back(counted ? loss_sum / static_cast<double>(counted)
                                     : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

FinetuneResult finetune(const model::Model& model, const LabeledData& data, const FinetuneOptions& options,
                        AuditLog* audit) {
  if (data.size() == 0) throw ValidationError("finetune: empty training data");
  check_head(model.config, options.loss);
  const auto cfg = model.config;
  const auto loss = options.loss;
  BatchLossFn fn = [&](ad::Tape& tape, const ad::ParamVars& vars, std::span<const std::size_t> rows) {
    const LabeledData batch = data.rows(rows);
    if (audit) audit->record(batch.ids);
    return model_loss(tape, cfg, vars, batch, loss);
  };
  auto r = minibatch_descent(model.params, data.size(), fn, options.lr, options.epochs, options.batch_size,
                             options.seed);
  return {{cfg, std::move(r.params)}, std::move(r.epoch_loss), r.steps, r.skipped_batches, std::move(r.warnings)};
}

// ----------------------------------------------------------------------------

void MetaConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("meta: alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("meta: beta must be >= 0");
  if (meta_batch_size == 0) throw ConfigError("meta: meta_batch_size must be positive");
  if (support_size == 0 && inner_steps > 0) throw ConfigError("meta: inner steps need a non-empty support set");
  if (grad_mode == GradMode::hvp_second_order && inner_steps > 1)
    throw ConfigError("meta: hvp-second-order supports at most one inner step (got " + std::to_string(inner_steps) +
                      "); use first-order for multi-step adaptation");
  if (!(hvp_step > 0.0)) throw ConfigError("meta: hvp_step must be positive");
}

void to_json(nlohmann::json& j, const MetaConfig& c) {
  j = {{"alpha", c.alpha},
       {"beta", c.beta},
       {"inner_steps", c.inner_steps},
       {"meta_batch_size", c.meta_batch_size},
       {"support_size", c.support_size},
       {"query_size", c.query_size},
       {"epochs", c.epochs},
       {"grad_mode", to_string(c.grad_mode)},
       {"seed", c.seed},
       {"hvp_step", c.hvp_step},
       {"eval_inner_steps", c.eval_inner_steps},
       {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, MetaConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.beta = j.value("beta", c.beta);
  c.inner_steps = j.value("inner_steps", c.inner_steps);
  c.meta_batch_size = j.value("meta_batch_size", c.meta_batch_size);
  c.support_size = j.value("support_size", c.support_size);
  c.query_size = j.value("query_size", c.query_size);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("grad_mode")) c.grad_mode = grad_mode_from_string(j.at("grad_mode").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.hvp_step = j.value("hvp_step", c.hvp_step);
  c.eval_inner_steps = j.value("eval_inner_steps", c.eval_inner_steps);
  c.threads = j.value("threads", c.threads);
}

ParamSet inner_adapt(const ParamSet& params, const ad::LossFn& support, double alpha, std::size_t steps) {
  ParamSet adapted = params;
  if (alpha == 0.0) return adapted;
  for (std::size_t s = 0; s < steps; ++s) adapted.axpy(-alpha, ad::value_and_grad(support, adapted).grad);
  return adapted;
}

MetaGradient meta_gradient(const ParamSet& params, std::span<const TaskObjective> tasks, const MetaConfig& config) {
  config.validate();
  if (tasks.empty()) throw ValidationError("meta_gradient: empty task batch");

  std::vector<ParamSet> per_task(tasks.size());
  std::vector<double> query_loss(tasks.size());
  parallel_for(tasks.size(), config.threads, [&](std::size_t i) {
    const ParamSet adapted = inner_adapt(params, tasks[i].support, config.alpha, config.inner_steps);
    auto q = ad::value_and_grad(tasks[i].query, adapted);
    if (auto bad = q.grad.first_non_finite())
      throw NumericalError("meta_gradient: non-finite query gradient for parameter '" + *bad + "'");
    if (config.grad_mode == GradMode::hvp_second_order && config.inner_steps == 1 && config.alpha != 0.0) {
      // d theta'/d theta = I - alpha H_support(theta)
      const ad::Tensor hv = ad::hvp_finite_diff(tasks[i].support, params, q.grad.flatten(), config.hvp_step);
      q.grad.axpy(-config.alpha, params.unflatten(hv));
    }
    query_loss[i] = q.value;
    per_task[i] = std::move(q.grad);
  });

  MetaGradient out{per_task[0], {std::move(query_loss), 0.0}};
  for (std::size_t i = 1; i < per_task.size(); ++i) out.gradient.axpy(1.0, per_task[i]);
  out.stats.meta_grad_norm = out.gradient.norm();
  return out;
}

MetaStepResult meta_step(const ParamSet& params, std::span<const TaskObjective> tasks, const MetaConfig& config) {
  auto mg = meta_gradient(params, tasks, config);
  ParamSet next = params;
  if (config.beta != 0.0) next.axpy(-config.beta, mg.gradient);
  return {std::move(next), std::move(mg.stats)};
}

TrainResult train_meta(std::span<const MetaTask> tasks, const model::Model& init, LossKind loss,
                       const MetaConfig& config, AuditLog* audit) {
  config.validate();
  check_head(init.config, loss);
  if (tasks.empty()) throw ValidationError("train_meta: no tasks");
  for (const auto& t : tasks)
    if (t.data.size() <= config.support_size)
      throw ConfigError("train_meta: task '" + t.id + "' has " + std::to_string(t.data.size()) +
                        " examples, too few for support size " + std::to_string(config.support_size) +
                        " plus a query set");

  TrainResult out{init, {}};
  std::vector<std::size_t> task_order(tasks.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(task_order.begin(), task_order.end(), std::size_t{0});
    Rng order_rng = make_rng({config.seed, 0x4F52444552ULL, epoch});
    std::shuffle(task_order.begin(), task_order.end(), order_rng);

    for (std::size_t start = 0; start < task_order.size(); start += config.meta_batch_size) {
      const std::size_t end = std::min(task_order.size(), start + config.meta_batch_size);
      std::vector<TaskObjective> objectives;
      TraceRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t ti = task_order[b];
        const auto& pool = tasks[ti].data;
        std::vector<std::size_t> idx(pool.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Rng ep_rng = make_rng({config.seed, 0x45504953ULL, epoch, ti});
        std::shuffle(idx.begin(), idx.end(), ep_rng);
        const std::size_t s = config.support_size;
        const std::size_t q = config.query_size == 0 ? pool.size() - s : std::min(config.query_size, pool.size() - s);
        std::vector<std::size_t> support_rows(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(s));
        std::vector<std::size_t> query_rows(idx.begin() + static_cast<std::ptrdiff_t>(s),
                                            idx.begin() + static_cast<std::ptrdiff_t>(s + q));
        TaskObjective obj;
        if (s > 0)
          obj.support = make_loss_fn(init.config, std::make_shared<LabeledData>(pool.rows(support_rows)), loss, audit);
        else
          obj.support = [](ad::Tape&, const ad::ParamVars&) -> ad::Var {
            throw ContractError("support loss evaluated with an empty support set");
          };
        obj.query = make_loss_fn(init.config, std::make_shared<LabeledData>(pool.rows(query_rows)), loss, audit);
        objectives.push_back(std::move(obj));
        rec.task_ids.push_back(tasks[ti].id);
      }
      auto result = meta_step(out.model.params, objectives, config);
      out.model.params = std::move(result.params);
      rec.query_loss = std::move(result.stats.query_loss);
      rec.meta_grad_norm = result.stats.meta_grad_norm;
      out.trace.push_back(std::move(rec));
      ++step;
    }
  }
  return out;
}

TrainResult train_maml(std::span<const MetaTask> tasks, const model::Model& init, const MetaConfig& config,
                       AuditLog* audit) {
  return train_meta(tasks, init, LossKind::ce, config, audit);
}

TrainResult train_maoml(std::span<const MetaTask> tasks, const model::Model& init, const MetaConfig& config,
                        AuditLog* audit) {
  return train_meta(tasks, init, LossKind::corn, config, audit);
}

model::Model adapt_model(const model::Model& model, const LabeledData& support, LossKind loss,
                         const MetaConfig& config, AuditLog* audit) {
  check_head(model.config, loss);
  if (config.eval_inner_steps == 0 || config.alpha == 0.0) return model;
  auto fn = make_loss_fn(model.config, std::make_shared<LabeledData>(support), loss, audit);
  return {model.config, inner_adapt(model.params, fn, config.alpha, config.eval_inner_steps)};
}

void write_trace_jsonl(std::ostream& out, std::span<const TraceRecord> trace, const nlohmann::json& tags) {
  for (const auto& r : trace) {
    nlohmann::json j = tags.is_object() ? tags : nlohmann::json::object();
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["tasks"] = r.task_ids;
    j["query_loss"] = r.query_loss;
    j["meta_grad_norm"] = r.meta_grad_norm;
    out << j.dump() << "\n";
  }
}

}  // namespace maoml::meta
