#include "maoml/harness/experiment.hpp"

#include <algorithm>
#include <mutex>
#include <set>
#include <sstream>

#include "maoml/error.hpp"
#include "maoml/harness/report.hpp"
#include "maoml/tasks/dataset_io.hpp"
#include "maoml/util/parallel.hpp"
#include "maoml/util/rng.hpp"

namespace maoml::harness {

using nlohmann::json;

std::string to_string(Method m) {
  switch (m) {
    case Method::ft: return "ft";
    case Method::maml: return "maml";
    case Method::maoml: return "maoml";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "ft") return Method::ft;
  if (s == "maml") return Method::maml;
  if (s == "maoml") return Method::maoml;
  throw ConfigError("unknown method '" + s + "'");
}

meta::LossKind ExperimentConfig::loss_for(Method m) const {
  if (auto it = losses.find(m); it != losses.end()) return it->second;
  return m == Method::maoml ? meta::LossKind::corn : meta::LossKind::ce;
}

meta::MetaConfig ExperimentConfig::meta_for(Method m) const {
  if (auto it = meta_overrides.find(m); it != meta_overrides.end()) return it->second;
  return meta;
}

meta::MetaConfig ExperimentConfig::meta_for(Method m, tasks::Setting s) const {
  if (auto it = setting_overrides.find({m, s}); it != setting_overrides.end()) return it->second;
  return meta_for(m);
}

meta::FinetuneOptions ExperimentConfig::finetune_for(tasks::Setting s) const {
  if (auto it = finetune_overrides.find(s); it != finetune_overrides.end()) return it->second;
  return finetune;
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("config: methods list is empty");
  if (settings.empty()) throw ConfigError("config: settings list is empty");
  if (seeds.empty()) throw ConfigError("config: seeds list is empty");
  std::set<Method> seen_m(methods.begin(), methods.end());
  if (seen_m.size() != methods.size()) throw ConfigError("config: duplicate method");
  std::set<tasks::Setting> seen_s(settings.begin(), settings.end());
  if (seen_s.size() != settings.size()) throw ConfigError("config: duplicate setting");
  std::set<std::uint64_t> seen_seed(seeds.begin(), seeds.end());
  if (seen_seed.size() != seeds.size()) throw ConfigError("config: duplicate seed");
  if (std::find(hidden_dims.begin(), hidden_dims.end(), 0) != hidden_dims.end())
    throw ConfigError("config: hidden layer width 0");
  if (threads == 0) throw ConfigError("config: threads must be >= 1");
  for (auto m : methods) {
    const auto loss = loss_for(m);
    if (m == Method::maoml && loss != meta::LossKind::corn)
      throw ConfigError("config: maoml requires the corn loss and an ordinal head");
    if (m == Method::maml && loss != meta::LossKind::ce)
      throw ConfigError("config: maml requires the ce loss and a categorical head");
    for (auto s : settings) {
      if (m == Method::ft) {
        const auto f = finetune_for(s);
        if (!(f.lr >= 0.0)) throw ConfigError("config: finetune lr must be >= 0");
        if (f.batch_size == 0) throw ConfigError("config: finetune batch_size must be positive");
      } else {
        meta_for(m, s).validate();
      }
    }
  }
  std::set<std::string> seen_h(holdouts.begin(), holdouts.end());
  if (seen_h.size() != holdouts.size()) throw ConfigError("config: duplicate holdout");
}

std::string CellKey::id() const {
  std::string s = to_string(method) + "/" + tasks::to_string(setting) + "/seed" + std::to_string(seed);
  if (holdout) s += "/" + *holdout;
  return s;
}

// ----------------------------------------------------------------------------
// JSON for reports

namespace {

json key_json(const CellKey& k) {
  return {{"method", to_string(k.method)},
          {"setting", tasks::to_string(k.setting)},
          {"seed", k.seed},
          {"holdout", k.holdout ? json(*k.holdout) : json(nullptr)}};
}

CellKey key_from(const json& j) {
  CellKey k;
  k.method = method_from_string(j.at("method").get<std::string>());
  k.setting = tasks::setting_from_string(j.at("setting").get<std::string>());
  k.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("holdout").is_null()) k.holdout = j.at("holdout").get<std::string>();
  return k;
}

}  // namespace

void to_json(json& j, const RunReport& r) {
  json cells = json::array();
  for (const auto& c : r.cells) {
    json tasks = json::array();
    for (const auto& t : c.tasks)
      tasks.push_back({{"task_id", t.task_id},
                       {"accuracy", t.accuracy},
                       {"mae", t.mae},
                       {"per_label_count", t.per_label_count},
                       {"per_label_correct", t.per_label_correct},
                       {"count", t.count}});
    cells.push_back({{"key", key_json(c.key)},
                     {"ok", c.ok},
                     {"error", c.error},
                     {"tasks", tasks},
                     {"trained_models", c.trained_models},
                     {"audit_size", c.audit_size},
                     {"holdout_leaks", c.holdout_leaks},
                     {"skipped_batches", c.skipped_batches}});
  }
  j = {{"format", "maoml-report-v1"},
       {"config", r.config},
       {"task_ids", r.task_ids},
       {"class_names", r.class_names},
       {"cells", cells}};
}

void from_json(const json& j, RunReport& r) {
  try {
    if (j.value("format", "") != "maoml-report-v1") throw DataError("report: unknown format");
    r.config = j.at("config");
    r.task_ids = j.at("task_ids").get<std::vector<std::string>>();
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    r.cells.clear();
    for (const auto& cj : j.at("cells")) {
      CellResult c;
      c.key = key_from(cj.at("key"));
      c.ok = cj.at("ok").get<bool>();
      c.error = cj.at("error").get<std::string>();
      for (const auto& tj : cj.at("tasks")) {
        TaskResult t;
        t.task_id = tj.at("task_id").get<std::string>();
        t.accuracy = tj.at("accuracy").get<double>();
        t.mae = tj.at("mae").get<double>();
        t.per_label_count = tj.at("per_label_count").get<std::vector<std::size_t>>();
        t.per_label_correct = tj.at("per_label_correct").get<std::vector<std::size_t>>();
        t.count = tj.at("count").get<std::size_t>();
        c.tasks.push_back(std::move(t));
      }
      c.trained_models = cj.at("trained_models").get<std::size_t>();
      c.audit_size = cj.at("audit_size").get<std::size_t>();
      c.holdout_leaks = cj.at("holdout_leaks").get<std::size_t>();
      c.skipped_batches = cj.at("skipped_batches").get<std::size_t>();
      r.cells.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("report: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("report: ") + e.what());
  }
}

// ----------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kInitTag = 0x494E4954;
constexpr std::uint64_t kTrainTag = 0x5452414E;

std::uint64_t plan_slot(std::span<const tasks::TaskDataset> data, const std::optional<std::string>& holdout) {
  if (!holdout) return data.size();
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].spec.task_id == *holdout) return i;
  throw ConfigError("config: unknown holdout task '" + *holdout + "'");
}

void check_family(std::span<const tasks::TaskDataset> data) {
  if (data.empty()) throw DataError("dataset: no tasks");
  const auto& first = data.front().spec;
  for (const auto& t : data) {
    if (t.spec.class_count != first.class_count || t.spec.pixel_count() != first.pixel_count())
      throw DataError("dataset: task '" + t.spec.task_id + "' differs in class count or image size");
    if (t.train.empty() || t.test.empty())
      throw DataError("dataset: task '" + t.spec.task_id + "' has an empty split");
  }
}

std::size_t count_leaks(const std::vector<std::string>& ids, const std::optional<std::string>& holdout) {
  if (!holdout) return 0;
  const std::string prefix = *holdout + "/";
  return static_cast<std::size_t>(std::count_if(
      ids.begin(), ids.end(), [&](const std::string& id) { return id.compare(0, prefix.size(), prefix) == 0; }));
}

}  // namespace

model::ModelConfig model_config_for(const ExperimentConfig& config, Method method, std::uint64_t seed,
                                    std::span<const tasks::TaskDataset> data) {
  check_family(data);
  model::ModelConfig mc;
  mc.input_dim = data.front().spec.pixel_count();
  mc.hidden_dims = config.hidden_dims;
  mc.num_classes = data.front().spec.class_count;
  mc.head = meta::head_for(config.loss_for(method));
  mc.init_seed = seed;
  mc.validate();
  return mc;
}

meta::LabeledData to_labeled(const tasks::TaskDataset& task, tasks::Split split) {
  const auto& examples = split == tasks::Split::train ? task.train : task.test;
  meta::LabeledData out;
  const std::size_t d = task.spec.pixel_count();
  if (examples.empty()) return out;
  out.x = ad::Tensor({examples.size(), d});
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& img = examples[i].image.data();
    if (img.size() != d) throw DataError("dataset: image of wrong size in task '" + task.spec.task_id + "'");
    std::copy(img.begin(), img.end(), out.x.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    out.y.push_back(examples[i].label);
    out.ids.push_back(tasks::example_id(task.spec.task_id, examples[i]));
  }
  return out;
}

std::vector<TaskResult> evaluate_model(const ExperimentConfig& config, const model::Model& trained, Method method,
                                       tasks::Setting setting, std::span<const tasks::TaskDataset> data,
                                       std::span<const std::string> eval_tasks, meta::AuditLog* audit) {
  std::vector<TaskResult> out;
  const std::size_t k = trained.config.num_classes;
  for (const auto& id : eval_tasks) {
    const auto& task = tasks::find_task(data, id);
    model::Model m = trained;
    if (setting == tasks::Setting::few_shot && method != Method::ft)
      m = meta::adapt_model(trained, to_labeled(task, tasks::Split::train), config.loss_for(method),
                            config.meta_for(method, setting), audit);
    const auto test = to_labeled(task, tasks::Split::test);
    const auto pred = model::predict_ranks(m.config, m.params, test.x);
    const auto metrics = ordinal::rank_metrics(pred, test.y, k);
    out.push_back({id, metrics.accuracy, metrics.mean_absolute_error, metrics.per_label_count,
                   metrics.per_label_correct, metrics.count});
  }
  return out;
}

CellOutcome run_cell(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data, const CellKey& key,
                     bool evaluate) {
  const auto plan = tasks::make_split(data, key.setting, key.holdout);
  const std::uint64_t slot = plan_slot(data, key.holdout);
  const auto mc = model_config_for(config, key.method, derive_seed({key.seed, kInitTag, slot}), data);
  const std::uint64_t train_seed = derive_seed({key.seed, kTrainTag, slot});
  const model::Model init = model::init_model(mc);
  const auto loss = config.loss_for(key.method);

  CellOutcome out;
  out.result.key = key;
  meta::AuditLog audit;

  if (key.method == Method::ft) {
    std::vector<meta::LabeledData> parts;
    for (const auto& id : plan.train_task_ids) parts.push_back(to_labeled(tasks::find_task(data, id), tasks::Split::train));
    auto opts = config.finetune_for(key.setting);
    opts.loss = loss;
    opts.seed = train_seed;
    auto r = meta::finetune(init, meta::LabeledData::concat(parts), opts, &audit);
    out.model = std::move(r.model);
    out.finetune_loss = std::move(r.epoch_loss);
    out.result.skipped_batches = r.skipped_batches;
  } else {
    std::vector<meta::MetaTask> mtasks;
    for (const auto& id : plan.train_task_ids) mtasks.push_back({id, to_labeled(tasks::find_task(data, id), tasks::Split::train)});
    auto mcfg = config.meta_for(key.method, key.setting);
    mcfg.seed = train_seed;
    mcfg.threads = 1;
    auto r = meta::train_meta(mtasks, init, loss, mcfg, &audit);
    out.model = std::move(r.model);
    out.trace = std::move(r.trace);
  }
  out.result.trained_models = 1;
  if (out.model.params.first_non_finite())
    throw NumericalError("training produced non-finite parameter '" + *out.model.params.first_non_finite() + "'");

  if (evaluate) out.result.tasks = evaluate_model(config, out.model, key.method, key.setting, data, plan.eval_task_ids, &audit);
  out.audit_ids = audit.ids();
  out.result.audit_size = out.audit_ids.size();
  out.result.holdout_leaks = count_leaks(out.audit_ids, key.holdout);
  return out;
}

std::vector<CellKey> enumerate_cells(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data) {
  std::vector<std::string> holdouts = config.holdouts;
  if (holdouts.empty())
    for (const auto& t : data) holdouts.push_back(t.spec.task_id);
  std::vector<CellKey> cells;
  for (auto m : config.methods)
    for (auto s : config.settings)
      for (auto seed : config.seeds) {
        if (s == tasks::Setting::few_shot) {
          cells.push_back({m, s, seed, std::nullopt});
        } else {
          for (const auto& h : holdouts) cells.push_back({m, s, seed, h});
        }
      }
  return cells;
}

namespace {

std::vector<std::string> trace_lines_for(const CellOutcome& o) {
  std::vector<std::string> lines;
  const json tags = {{"cell", o.result.key.id()},
                     {"method", to_string(o.result.key.method)},
                     {"setting", tasks::to_string(o.result.key.setting)},
                     {"seed", o.result.key.seed}};
  if (!o.trace.empty()) {
    std::ostringstream os;
    meta::write_trace_jsonl(os, o.trace, tags);
    std::string line;
    std::istringstream is(os.str());
    while (std::getline(is, line)) lines.push_back(line);
  }
  for (std::size_t e = 0; e < o.finetune_loss.size(); ++e) {
    json j = tags;
    j["epoch"] = e;
    j["loss"] = o.finetune_loss[e];
    lines.push_back(j.dump());
  }
  return lines;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data,
                         std::vector<std::string>* trace_lines, const ProgressFn& progress) {
  config.validate();
  check_family(data);
  for (const auto& h : config.holdouts) plan_slot(data, h);
  for (auto m : config.methods) {
    if (m == Method::ft) continue;
    for (auto s : config.settings) {
      const auto mc = config.meta_for(m, s);
      for (const auto& t : data)
        if (t.train.size() <= mc.support_size)
          throw ConfigError("config: task '" + t.spec.task_id + "' has " + std::to_string(t.train.size()) +
                            " train examples, too few for support size " + std::to_string(mc.support_size));
    }
  }

  const auto keys = enumerate_cells(config, data);
  RunReport report;
  report.config = config;
  for (const auto& t : data) report.task_ids.push_back(t.spec.task_id);
  report.class_names = ordinal::OrdinalScale::for_classes(data.front().spec.class_count).names();
  report.cells.resize(keys.size());
  std::vector<std::vector<std::string>> traces(keys.size());

  const std::size_t threads = config.deterministic ? 1 : config.threads;
  std::mutex progress_mutex;
  std::size_t done = 0;
  parallel_for(keys.size(), threads, [&](std::size_t i) {
    CellResult res;
    try {
      auto o = run_cell(config, data, keys[i]);
      if (trace_lines) traces[i] = trace_lines_for(o);
      res = std::move(o.result);
    } catch (const std::exception& e) {
      res = CellResult{};
      res.key = keys[i];
      res.ok = false;
      res.error = e.what();
    }
    report.cells[i] = res;
    if (progress) {
      std::lock_guard lock(progress_mutex);
      progress(res, ++done, keys.size());
    }
  });

  if (trace_lines)
    for (auto& t : traces) trace_lines->insert(trace_lines->end(), t.begin(), t.end());
  return report;
}

RunReport run_experiment(const ExperimentConfig& config, std::vector<std::string>* trace_lines,
                         const ProgressFn& progress) {
  config.validate();
  if (config.dataset.empty()) throw ConfigError("config: dataset path is empty");
  const auto data = tasks::load_dataset(config.dataset);
  return run_experiment(config, data, trace_lines, progress);
}

}  // namespace maoml::harness
