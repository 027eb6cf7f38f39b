#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "maoml/error.hpp"
#include "maoml/harness/experiment.hpp"
#include "maoml/harness/grid_search.hpp"
#include "maoml/harness/report.hpp"

namespace fs = std::filesystem;
namespace harness = maoml::harness;
namespace tasks = maoml::tasks;
using harness::Method;

namespace {

std::vector<tasks::TaskDataset> small_family(std::size_t n = 4, double base_amplitude = 0.05) {
  tasks::GeneratorConfig g;
  g.tasks = n;
  g.base_amplitude = base_amplitude;
  g.side = 13;
  return tasks::generate_family(g);
}

harness::ExperimentConfig small_config() {
  harness::ExperimentConfig c;
  c.seeds = {0, 1};
  c.hidden_dims = {8};
  c.meta.epochs = 3;
  c.meta.meta_batch_size = 2;
  c.meta.support_size = 10;
  c.finetune.epochs = 3;
  return c;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("maoml_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
    rows.push_back(f);
  }
  return rows;
}

}  // namespace

TEST(Config, ValidationRejectsBadCombinations) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.losses[Method::maoml] = maoml::meta::LossKind::ce;
  EXPECT_THROW(c.validate(), maoml::ConfigError);
  c = small_config();
  c.seeds.clear();
  EXPECT_THROW(c.validate(), maoml::ConfigError);
  c = small_config();
  c.methods = {Method::ft, Method::ft};
  EXPECT_THROW(c.validate(), maoml::ConfigError);
  c = small_config();
  c.hidden_dims = {8, 0};
  EXPECT_THROW(c.validate(), maoml::ConfigError);
  c = small_config();
  c.meta.grad_mode = maoml::meta::GradMode::hvp_second_order;
  c.meta.inner_steps = 3;
  EXPECT_THROW(c.validate(), maoml::ConfigError);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  auto c = small_config();
  c.meta_overrides[Method::maml] = c.meta;
  c.meta_overrides[Method::maml].alpha = 0.5;
  c.holdouts = {"t1"};
  harness::ExperimentConfig back;
  harness::from_json(nlohmann::json(c), back);
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  EXPECT_EQ(back.meta_for(Method::maml).alpha, 0.5);
  EXPECT_EQ(back.meta_for(Method::maoml).alpha, c.meta.alpha);

  const auto dir = temp_dir("config");
  std::ofstream(dir / "bad.json") << R"({"seeds": [1], "learning_rate": 0.1})";
  EXPECT_THROW(harness::load_config((dir / "bad.json").string()), maoml::ConfigError);
  std::ofstream(dir / "broken.json") << R"({"seeds": [1)";
  EXPECT_THROW(harness::load_config((dir / "broken.json").string()), maoml::ConfigError);
  std::ofstream(dir / "partial.json") << R"({"meta_overrides": {"maoml": {"beta": 0.2}}})";
  const auto partial = harness::load_config((dir / "partial.json").string());
  EXPECT_EQ(partial.meta_for(Method::maoml).beta, 0.2);
  EXPECT_EQ(partial.meta_for(Method::maoml).alpha, partial.meta.alpha);
}

TEST(Cells, ZeroShotTrainsOneModelPerHoldout) {
  const auto data = small_family();
  const auto c = small_config();
  const auto cells = harness::enumerate_cells(c, data);
  // 3 methods x 2 seeds x (4 holdouts + 1 few-shot)
  EXPECT_EQ(cells.size(), 3u * 2u * 5u);
  std::size_t zero = 0;
  for (const auto& k : cells) zero += k.holdout.has_value();
  EXPECT_EQ(zero, 3u * 2u * 4u);
  EXPECT_EQ(cells.front().id(), "ft/zero-shot/seed0/t0");
}

TEST(Cells, ZeroShotNeverTouchesTheHoldout) {
  const auto data = small_family();
  const auto c = small_config();
  for (Method m : {Method::ft, Method::maml, Method::maoml}) {
    const harness::CellKey key{m, tasks::Setting::zero_shot, 0, "t2"};
    const auto out = harness::run_cell(c, data, key);
    ASSERT_TRUE(out.result.ok) << out.result.error;
    EXPECT_EQ(out.result.holdout_leaks, 0u);
    EXPECT_GT(out.result.audit_size, 0u);
    for (const auto& id : out.audit_ids) EXPECT_NE(id.rfind("t2/", 0), 0u) << id;
    ASSERT_EQ(out.result.tasks.size(), 1u);
    EXPECT_EQ(out.result.tasks[0].task_id, "t2");
    EXPECT_EQ(out.result.tasks[0].count, 30u);
  }
}

TEST(Cells, FewShotEvaluatesEveryTestImage) {
  tasks::GeneratorConfig g;
  g.side = 13;
  const auto data = tasks::generate_family(g);
  auto c = small_config();
  const auto out = harness::run_cell(c, data, {Method::maoml, tasks::Setting::few_shot, 1, std::nullopt});
  ASSERT_TRUE(out.result.ok) << out.result.error;
  std::size_t total = 0;
  for (const auto& t : out.result.tasks) total += t.count;
  EXPECT_EQ(total, 300u);
  EXPECT_EQ(out.result.trained_models, 1u);
}

TEST(Run, ReportTablesAndJson) {
  const auto data = small_family(3);
  auto c = small_config();
  c.methods = {Method::ft, Method::maoml};
  std::vector<std::string> trace;
  const auto report = harness::run_experiment(c, data, &trace);
  EXPECT_FALSE(trace.empty());
  EXPECT_EQ(report.cells.size(), 2u * 2u * 4u);

  nlohmann::json j = report;
  harness::RunReport back;
  harness::from_json(j, back);
  EXPECT_EQ(back, report);

  const auto per_task = harness::per_task_table(report);
  EXPECT_EQ(per_task.size(), 4u * (3u + 1u));
  EXPECT_EQ(per_task[3].task_id, "Average");

  // summary accuracy equals the mean over seeds of the per-task averages
  const auto summary = harness::summarize(report);
  ASSERT_EQ(summary.size(), 4u);
  for (const auto& row : summary) {
    std::vector<double> per_seed;
    for (auto seed : c.seeds) {
      double acc = 0.0;
      std::size_t n = 0;
      for (const auto& cell : report.cells)
        if (cell.key.method == row.method && cell.key.setting == row.setting && cell.key.seed == seed)
          for (const auto& t : cell.tasks) {
            acc += t.accuracy;
            ++n;
          }
      per_seed.push_back(acc / static_cast<double>(n));
    }
    EXPECT_NEAR(row.mean_accuracy, (per_seed[0] + per_seed[1]) / 2.0, 1e-12);
    EXPECT_NEAR(row.std_accuracy, std::abs(per_seed[0] - per_seed[1]) / std::sqrt(2.0), 1e-12);
  }

  const auto csv = read_csv(harness::summary_csv(report));
  ASSERT_EQ(csv.size(), 5u);
  EXPECT_EQ(csv[0][0], "method");
  for (std::size_t r = 1; r < csv.size(); ++r)
    EXPECT_NEAR(std::stod(csv[r][7]), summary[r - 1].mean_accuracy, 1e-9);

  const auto labels = harness::per_label_table(report);
  EXPECT_EQ(labels.size(), 4u * (5u + 1u));

  const auto dir = temp_dir("render");
  const auto files = harness::render_report(report, dir);
  EXPECT_EQ(files.files.size(), 5u);
  EXPECT_EQ(harness::load_report(dir / "report.json"), report);
  std::ifstream md(dir / "report.md");
  std::stringstream ss;
  ss << md.rdbuf();
  EXPECT_NE(ss.str().find("MLP"), std::string::npos);
}

TEST(Run, SingleCellSummary) {
  const auto data = small_family(2);
  auto c = small_config();
  c.methods = {Method::maml};
  c.settings = {tasks::Setting::few_shot};
  c.seeds = {4};
  const auto report = harness::run_experiment(c, data);
  const auto summary = harness::summarize(report);
  ASSERT_EQ(summary.size(), 1u);
  EXPECT_EQ(summary[0].seed_accuracy.size(), 1u);
  EXPECT_EQ(summary[0].std_accuracy, 0.0);
}

TEST(Run, FailedCellsAreMarked) {
  // brighter inputs so a huge step overflows the first layer instead of killing every ReLU
  const auto data = small_family(3, 0.3);
  auto c = small_config();
  c.methods = {Method::ft};
  c.settings = {tasks::Setting::few_shot};
  c.finetune.lr = 1e6;
  c.finetune.epochs = 20;
  const auto report = harness::run_experiment(c, data);
  ASSERT_EQ(report.cells.size(), 2u);
  for (const auto& cell : report.cells) {
    EXPECT_FALSE(cell.ok);
    EXPECT_FALSE(cell.error.empty());
  }
  EXPECT_EQ(harness::summarize(report)[0].failed_cells, 2u);
  EXPECT_NE(harness::summary_csv(report).find("n/a"), std::string::npos);
  EXPECT_NE(harness::markdown_tables(report).find("ft/few-shot/seed0"), std::string::npos);
}

TEST(Run, ThreadCountDoesNotChangeResults) {
  const auto data = small_family(3);
  auto c = small_config();
  c.threads = 1;
  const auto one = harness::run_experiment(c, data);
  c.threads = 3;
  const auto many = harness::run_experiment(c, data);
  EXPECT_EQ(harness::summary_csv(one), harness::summary_csv(many));
  EXPECT_EQ(one.cells, many.cells);
}

TEST(Run, RejectsMismatchedInputs) {
  auto data = small_family(3);
  auto c = small_config();
  c.holdouts = {"t9"};
  EXPECT_THROW(harness::run_experiment(c, data), maoml::ConfigError);
  c = small_config();
  c.meta.support_size = 20;
  EXPECT_THROW(harness::run_experiment(c, data), maoml::ConfigError);
}

TEST(Grid, SingleCellAndNaN) {
  const std::vector<double> one = {0.1};
  const auto r = harness::select_grid(one, one, [](double, double) { return 0.5; });
  EXPECT_EQ(r.best.alpha, 0.1);
  EXPECT_EQ(r.cells.size(), 1u);
  const std::vector<double> two = {0.1, 0.2};
  const auto nan = harness::select_grid(two, one, [](double a, double) {
    if (a < 0.15) return std::numeric_limits<double>::quiet_NaN();
    return 0.1;
  });
  EXPECT_EQ(nan.best.alpha, 0.2);
  EXPECT_TRUE(std::isinf(nan.cells[0].score));
  const auto thrown = harness::select_grid(two, one, [](double a, double) -> double {
    if (a > 0.15) throw maoml::NumericalError("diverged");
    return 0.3;
  });
  EXPECT_EQ(thrown.best.alpha, 0.1);
  const std::vector<double> none;
  EXPECT_THROW(harness::select_grid(none, one, [](double, double) { return 0.0; }), maoml::ConfigError);
}

TEST(Grid, TiesPreferSmallerSteps) {
  const std::vector<double> a = {0.3, 0.1, 0.2}, b = {0.02, 0.01};
  const auto r = harness::select_grid(a, b, [](double, double) { return 1.0; });
  EXPECT_EQ(r.best.alpha, 0.1);
  EXPECT_EQ(r.best.beta, 0.01);
}

TEST(Grid, QuadraticPicksStepClosestToOptimal) {
  // one gradient step on L = 1/2 a x^2 from x0 lands at (1 - s a) x0; optimum s = 1/a per axis
  const double curvature = 4.0;
  const std::vector<double> alphas = {0.05, 0.2, 0.5}, betas = {0.1, 0.25, 0.6};
  const auto r = harness::select_grid(alphas, betas, [&](double alpha, double beta) {
    const double x = 1.0 - alpha * curvature, y = 1.0 - beta * curvature;
    return -x * x - y * y;
  });
  EXPECT_EQ(r.best.alpha, 0.2);
  EXPECT_EQ(r.best.beta, 0.25);
}

TEST(Grid, ApplyWritesWinnersPerSetting) {
  auto c = small_config();
  const auto zero = tasks::Setting::zero_shot, few = tasks::Setting::few_shot;
  std::map<harness::GridKey, harness::GridResult> best;
  best[{Method::ft, few}].best = {0.0, 0.3, 1.0};
  best[{Method::maoml, zero}].best = {0.05, 0.02, 1.0};
  const auto tuned = harness::apply_grid(c, best);
  EXPECT_EQ(tuned.finetune_for(few).lr, 0.3);
  EXPECT_EQ(tuned.finetune_for(zero).lr, c.finetune.lr);
  EXPECT_EQ(tuned.meta_for(Method::maoml, zero).alpha, 0.05);
  EXPECT_EQ(tuned.meta_for(Method::maoml, zero).beta, 0.02);
  EXPECT_EQ(tuned.meta_for(Method::maoml, few).alpha, c.meta.alpha);
  EXPECT_EQ(tuned.meta_for(Method::maml, zero).alpha, c.meta.alpha);

  harness::ExperimentConfig back;
  harness::from_json(nlohmann::json(tuned), back);
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(tuned));
  EXPECT_EQ(back.meta_for(Method::maoml, zero).alpha, 0.05);
  EXPECT_EQ(back.finetune_for(few).lr, 0.3);
}

TEST(Grid, ValidationNeverScoresTestImages) {
  const auto data = small_family(3);
  auto c = small_config();
  c.seeds = {0};
  for (auto setting : {tasks::Setting::few_shot, tasks::Setting::zero_shot}) {
    const std::vector<std::string> holdouts = {"t1"};
    const double s = harness::validation_score(c, data, Method::maoml, setting, 0.05, 0.05, holdouts);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  // a family whose test splits are garbage scores the same
  auto scrambled = data;
  for (auto& t : scrambled)
    for (auto& ex : t.test) ex.label.index = 0;
  EXPECT_EQ(harness::validation_score(c, data, Method::ft, tasks::Setting::few_shot, 0.0, 0.05),
            harness::validation_score(c, scrambled, Method::ft, tasks::Setting::few_shot, 0.0, 0.05));
  EXPECT_EQ(harness::validation_score(c, data, Method::maml, tasks::Setting::zero_shot, 0.05, 0.05),
            harness::validation_score(c, scrambled, Method::maml, tasks::Setting::zero_shot, 0.05, 0.05));
}

TEST(Config, SettingOverridesFromJson) {
  const auto dir = temp_dir("overrides");
  std::ofstream(dir / "o.json") << R"({"meta": {"alpha": 0.2},
    "meta_overrides": {"maml": {"beta": 0.5}, "maml/zero-shot": {"alpha": 0.01}},
    "finetune_overrides": {"zero-shot": {"epochs": 7}}})";
  const auto c = harness::load_config((dir / "o.json").string());
  EXPECT_EQ(c.meta_for(Method::maml, tasks::Setting::zero_shot).alpha, 0.01);
  EXPECT_EQ(c.meta_for(Method::maml, tasks::Setting::zero_shot).beta, 0.5);
  EXPECT_EQ(c.meta_for(Method::maml, tasks::Setting::few_shot).alpha, 0.2);
  EXPECT_EQ(c.finetune_for(tasks::Setting::zero_shot).epochs, 7u);
  EXPECT_EQ(c.finetune_for(tasks::Setting::few_shot).epochs, c.finetune.epochs);
  std::ofstream(dir / "bad.json") << R"({"meta_overrides": {"maml/two-shot": {"alpha": 0.01}}})";
  EXPECT_THROW(harness::load_config((dir / "bad.json").string()), maoml::ConfigError);
}
