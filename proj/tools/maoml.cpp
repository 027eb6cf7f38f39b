// maoml: generate task families, train and evaluate models, run experiment grids.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "maoml/error.hpp"
#include "maoml/harness/experiment.hpp"
#include "maoml/harness/grid_search.hpp"
#include "maoml/harness/report.hpp"
#include "maoml/model/mlp.hpp"
#include "maoml/tasks/dataset_io.hpp"
#include "maoml/tasks/synth.hpp"

namespace fs = std::filesystem;
using namespace maoml;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumerical = 4 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  bool deterministic = false;
};

harness::ExperimentConfig load(const Globals& g, const std::string& dataset) {
  harness::ExperimentConfig c;
  if (!g.config.empty()) c = harness::load_config(g.config);
  if (!dataset.empty()) c.dataset = dataset;
  if (g.seed) c.seeds = {*g.seed};
  if (!g.out.empty()) c.output_dir = g.out;
  if (g.threads) c.threads = *g.threads;
  if (g.deterministic) c.deterministic = true;
  if (c.deterministic) c.threads = 1;
  c.validate();
  return c;
}

fs::path out_dir(const harness::ExperimentConfig& c) {
  if (c.output_dir.empty()) throw ConfigError("no output directory; pass --out or set output_dir");
  return c.output_dir;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string body;
  for (const auto& l : lines) body += l + "\n";
  harness::write_file_atomic(path, body);
}

std::vector<harness::ReportFormat> parse_formats(const std::vector<std::string>& names) {
  std::vector<harness::ReportFormat> out;
  for (const auto& n : names) {
    if (n == "csv") out.push_back(harness::ReportFormat::csv);
    else if (n == "json") out.push_back(harness::ReportFormat::json);
    else if (n == "markdown" || n == "md") out.push_back(harness::ReportFormat::markdown);
    else throw ConfigError("unknown report format '" + n + "'");
  }
  return out;
}

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learning for ordinal ranking tasks"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON experiment config");
  app.add_option("--seed", g.seed, "Seed (generator seed for gen, single experiment seed otherwise)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, bit-reproducible run");

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic task family");
  tasks::GeneratorConfig gc;
  gen->add_option("--tasks", gc.tasks, "Number of tasks")->capture_default_str();
  gen->add_option("--classes", gc.classes, "Ordered classes per task")->capture_default_str();
  gen->add_option("--train-per-class", gc.train_per_class)->capture_default_str();
  gen->add_option("--test-per-class", gc.test_per_class)->capture_default_str();
  gen->add_option("--side", gc.side, "Image side length")->capture_default_str();
  gen->add_option("--noise", gc.noise, "Per-pixel noise std")->capture_default_str();
  gen->add_option("--base-amplitude", gc.base_amplitude)->capture_default_str();
  gen->add_option("--direction-sharing", gc.direction_sharing)->capture_default_str();
  gen->add_option("--offset-spread", gc.offset_spread)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train one (method, setting, seed) model");
  std::string dataset, method = "maoml", setting = "few-shot", holdout;
  train->add_option("--dataset", dataset, "Dataset directory (overrides config)");
  train->add_option("--method", method, "ft | maml | maoml")->capture_default_str();
  train->add_option("--setting", setting, "zero-shot | few-shot")->capture_default_str();
  train->add_option("--holdout", holdout, "Zero-shot holdout task");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint stem (without .bin/.json)")->required();
  eval->add_option("--dataset", dataset, "Dataset directory (overrides config)");
  eval->add_option("--method", method, "ft | maml | maoml")->capture_default_str();
  eval->add_option("--setting", setting, "zero-shot | few-shot")->capture_default_str();
  eval->add_option("--holdout", holdout, "Zero-shot holdout task");

  // run
  auto* run = app.add_subcommand("run", "Run the full method x setting x seed grid");
  run->add_option("--dataset", dataset, "Dataset directory (overrides config)");
  bool quiet = false;
  run->add_flag("--quiet", quiet, "No per-cell progress");

  // grid-search
  auto* grid = app.add_subcommand("grid-search", "Grid search over inner and outer step sizes");
  std::vector<double> alphas{0.001, 0.01, 0.1}, betas{0.001, 0.01, 0.1};
  grid->add_option("--dataset", dataset, "Dataset directory (overrides config)");
  grid->add_option("--alphas", alphas, "Inner step sizes")->delimiter(',')->capture_default_str();
  grid->add_option("--betas", betas, "Outer step sizes (ft learning rates)")->delimiter(',')->capture_default_str();
  std::vector<std::string> grid_holdouts;
  grid->add_option("--holdouts", grid_holdouts, "Tasks left out for zero-shot validation (default: all)")
      ->delimiter(',');

  // report
  auto* rep = app.add_subcommand("report", "Render tables from a report.json");
  std::string report_in;
  std::vector<std::string> formats{"csv", "json", "markdown"};
  rep->add_option("--in", report_in, "report.json to render")->required();
  rep->add_option("--format", formats, "csv, json, markdown")->delimiter(',')->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (gen->parsed()) {
    return run_guarded([&] {
      if (g.seed) gc.seed = *g.seed;
      if (g.out.empty()) throw ConfigError("gen: --out is required");
      const auto family = tasks::generate_family(gc);
      tasks::save_dataset(g.out, family);
      std::cout << "wrote " << family.size() << " tasks to " << g.out << "\n";
    });
  }

  if (train->parsed()) {
    return run_guarded([&] {
      auto c = load(g, dataset);
      const auto data = tasks::load_dataset(c.dataset);
      harness::CellKey key{harness::method_from_string(method), tasks::setting_from_string(setting), c.seeds.front(),
                           std::nullopt};
      if (!holdout.empty()) key.holdout = holdout;
      const auto o = harness::run_cell(c, data, key, false);
      const auto dir = out_dir(c);
      fs::create_directories(dir);
      model::save_checkpoint(o.model, dir / "model");
      std::vector<std::string> lines;
      std::ostringstream os;
      meta::write_trace_jsonl(os, o.trace, {{"cell", key.id()}});
      std::istringstream is(os.str());
      for (std::string l; std::getline(is, l);) lines.push_back(l);
      for (std::size_t e = 0; e < o.finetune_loss.size(); ++e)
        lines.push_back(json{{"cell", key.id()}, {"epoch", e}, {"loss", o.finetune_loss[e]}}.dump());
      write_lines(dir / "trace.jsonl", lines);
      std::cout << "trained " << key.id() << " -> " << (dir / "model").string() << "\n";
    });
  }

  if (eval->parsed()) {
    return run_guarded([&] {
      auto c = load(g, dataset);
      const auto data = tasks::load_dataset(c.dataset);
      const auto m = model::load_checkpoint(checkpoint);
      const auto mth = harness::method_from_string(method);
      const auto st = tasks::setting_from_string(setting);
      std::optional<std::string> h;
      if (!holdout.empty()) h = holdout;
      const auto plan = tasks::make_split(data, st, h);
      meta::check_head(m.config, c.loss_for(mth));
      const auto results = harness::evaluate_model(c, m, mth, st, data, plan.eval_task_ids);
      json out = json::array();
      for (const auto& r : results)
        out.push_back({{"task_id", r.task_id}, {"accuracy", r.accuracy}, {"mae", r.mae}, {"count", r.count}});
      std::cout << out.dump(2) << "\n";
    });
  }

  if (run->parsed()) {
    return run_guarded([&] {
      auto c = load(g, dataset);
      const auto dir = out_dir(c);
      std::vector<std::string> trace;
      harness::ProgressFn progress;
      if (!quiet)
        progress = [](const harness::CellResult& r, std::size_t done, std::size_t total) {
          std::fprintf(stderr, "[%zu/%zu] %s %s\n", done, total, r.key.id().c_str(),
                       r.ok ? "ok" : ("FAILED: " + r.error).c_str());
        };
      const auto report = harness::run_experiment(c, &trace, progress);
      harness::render_report(report, dir);
      write_lines(dir / "trace.jsonl", trace);
      std::cout << harness::summary_csv(report);
      for (const auto& cell : report.cells)
        if (!cell.ok) throw NumericalError("cell " + cell.key.id() + " failed: " + cell.error);
    });
  }

  if (grid->parsed()) {
    return run_guarded([&] {
      auto c = load(g, dataset);
      const auto data = tasks::load_dataset(c.dataset);
      const auto best = harness::grid_search(c, data, alphas, betas, grid_holdouts);
      json out = json::object();
      for (const auto& [key, r] : best) {
        json cells = json::array();
        for (const auto& cell : r.cells) cells.push_back({{"alpha", cell.alpha}, {"beta", cell.beta}, {"score", cell.score}});
        out[harness::to_string(key.first) + "/" + tasks::to_string(key.second)] = {{"best", {{"alpha", r.best.alpha}, {"beta", r.best.beta}, {"score", r.best.score}}},
                                      {"cells", cells}};
      }
      std::cout << out.dump(2) << "\n";
      if (!c.output_dir.empty()) {
        const fs::path dir = c.output_dir;
        harness::write_file_atomic(dir / "grid.json", out.dump(2) + "\n");
        harness::write_file_atomic(dir / "tuned_config.json", json(harness::apply_grid(c, best)).dump(2) + "\n");
      }
    });
  }

  if (rep->parsed()) {
    return run_guarded([&] {
      const auto report = harness::load_report(report_in);
      const fs::path dir = g.out.empty() ? fs::path(report_in).parent_path() : fs::path(g.out);
      for (const auto& f : harness::render_report(report, dir.empty() ? "." : dir, parse_formats(formats)).files)
        std::cout << f.string() << "\n";
    });
  }
  return kOk;
}
