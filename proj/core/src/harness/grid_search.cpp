#include "maoml/harness/grid_search.hpp"

#include <cmath>
#include <limits>

#include "maoml/error.hpp"

namespace maoml::harness {

GridResult select_grid(std::span<const double> alphas, std::span<const double> betas,
                       const std::function<double(double, double)>& score) {
  if (alphas.empty() || betas.empty()) throw ConfigError("grid search: empty grid");
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  GridResult out;
  bool have = false;
  for (double a : alphas)
    for (double b : betas) {
      double s = kNegInf;
      try {
        s = score(a, b);
      } catch (const std::exception&) {
        s = kNegInf;
      }
      if (std::isnan(s)) s = kNegInf;
      GridCell cell{a, b, s};
      out.cells.push_back(cell);
      const bool better = !have || s > out.best.score ||
                          (s == out.best.score && (a < out.best.alpha || (a == out.best.alpha && b < out.best.beta)));
      if (better) {
        out.best = cell;
        have = true;
      }
    }
  return out;
}

namespace {

/// Moves the last train sample of every class into the test split.
std::vector<tasks::TaskDataset> validation_family(std::span<const tasks::TaskDataset> data) {
  std::vector<tasks::TaskDataset> out;
  for (const auto& t : data) {
    tasks::TaskDataset v{t.spec, {}, {}};
    std::vector<std::size_t> last(t.spec.class_count, 0);
    std::vector<bool> seen(t.spec.class_count, false);
    for (const auto& ex : t.train) {
      const auto c = ex.label.index;
      if (!seen[c] || ex.sample_index > last[c]) last[c] = ex.sample_index;
      seen[c] = true;
    }
    for (const auto& ex : t.train) {
      if (ex.sample_index == last[ex.label.index]) {
        auto copy = ex;
        copy.split = tasks::Split::test;
        v.test.push_back(copy);
      } else {
        v.train.push_back(ex);
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

/// Every task scored on its own train split.
std::vector<tasks::TaskDataset> train_as_test(std::span<const tasks::TaskDataset> data) {
  std::vector<tasks::TaskDataset> out;
  for (const auto& t : data) {
    tasks::TaskDataset v{t.spec, t.train, t.train};
    for (auto& ex : v.test) ex.split = tasks::Split::test;
    out.push_back(std::move(v));
  }
  return out;
}

ExperimentConfig with_steps(const ExperimentConfig& config, Method method, tasks::Setting setting, double alpha,
                            double beta) {
  ExperimentConfig c = config;
  if (method == Method::ft) {
    auto f = c.finetune_for(setting);
    f.lr = beta;
    c.finetune_overrides[setting] = f;
  } else {
    auto mc = c.meta_for(method, setting);
    mc.alpha = alpha;
    mc.beta = beta;
    c.setting_overrides[{method, setting}] = mc;
  }
  return c;
}

}  // namespace

double validation_score(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data, Method method,
                        tasks::Setting setting, double alpha, double beta, std::span<const std::string> holdouts) {
  const auto c = with_steps(config, method, setting, alpha, beta);
  std::vector<tasks::TaskDataset> family;
  std::vector<CellKey> keys;
  if (setting == tasks::Setting::few_shot) {
    family = validation_family(data);
    for (auto seed : c.seeds) keys.push_back({method, setting, seed, std::nullopt});
  } else {
    family = train_as_test(data);
    std::vector<std::string> ids(holdouts.begin(), holdouts.end());
    if (ids.empty())
      for (const auto& t : data) ids.push_back(t.spec.task_id);
    for (auto seed : c.seeds)
      for (const auto& h : ids) keys.push_back({method, setting, seed, h});
  }
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& key : keys) {
    const auto outcome = run_cell(c, family, key);
    for (const auto& t : outcome.result.tasks) {
      total += t.accuracy;
      ++n;
    }
  }
  if (n == 0) return std::nan("");
  return total / static_cast<double>(n);
}

std::map<GridKey, GridResult> grid_search(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data,
                                          std::span<const double> alphas, std::span<const double> betas,
                                          std::span<const std::string> holdouts) {
  config.validate();
  if (alphas.empty() || betas.empty()) throw ConfigError("grid search: empty grid");
  std::map<GridKey, GridResult> out;
  for (auto m : config.methods)
    for (auto s : config.settings) {
      // ft has no inner step; score it once per beta
      const std::vector<double> only_first{alphas.front()};
      const auto a = m == Method::ft ? std::span<const double>(only_first) : alphas;
      out[{m, s}] = select_grid(
          a, betas, [&](double al, double be) { return validation_score(config, data, m, s, al, be, holdouts); });
    }
  return out;
}

ExperimentConfig apply_grid(const ExperimentConfig& config, const std::map<GridKey, GridResult>& best) {
  ExperimentConfig c = config;
  for (const auto& [key, r] : best) c = with_steps(c, key.first, key.second, r.best.alpha, r.best.beta);
  return c;
}

}  // namespace maoml::harness
