#pragma once

#include <functional>
#include <map>
#include <span>
#include <vector>

#include "maoml/harness/experiment.hpp"

namespace maoml::harness {

struct GridCell {
  double alpha = 0.0;
  double beta = 0.0;
  double score = 0.0;  ///< -inf when the cell diverged or threw
};

struct GridResult {
  GridCell best;
  std::vector<GridCell> cells;
};

/// Scores every (alpha, beta) pair and keeps the highest. NaN scores and
/// exceptions count as -inf; ties go to the smaller alpha, then smaller beta.
GridResult select_grid(std::span<const double> alphas, std::span<const double> betas,
                       const std::function<double(double alpha, double beta)>& score);

/// Validation accuracy of `method` in `setting` under (alpha, beta), computed
/// from train splits only. Few-shot: the last train image of every class is
/// held out per task. Zero-shot: each of `holdouts` (empty: every task) is left
/// out of training and scored on its train split. For ft, beta is the learning
/// rate and alpha is ignored.
double validation_score(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data, Method method,
                        tasks::Setting setting, double alpha, double beta,
                        std::span<const std::string> holdouts = {});

using GridKey = std::pair<Method, tasks::Setting>;

/// Best step sizes per configured (method, setting).
std::map<GridKey, GridResult> grid_search(const ExperimentConfig& config, std::span<const tasks::TaskDataset> data,
                                          std::span<const double> alphas, std::span<const double> betas,
                                          std::span<const std::string> holdouts = {});

/// `config` with each (method, setting)'s step sizes replaced by its grid winner.
ExperimentConfig apply_grid(const ExperimentConfig& config, const std::map<GridKey, GridResult>& best);

}  // namespace maoml::harness
