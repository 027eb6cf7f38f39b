#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maoml/autodiff/tensor.hpp"
#include "maoml/ordinal/corn.hpp"

namespace maoml::tasks {

/// One synthetic ordered-degradation task (a stand-in for one fruit type).
struct TaskSpec {
  std::string task_id;
  std::uint64_t base_pattern_seed = 0;
  /// Unit-norm direction in image space along which freshness degrades.
  std::vector<double> degradation_direction;
  double noise_scale = 0.05;
  std::size_t class_count = 5;
  std::size_t image_side = 16;
  /// Per-pixel amplitude of the base appearance pattern.
  double base_amplitude = 0.3;
  /// Task-specific shift of the base appearance along the degradation direction.
  double degradation_offset = 0.0;

  std::size_t pixel_count() const noexcept { return image_side * image_side; }
  void validate() const;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

enum class Split { train, test };
std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct Example {
  ad::Tensor image;  ///< flat [pixel_count]
  ordinal::RankLabel label;
  Split split = Split::train;
  std::size_t sample_index = 0;  ///< unique within (task, class); train samples come first

  friend bool operator==(const Example&, const Example&) = default;
};

struct TaskDataset {
  TaskSpec spec;
  std::vector<Example> train;
  std::vector<Example> test;

  friend bool operator==(const TaskDataset&, const TaskDataset&) = default;
};

/// Globally unique example id: "<task>/<split>/<class>/<sample>".
std::string example_id(const std::string& task_id, const Example& ex);

/// Knobs of the task-family generator used by `gen`.
struct GeneratorConfig {
  std::size_t tasks = 10;
  std::size_t classes = 5;
  std::size_t train_per_class = 4;
  std::size_t test_per_class = 6;
  std::size_t side = 16;
  double noise = 0.05;
  std::uint64_t seed = 42;
  /// Per-pixel amplitude of each task's base appearance pattern.
  double base_amplitude = 0.05;
  /// Cosine between every task's degradation direction and the shared one.
  double direction_sharing = 0.9;
  /// Task offsets along the degradation direction are drawn from U(-spread, spread).
  double offset_spread = 0.1;
};

/// Deterministic task specs t0..t{n-1}. Every direction mixes a family-wide
/// shared degradation pattern with a task-specific component orthogonal to it.
std::vector<TaskSpec> make_task_specs(const GeneratorConfig& config);

/// Appearance pattern of a task, flat [side*side]: a constant level plus
/// waves at frequencies 4..6. Orthogonal to every degradation direction when side > 12.
std::vector<double> base_pattern(std::uint64_t seed, std::size_t side, double amplitude);

/// image(y, s) = base + (offset + t) * direction + eps,  t = (y + u) / K,  u ~ U(0,1),
/// eps ~ N(0, noise^2) per pixel, seeded by (base seed, class, sample).
/// Samples [0, train_per_class) are train, the next test_per_class are test.
TaskDataset generate_task(const TaskSpec& spec, std::size_t train_per_class = 4, std::size_t test_per_class = 6);

std::vector<TaskDataset> generate_family(const GeneratorConfig& config);

/// The latent freshness value t of one sample (for oracles and tests).
double latent_freshness(const TaskSpec& spec, std::size_t class_index, std::size_t sample_index);

enum class Setting { zero_shot, few_shot };
std::string to_string(Setting s);
Setting setting_from_string(const std::string& s);

struct SplitPlan {
  Setting setting = Setting::few_shot;
  std::optional<std::string> holdout;
  std::vector<std::string> train_task_ids;
  std::vector<std::string> eval_task_ids;
};

/// Zero-shot: train on every task but `holdout`, evaluate on the holdout.
/// Few-shot: train and evaluate on all tasks. Throws ValidationError on an
/// unknown or missing holdout.
SplitPlan make_split(std::span<const TaskDataset> tasks, Setting setting,
                     const std::optional<std::string>& holdout = std::nullopt);

const TaskDataset& find_task(std::span<const TaskDataset> tasks, const std::string& id);

}  // namespace maoml::tasks
