#include "maoml/tasks/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "maoml/error.hpp"
#include "maoml/util/rng.hpp"

namespace maoml::tasks {

namespace {

constexpr std::uint64_t kSharedStream = 0x5348415245ULL;  // "SHARE"
constexpr std::uint64_t kTaskStream = 0x5441534BULL;      // "TASK"
constexpr std::uint64_t kBaseStream = 0x42415345ULL;      // "BASE"
constexpr int kAppearanceMinFreq = 4;
constexpr int kAppearanceMaxFreq = 6;  // exact orthogonality needs side > 2 * 6

// Sum of `waves` random plane cosines with integer frequencies in [-max_freq, max_freq].
std::vector<double> wave_field(Rng& rng, std::size_t side, std::size_t waves, int min_freq, int max_freq) {
  std::uniform_int_distribution<int> freq(-max_freq, max_freq);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> amp(0.0, 1.0);
  std::vector<double> field(side * side, 0.0);
  for (std::size_t w = 0; w < waves; ++w) {
    int fx = 0, fy = 0;
    do {
      fx = freq(rng);
      fy = freq(rng);
    } while (std::max(std::abs(fx), std::abs(fy)) < min_freq);
    const double ph = phase(rng);
    const double a = amp(rng);
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c) {
        const double arg = 2.0 * std::numbers::pi * (fx * static_cast<double>(c) + fy * static_cast<double>(r)) /
                               static_cast<double>(side) +
                           ph;
        field[r * side + c] += a * std::cos(arg);
      }
  }
  return field;
}

double norm2(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

void normalize(std::vector<double>& v) {
  const double n = norm2(v);
  if (!(n > 0.0)) throw NumericalError("cannot normalise a zero pattern");
  for (double& x : v) x /= n;
}

}  // namespace

void TaskSpec::validate() const {
  if (task_id.empty()) throw ValidationError("task spec: empty task id");
  if (class_count < 2) throw ValidationError("task spec '" + task_id + "': need at least 2 classes");
  if (image_side == 0) throw ValidationError("task spec '" + task_id + "': image side must be positive");
  if (!(noise_scale >= 0.0)) throw ValidationError("task spec '" + task_id + "': negative noise scale");
  if (degradation_direction.size() != pixel_count())
    throw ValidationError("task spec '" + task_id + "': direction has " +
                          std::to_string(degradation_direction.size()) + " entries, expected " +
                          std::to_string(pixel_count()));
  if (std::abs(norm2(degradation_direction) - 1.0) > 1e-9)
    throw ValidationError("task spec '" + task_id + "': degradation direction is not unit norm");
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + s + "'");
}

std::string example_id(const std::string& task_id, const Example& ex) {
  return task_id + "/" + to_string(ex.split) + "/" + std::to_string(ex.label.index) + "/" +
         std::to_string(ex.sample_index);
}

std::vector<double> base_pattern(std::uint64_t seed, std::size_t side, double amplitude) {
  Rng rng = make_rng({seed, kBaseStream});
  // appearance lives in a frequency band (DC plus 4..6) disjoint from the
  // degradation band (1..3), so it is orthogonal to every degradation direction
  auto field = wave_field(rng, side, 3, kAppearanceMinFreq, kAppearanceMaxFreq);
  std::normal_distribution<double> level(0.0, 1.0);
  const double dc = level(rng);
  for (double& v : field) v += dc;
  // rescale to the requested per-pixel RMS amplitude
  const double rms = norm2(field) / std::sqrt(static_cast<double>(field.size()));
  if (rms > 0.0)
    for (double& v : field) v *= amplitude / rms;
  return field;
}

std::vector<TaskSpec> make_task_specs(const GeneratorConfig& config) {
  if (config.tasks == 0) throw ValidationError("generator: need at least one task");
  if (!(config.direction_sharing >= 0.0 && config.direction_sharing <= 1.0))
    throw ValidationError("generator: direction_sharing must lie in [0, 1]");
  if (!(config.offset_spread >= 0.0)) throw ValidationError("generator: offset_spread must be >= 0");
  Rng shared_rng = make_rng({config.seed, kSharedStream});
  auto shared = wave_field(shared_rng, config.side, 4, 1, 3);
  normalize(shared);

  const double c = config.direction_sharing;
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  std::vector<TaskSpec> specs;
  for (std::size_t i = 0; i < config.tasks; ++i) {
    Rng rng = make_rng({config.seed, kTaskStream, i});
    auto own = wave_field(rng, config.side, 4, 1, 3);
    double proj = 0.0;
    for (std::size_t p = 0; p < own.size(); ++p) proj += own[p] * shared[p];
    for (std::size_t p = 0; p < own.size(); ++p) own[p] -= proj * shared[p];
    normalize(own);
    std::vector<double> dir(own.size());
    for (std::size_t p = 0; p < dir.size(); ++p) dir[p] = c * shared[p] + s * own[p];
    normalize(dir);
    std::uniform_real_distribution<double> shift(-config.offset_spread, config.offset_spread);
    const double offset = config.offset_spread > 0.0 ? shift(rng) : 0.0;

    TaskSpec spec;
    spec.task_id = "t" + std::to_string(i);
    spec.base_pattern_seed = derive_seed({config.seed, kBaseStream, i});
    spec.degradation_direction = std::move(dir);
    spec.noise_scale = config.noise;
    spec.class_count = config.classes;
    spec.image_side = config.side;
    spec.base_amplitude = config.base_amplitude;
    spec.degradation_offset = offset;
    specs.push_back(std::move(spec));
  }
  return specs;
}

namespace {

Rng sample_rng(const TaskSpec& spec, std::size_t class_index, std::size_t sample_index) {
  return make_rng({spec.base_pattern_seed, class_index, sample_index});
}

}  // namespace

double latent_freshness(const TaskSpec& spec, std::size_t class_index, std::size_t sample_index) {
  Rng rng = sample_rng(spec, class_index, sample_index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return (static_cast<double>(class_index) + unit(rng)) / static_cast<double>(spec.class_count);
}

TaskDataset generate_task(const TaskSpec& spec, std::size_t train_per_class, std::size_t test_per_class) {
  spec.validate();
  TaskDataset ds;
  ds.spec = spec;
  const auto base = base_pattern(spec.base_pattern_seed, spec.image_side, spec.base_amplitude);
  const std::size_t pixels = spec.pixel_count();
  for (std::size_t y = 0; y < spec.class_count; ++y) {
    for (std::size_t s = 0; s < train_per_class + test_per_class; ++s) {
      Rng rng = sample_rng(spec, y, s);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::normal_distribution<double> noise(0.0, 1.0);
      const double t = (static_cast<double>(y) + unit(rng)) / static_cast<double>(spec.class_count);
      ad::Tensor img({pixels});
      for (std::size_t p = 0; p < pixels; ++p)
        img[p] = base[p] + (spec.degradation_offset + t) * spec.degradation_direction[p] + spec.noise_scale * noise(rng);
      Example ex{std::move(img), {y}, s < train_per_class ? Split::train : Split::test, s};
      (ex.split == Split::train ? ds.train : ds.test).push_back(std::move(ex));
    }
  }
  return ds;
}

std::vector<TaskDataset> generate_family(const GeneratorConfig& config) {
  std::vector<TaskDataset> out;
  for (const auto& spec : make_task_specs(config))
    out.push_back(generate_task(spec, config.train_per_class, config.test_per_class));
  return out;
}

std::string to_string(Setting s) { return s == Setting::zero_shot ? "zero-shot" : "few-shot"; }

Setting setting_from_string(const std::string& s) {
  if (s == "zero-shot") return Setting::zero_shot;
  if (s == "few-shot") return Setting::few_shot;
  throw ConfigError("unknown setting '" + s + "'");
}

const TaskDataset& find_task(std::span<const TaskDataset> tasks, const std::string& id) {
  for (const auto& t : tasks)
    if (t.spec.task_id == id) return t;
  throw ValidationError("unknown task id '" + id + "'");
}

SplitPlan make_split(std::span<const TaskDataset> tasks, Setting setting, const std::optional<std::string>& holdout) {
  if (tasks.empty()) throw ValidationError("make_split: no tasks");
  SplitPlan plan;
  plan.setting = setting;
  if (setting == Setting::few_shot) {
    for (const auto& t : tasks) plan.train_task_ids.push_back(t.spec.task_id);
    plan.eval_task_ids = plan.train_task_ids;
    return plan;
  }
  if (!holdout) throw ValidationError("make_split: zero-shot needs a holdout task");
  find_task(tasks, *holdout);
  if (tasks.size() < 2) throw ValidationError("make_split: zero-shot needs at least two tasks");
  plan.holdout = holdout;
  for (const auto& t : tasks)
    if (t.spec.task_id != *holdout) plan.train_task_ids.push_back(t.spec.task_id);
  plan.eval_task_ids = {*holdout};
  return plan;
}

}  // namespace maoml::tasks
