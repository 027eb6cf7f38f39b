#include <benchmark/benchmark.h>

#include <random>

#include "maoml/meta/training.hpp"
#include "maoml/model/mlp.hpp"
#include "maoml/tasks/synth.hpp"

namespace ad = maoml::ad;
namespace meta = maoml::meta;
namespace model = maoml::model;

namespace {

std::shared_ptr<meta::LabeledData> random_data(std::size_t n, std::size_t d, std::size_t k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto data = std::make_shared<meta::LabeledData>();
  data->x = ad::Tensor({n, d});
  for (auto& v : data->x.data()) v = g(rng);
  for (std::size_t i = 0; i < n; ++i) data->y.push_back({rng() % k});
  return data;
}

model::Model default_model(meta::LossKind loss) {
  model::ModelConfig cfg;
  cfg.head = meta::head_for(loss);
  return model::init_model(cfg);
}

void BM_ValueAndGrad(benchmark::State& state) {
  const auto loss = state.range(0) == 0 ? meta::LossKind::ce : meta::LossKind::corn;
  const auto m = default_model(loss);
  const auto fn = meta::make_loss_fn(m.config, random_data(static_cast<std::size_t>(state.range(1)), 256, 5, 1), loss);
  for (auto _ : state) benchmark::DoNotOptimize(ad::value_and_grad(fn, m.params));
}
BENCHMARK(BM_ValueAndGrad)->Args({0, 20})->Args({1, 20})->Args({1, 180});

void BM_Hvp(benchmark::State& state) {
  const auto m = default_model(meta::LossKind::corn);
  const auto fn = meta::make_loss_fn(m.config, random_data(10, 256, 5, 2), meta::LossKind::corn);
  const auto v = m.params.flatten();
  for (auto _ : state) benchmark::DoNotOptimize(ad::hvp_finite_diff(fn, m.params, v));
}
BENCHMARK(BM_Hvp);

void BM_MetaStep(benchmark::State& state) {
  const auto loss = meta::LossKind::corn;
  const auto m = default_model(loss);
  std::vector<meta::TaskObjective> tasks;
  for (std::uint64_t t = 0; t < 5; ++t)
    tasks.push_back({meta::make_loss_fn(m.config, random_data(10, 256, 5, 10 + t), loss),
                     meta::make_loss_fn(m.config, random_data(10, 256, 5, 20 + t), loss)});
  meta::MetaConfig cfg;
  cfg.grad_mode = state.range(0) == 0 ? meta::GradMode::first_order : meta::GradMode::hvp_second_order;
  for (auto _ : state) benchmark::DoNotOptimize(meta::meta_step(m.params, tasks, cfg));
}
BENCHMARK(BM_MetaStep)->Arg(0)->Arg(1);

void BM_GenerateFamily(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(maoml::tasks::generate_family({}));
}
BENCHMARK(BM_GenerateFamily);

}  // namespace

BENCHMARK_MAIN();
