#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <random>

#include "maoml/error.hpp"
#include "maoml/meta/training.hpp"
#include "quadratic_fixture.hpp"
#include "test_util.hpp"

namespace ad = maoml::ad;
namespace meta = maoml::meta;
namespace model = maoml::model;
using maoml::testing::Quadratic;

namespace {

/// Labelled rows whose class is the bucket of the first coordinate.
meta::LabeledData toy_data(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k, const std::string& tag) {
  std::mt19937_64 rng(seed);
  meta::LabeledData out;
  out.x = maoml::testing::random_tensor(rng, {n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (out.x.at(i, 0) + 1.0) / 2.0;
    out.y.push_back({std::min(k - 1, static_cast<std::size_t>(t * static_cast<double>(k)))});
    out.ids.push_back(tag + "/" + std::to_string(i));
  }
  return out;
}

model::Model toy_model(model::HeadKind head, std::uint64_t seed = 3) {
  model::ModelConfig c;
  c.input_dim = 4;
  c.hidden_dims = {8};
  c.head = head;
  c.num_classes = 4;
  c.init_seed = seed;
  return model::init_model(c);
}

std::vector<double> flat(const ad::ParamSet& p) { return p.flatten().values(); }

}  // namespace

TEST(MinibatchDescent, MatchesClosedFormGradientDescent) {
  // L = 1/2 a (theta - c)^2 per step, full batch: theta_t = c + (1 - lr a)^t (theta_0 - c)
  const double a = 1.7, c = -0.4, lr = 0.3, theta0 = 2.0;
  ad::ParamSet p;
  p.add("theta", ad::Tensor::vector({theta0}));
  meta::BatchLossFn loss = [&](ad::Tape& tape, const ad::ParamVars& v, std::span<const std::size_t>) {
    auto d = v["theta"] - tape.constant(ad::Tensor::vector({c}));
    return (0.5 * a) * ad::sum(d * d);
  };
  const std::size_t epochs = 12;
  const auto r = meta::minibatch_descent(p, 5, loss, lr, epochs, 5, 0);
  EXPECT_EQ(r.steps, epochs);
  const double expected = c + std::pow(1.0 - lr * a, static_cast<double>(epochs)) * (theta0 - c);
  EXPECT_NEAR(r.params.at("theta")[0], expected, 1e-12);
}

TEST(MinibatchDescent, ZeroLearningRateLeavesParamsUntouched) {
  ad::ParamSet p;
  p.add("theta", ad::Tensor::vector({1.0, -2.0}));
  meta::BatchLossFn loss = [](ad::Tape&, const ad::ParamVars& v, std::span<const std::size_t>) {
    return ad::sum(v["theta"] * v["theta"]);
  };
  const auto r = meta::minibatch_descent(p, 10, loss, 0.0, 3, 4, 1);
  EXPECT_EQ(r.params, p);
  EXPECT_EQ(r.epoch_loss.size(), 3u);
}

TEST(MinibatchDescent, DegenerateBatchesAreSkipped) {
  ad::ParamSet p;
  p.add("theta", ad::Tensor::vector({1.0}));
  meta::BatchLossFn loss = [](ad::Tape&, const ad::ParamVars& v, std::span<const std::size_t> rows) -> ad::Var {
    if (rows.size() < 4) throw maoml::DegenerateBatchError("short batch");
    return ad::sum(v["theta"] * v["theta"]);
  };
  const auto r = meta::minibatch_descent(p, 10, loss, 0.1, 2, 4, 0);
  EXPECT_EQ(r.skipped_batches, 2u);  // the 2-row tail batch of each epoch
  EXPECT_EQ(r.steps, 4u);
}

TEST(Finetune, ReducesLossAndAudits) {
  const auto data = toy_data(1, 40, 4, 4, "task");
  meta::AuditLog audit;
  meta::FinetuneOptions opts;
  opts.loss = meta::LossKind::corn;
  opts.lr = 0.2;
  opts.epochs = 40;
  opts.batch_size = 10;
  const auto r = meta::finetune(toy_model(model::HeadKind::ordinal), data, opts, &audit);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  EXPECT_EQ(audit.size(), 40u);
  EXPECT_TRUE(audit.contains_prefix("task/"));
  opts.loss = meta::LossKind::ce;
  EXPECT_THROW(meta::finetune(toy_model(model::HeadKind::ordinal), data, opts), maoml::ConfigError);
}

TEST(MetaConfig, Validation) {
  meta::MetaConfig c;
  EXPECT_NO_THROW(c.validate());
  c.grad_mode = meta::GradMode::hvp_second_order;
  c.inner_steps = 2;
  EXPECT_THROW(c.validate(), maoml::ConfigError);
  c = {};
  c.support_size = 0;
  EXPECT_THROW(c.validate(), maoml::ConfigError);
  c.inner_steps = 0;
  EXPECT_NO_THROW(c.validate());
  c = {};
  c.alpha = -1.0;
  EXPECT_THROW(c.validate(), maoml::ConfigError);
}

TEST(MetaConfig, JsonIsPartialUpdate) {
  meta::MetaConfig c;
  c.beta = 0.5;
  meta::from_json(nlohmann::json{{"alpha", 0.25}, {"grad_mode", "hvp-second-order"}}, c);
  EXPECT_EQ(c.alpha, 0.25);
  EXPECT_EQ(c.beta, 0.5);
  EXPECT_EQ(c.grad_mode, meta::GradMode::hvp_second_order);
  meta::MetaConfig back;
  meta::from_json(nlohmann::json(c), back);
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
}

TEST(InnerAdapt, OneStepIsGradientStep) {
  std::mt19937_64 rng(5);
  const auto q = Quadratic::random(rng, 4);
  const std::vector<double> theta = {0.1, -0.2, 0.3, 0.4};
  const auto adapted = meta::inner_adapt(maoml::testing::theta_params(theta), q.loss(), 0.1, 1);
  const auto g = q.grad(theta);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(adapted.at("theta")[i], theta[i] - 0.1 * g[i], 1e-14);
  EXPECT_EQ(meta::inner_adapt(maoml::testing::theta_params(theta), q.loss(), 0.0, 3),
            maoml::testing::theta_params(theta));
}

TEST(MetaGradient, QuadraticBilevelOracle) {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t d = 5;
    const auto s = Quadratic::random(rng, d), q = Quadratic::random(rng, d);
    std::vector<double> theta(d);
    for (auto& x : theta) x = std::uniform_real_distribution<double>(-1, 1)(rng);
    const double alpha = 0.05 + 0.1 * rep / 10.0;
    const auto oracle = maoml::testing::bilevel_oracle(s, q, theta, alpha);
    std::vector<meta::TaskObjective> tasks = {{s.loss(), q.loss()}};

    meta::MetaConfig cfg;
    cfg.alpha = alpha;
    cfg.grad_mode = meta::GradMode::first_order;
    const auto fo = flat(meta::meta_gradient(maoml::testing::theta_params(theta), tasks, cfg).gradient);
    cfg.grad_mode = meta::GradMode::hvp_second_order;
    const auto so = flat(meta::meta_gradient(maoml::testing::theta_params(theta), tasks, cfg).gradient);
    for (std::size_t i = 0; i < d; ++i) {
      EXPECT_NEAR(fo[i], oracle.first_order[i], 1e-10);
      EXPECT_NEAR(so[i], oracle.second_order[i], 1e-6);
    }
  }
}

TEST(MetaGradient, SecondOrderCorrectionIsLinearInAlpha) {
  // ||g_so - g_fo|| = alpha ||A_s g_q(theta')||, which is O(alpha) as alpha -> 0
  std::mt19937_64 rng(7);
  const auto s = Quadratic::random(rng, 6), q = Quadratic::random(rng, 6);
  const std::vector<double> theta = {0.3, -0.1, 0.2, 0.5, -0.4, 0.1};
  std::vector<meta::TaskObjective> tasks = {{s.loss(), q.loss()}};
  std::vector<double> xs, ys;
  for (double alpha : {0.002, 0.004, 0.006, 0.008, 0.01, 0.012}) {
    meta::MetaConfig cfg;
    cfg.alpha = alpha;
    const auto fo = meta::meta_gradient(maoml::testing::theta_params(theta), tasks, cfg).gradient;
    cfg.grad_mode = meta::GradMode::hvp_second_order;
    auto diff = meta::meta_gradient(maoml::testing::theta_params(theta), tasks, cfg).gradient;
    diff.axpy(-1.0, fo);
    xs.push_back(alpha);
    ys.push_back(diff.norm());
  }
  const double mx = maoml::testing::mean_of(xs), my = maoml::testing::mean_of(ys);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  const double r2 = sxy * sxy / (sxx * syy);
  EXPECT_GT(r2, 0.99);
  EXPECT_GT(sxy / sxx, 0.0);
}

TEST(MetaGradient, SumsTasksInOrderIndependentOfThreads) {
  const auto m = toy_model(model::HeadKind::ordinal);
  std::vector<meta::TaskObjective> tasks;
  for (std::uint64_t t = 0; t < 6; ++t) {
    auto s = std::make_shared<meta::LabeledData>(toy_data(10 + t, 8, 4, 4, "s"));
    auto q = std::make_shared<meta::LabeledData>(toy_data(20 + t, 8, 4, 4, "q"));
    tasks.push_back({meta::make_loss_fn(m.config, s, meta::LossKind::corn),
                     meta::make_loss_fn(m.config, q, meta::LossKind::corn)});
  }
  meta::MetaConfig cfg;
  cfg.grad_mode = meta::GradMode::hvp_second_order;
  cfg.threads = 1;
  const auto one = meta::meta_gradient(m.params, tasks, cfg);
  cfg.threads = 3;
  const auto many = meta::meta_gradient(m.params, tasks, cfg);
  EXPECT_EQ(one.gradient, many.gradient);
  EXPECT_EQ(one.stats.query_loss, many.stats.query_loss);
}

TEST(MetaStep, ZeroInnerStepsIsMultiTaskGradientDescent) {
  for (auto loss : {meta::LossKind::ce, meta::LossKind::corn}) {
    auto m = toy_model(meta::head_for(loss), 9);
    std::vector<meta::TaskObjective> tasks;
    std::vector<ad::LossFn> queries;
    for (std::uint64_t t = 0; t < 4; ++t) {
      auto q = std::make_shared<meta::LabeledData>(toy_data(30 + t, 10, 4, 4, "q"));
      queries.push_back(meta::make_loss_fn(m.config, q, loss));
      tasks.push_back({[](ad::Tape&, const ad::ParamVars&) -> ad::Var { throw std::logic_error("unused"); },
                       queries.back()});
    }
    meta::MetaConfig cfg;
    cfg.inner_steps = 0;
    cfg.alpha = 0.3;
    cfg.beta = 0.05;
    ad::ParamSet theta = m.params, reference = m.params;
    for (int step = 0; step < 5; ++step) {
      theta = meta::meta_step(theta, tasks, cfg).params;
      ad::ParamSet g = ad::value_and_grad(queries[0], reference).grad;
      for (std::size_t t = 1; t < queries.size(); ++t) g.axpy(1.0, ad::value_and_grad(queries[t], reference).grad);
      reference.axpy(-cfg.beta, g);
      ASSERT_EQ(theta, reference) << "step " << step;
    }
  }
}

TEST(TrainMeta, DeterministicAndAudited) {
  std::vector<meta::MetaTask> tasks;
  for (std::uint64_t t = 0; t < 4; ++t)
    tasks.push_back({"task" + std::to_string(t), toy_data(40 + t, 12, 4, 4, "task" + std::to_string(t))});
  meta::MetaConfig cfg;
  cfg.epochs = 3;
  cfg.meta_batch_size = 2;
  cfg.support_size = 4;
  cfg.query_size = 4;
  cfg.seed = 17;
  meta::AuditLog audit;
  const auto init = toy_model(model::HeadKind::ordinal);
  const auto a = meta::train_maoml(tasks, init, cfg, &audit);
  const auto b = meta::train_maoml(tasks, init, cfg);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.trace.size(), 6u);
  EXPECT_EQ(a.trace[0].task_ids.size(), 2u);
  EXPECT_FALSE(a.model.params == init.params);
  EXPECT_GT(audit.size(), 0u);
  for (const auto& id : audit.ids()) EXPECT_EQ(id.rfind("task", 0), 0u);

  EXPECT_THROW(meta::train_maml(tasks, init, cfg), maoml::ConfigError);  // head mismatch
  cfg.support_size = 12;
  EXPECT_THROW(meta::train_maoml(tasks, init, cfg), maoml::ConfigError);  // no room for a query set
}

TEST(TrainMeta, EveryEpochVisitsEveryTaskOnce) {
  std::vector<meta::MetaTask> tasks;
  for (std::uint64_t t = 0; t < 5; ++t)
    tasks.push_back({"t" + std::to_string(t), toy_data(50 + t, 6, 4, 4, "t" + std::to_string(t))});
  meta::MetaConfig cfg;
  cfg.epochs = 4;
  cfg.meta_batch_size = 2;
  cfg.support_size = 3;
  const auto r = meta::train_maml(tasks, toy_model(model::HeadKind::categorical), cfg);
  std::map<std::size_t, std::multiset<std::string>> seen;
  for (const auto& rec : r.trace)
    for (const auto& id : rec.task_ids) seen[rec.epoch].insert(id);
  ASSERT_EQ(seen.size(), 4u);
  for (const auto& [epoch, ids] : seen) {
    EXPECT_EQ(ids.size(), 5u);
    EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 5u);
  }
}

TEST(AdaptModel, UsesAlphaAndEvalSteps) {
  const auto m = toy_model(model::HeadKind::ordinal);
  const auto data = toy_data(60, 10, 4, 4, "x");
  meta::MetaConfig cfg;
  cfg.eval_inner_steps = 0;
  EXPECT_EQ(meta::adapt_model(m, data, meta::LossKind::corn, cfg).params, m.params);
  cfg.eval_inner_steps = 2;
  auto fn = meta::make_loss_fn(m.config, std::make_shared<meta::LabeledData>(data), meta::LossKind::corn);
  EXPECT_EQ(meta::adapt_model(m, data, meta::LossKind::corn, cfg).params, meta::inner_adapt(m.params, fn, cfg.alpha, 2));
}

TEST(Trace, JsonLines) {
  std::vector<meta::TraceRecord> trace = {{0, 0, {"a", "b"}, {1.5, 2.5}, 0.25}, {1, 0, {"c"}, {0.5}, 0.125}};
  std::ostringstream os;
  meta::write_trace_jsonl(os, trace, {{"cell", "x"}});
  std::istringstream is(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("cell"), "x");
    EXPECT_EQ(j.at("step").get<std::size_t>(), n);
    ++n;
  }
  EXPECT_EQ(n, 2u);
}
