#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "maoml/autodiff/hvp.hpp"
#include "maoml/autodiff/ops.hpp"
#include "maoml/error.hpp"
#include "test_util.hpp"

namespace ad = maoml::ad;
using maoml::testing::fd_gradient;
using maoml::testing::max_rel_error;
using maoml::testing::random_tensor;

namespace {

// gradient of `loss` by the tape vs central differences
double grad_error(const ad::LossFn& loss, const ad::ParamSet& params) {
  const auto vg = ad::value_and_grad(loss, params);
  return max_rel_error(vg.grad, fd_gradient(loss, params));
}

ad::ParamSet two(std::mt19937_64& rng, ad::Shape a, ad::Shape b, double lo = -1.0, double hi = 1.0) {
  ad::ParamSet p;
  p.add("a", random_tensor(rng, std::move(a), lo, hi));
  p.add("b", random_tensor(rng, std::move(b), lo, hi));
  return p;
}

}  // namespace

TEST(Ops, MatmulAddMulGradients) {
  std::mt19937_64 rng(1);
  auto p = two(rng, {3, 4}, {4, 2});
  EXPECT_LT(grad_error([](ad::Tape&, const ad::ParamVars& v) { return ad::sum(ad::matmul(v["a"], v["b"])); }, p), 1e-8);
  auto q = two(rng, {3, 4}, {3, 4});
  EXPECT_LT(grad_error([](ad::Tape&, const ad::ParamVars& v) { return ad::sum(v["a"] * v["b"] + v["a"]); }, q), 1e-8);
  EXPECT_LT(grad_error([](ad::Tape&, const ad::ParamVars& v) { return ad::sum(v["a"] - 3.0 * v["b"]); }, q), 1e-8);
}

TEST(Ops, BiasBroadcastGradient) {
  std::mt19937_64 rng(2);
  auto p = two(rng, {5, 3}, {3});
  auto loss = [](ad::Tape&, const ad::ParamVars& v) {
    auto y = v["a"] + v["b"];
    return ad::sum(y * y) + ad::sum(v["a"] * v["b"]);
  };
  EXPECT_LT(grad_error(loss, p), 1e-8);
}

TEST(Ops, UnaryGradients) {
  std::mt19937_64 rng(3);
  ad::ParamSet p;
  p.add("x", random_tensor(rng, {4, 3}, -2.0, 2.0));
  const std::vector<std::function<ad::Var(const ad::Var&)>> fns = {
      [](const ad::Var& x) { return ad::relu(x); },     [](const ad::Var& x) { return ad::sigmoid(x); },
      [](const ad::Var& x) { return ad::exp(x); },      [](const ad::Var& x) { return ad::softplus(x); },
      [](const ad::Var& x) { return ad::neg(x); },      [](const ad::Var& x) { return ad::scale(x, 0.7); },
      [](const ad::Var& x) { return ad::log_sum_exp_rows(x); },
  };
  for (std::size_t i = 0; i < fns.size(); ++i) {
    auto loss = [&](ad::Tape&, const ad::ParamVars& v) {
      auto y = fns[i](v["x"]);
      return ad::sum(y * y);
    };
    EXPECT_LT(grad_error(loss, p), 1e-7) << "op " << i;
  }
}

TEST(Ops, LogGradientAndDomain) {
  std::mt19937_64 rng(4);
  ad::ParamSet p;
  p.add("x", random_tensor(rng, {6}, 0.5, 3.0));
  EXPECT_LT(grad_error([](ad::Tape&, const ad::ParamVars& v) { return ad::mean(ad::log(v["x"])); }, p), 1e-8);

  ad::Tape tape;
  auto x = tape.constant(ad::Tensor::vector({1.0, 0.0}));
  EXPECT_THROW(ad::log(x), maoml::DomainError);
}

TEST(Ops, PickConcatReshapeGradients) {
  std::mt19937_64 rng(5);
  auto p = two(rng, {3, 4}, {2, 4});
  const std::vector<std::size_t> idx = {3, 0, 2, 1, 1};
  auto loss = [&](ad::Tape&, const ad::ParamVars& v) {
    std::vector<ad::Var> parts = {v["a"], v["b"]};
    auto all = ad::concat_rows(parts);
    auto picked = ad::pick_rows(all, idx);
    auto flat = ad::reshape(all, {20});
    return ad::sum(picked * picked) + ad::mean(flat);
  };
  EXPECT_LT(grad_error(loss, p), 1e-8);
}

TEST(Ops, StableAtExtremeLogits) {
  ad::Tape tape;
  auto x = tape.constant(ad::Tensor::vector({-800.0, 800.0}));
  const auto s = ad::sigmoid(x).value();
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[1], 1.0);
  const auto sp = ad::softplus(x).value();
  EXPECT_EQ(sp[0], 0.0);
  EXPECT_EQ(sp[1], 800.0);
  auto m = tape.constant(ad::Tensor::matrix({{1000.0, 1000.0}}));
  EXPECT_NEAR(ad::log_sum_exp_rows(m).value()[0], 1000.0 + std::log(2.0), 1e-12);
}

TEST(Ops, ShapeMismatchThrows) {
  ad::Tape tape;
  auto a = tape.constant(ad::Tensor::zeros({2, 3}));
  auto b = tape.constant(ad::Tensor::zeros({2, 3}));
  EXPECT_THROW(ad::matmul(a, b), maoml::ShapeError);
  auto c = tape.constant(ad::Tensor::zeros({4}));
  EXPECT_THROW(ad::add(a, c), maoml::ShapeError);
}

TEST(Tape, UseAfterFinishIsContractViolation) {
  ad::ParamSet p;
  p.add("w", ad::Tensor::vector({1.0, 2.0}));
  ad::Tape tape;
  auto vars = tape.bind(p);
  auto out = ad::sum(vars["w"] * vars["w"]);
  tape.backward(out);
  EXPECT_TRUE(tape.finished());
  EXPECT_THROW(ad::sum(vars["w"]), maoml::ContractError);
  EXPECT_THROW(tape.backward(out), maoml::ContractError);
  EXPECT_THROW(tape.constant(ad::Tensor()), maoml::ContractError);
}

TEST(Tape, ForeignVarIsRejected) {
  ad::Tape t1, t2;
  auto a = t1.constant(ad::Tensor::vector({1.0}));
  auto b = t2.constant(ad::Tensor::vector({1.0}));
  EXPECT_THROW(ad::add(a, b), maoml::ContractError);
}

TEST(Tape, BackwardNeedsScalar) {
  ad::Tape tape;
  auto a = tape.parameter("a", ad::Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(tape.backward(a), maoml::ContractError);
}

TEST(Tape, UnusedParameterGetsZeroGradient) {
  ad::ParamSet p;
  p.add("used", ad::Tensor::vector({3.0}));
  p.add("unused", ad::Tensor::vector({5.0, 6.0}));
  auto vg = ad::value_and_grad([](ad::Tape&, const ad::ParamVars& v) { return ad::sum(v["used"] * v["used"]); }, p);
  EXPECT_EQ(vg.value, 9.0);
  EXPECT_EQ(vg.grad.at("used")[0], 6.0);
  EXPECT_EQ(vg.grad.at("unused"), ad::Tensor::zeros({2}));
}

TEST(Tape, SharedSubexpressionAccumulates) {
  ad::ParamSet p;
  p.add("x", ad::Tensor::vector({2.0}));
  // y = x * x + x  -> dy/dx = 2x + 1
  auto vg = ad::value_and_grad(
      [](ad::Tape&, const ad::ParamVars& v) {
        auto x = v["x"];
        return ad::sum(x * x + x);
      },
      p);
  EXPECT_EQ(vg.grad.at("x")[0], 5.0);
}

TEST(Tape, NodesAreTopologicallyOrdered) {
  ad::Tape tape;
  auto a = tape.constant(ad::Tensor::vector({1.0}));
  auto b = ad::exp(a);
  auto c = ad::add(a, b);
  EXPECT_LT(a.id(), b.id());
  EXPECT_LT(b.id(), c.id());
  EXPECT_EQ(tape.node_count(), 3u);
}
