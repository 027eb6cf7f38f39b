#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "maoml/autodiff/hvp.hpp"
#include "maoml/autodiff/ops.hpp"
#include "maoml/error.hpp"
#include "test_util.hpp"

namespace ad = maoml::ad;
using maoml::testing::random_tensor;

namespace {

// L(theta) = sum_n softplus(x_n . theta), Hessian = X^T diag(s(1-s)) X
struct SoftplusFixture {
  ad::Tensor x;
  ad::ParamSet params;

  explicit SoftplusFixture(std::uint64_t seed, std::size_t n = 7, std::size_t d = 5) {
    std::mt19937_64 rng(seed);
    x = random_tensor(rng, {n, d});
    params.add("theta", random_tensor(rng, {d, 1}));
  }

  ad::LossFn loss() const {
    return [this](ad::Tape& tape, const ad::ParamVars& v) {
      return ad::sum(ad::softplus(ad::matmul(tape.constant(x), v["theta"])));
    };
  }

  std::vector<double> dense_hessian() const {
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<double> h(d * d, 0.0);
    const auto& th = params.at("theta");
    for (std::size_t r = 0; r < n; ++r) {
      double z = 0.0;
      for (std::size_t j = 0; j < d; ++j) z += x.at(r, j) * th[j];
      const double s = 1.0 / (1.0 + std::exp(-z));
      const double w = s * (1.0 - s);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) h[i * d + j] += w * x.at(r, i) * x.at(r, j);
    }
    return h;
  }
};

}  // namespace

TEST(Hvp, QuadraticIsExactUpToRounding) {
  std::mt19937_64 rng(11);
  const std::size_t d = 6;
  auto m = random_tensor(rng, {d, d});
  ad::Tensor a({d, d});
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) a.at(i, j) = 0.5 * (m.at(i, j) + m.at(j, i));
  ad::ParamSet p;
  p.add("theta", random_tensor(rng, {d, 1}));
  auto loss = [&](ad::Tape& tape, const ad::ParamVars& v) {
    auto th = v["theta"];
    return 0.5 * ad::sum(th * ad::matmul(tape.constant(a), th));
  };
  const auto v = random_tensor(rng, {d});
  const auto hv = ad::hvp_finite_diff(loss, p, v);
  for (std::size_t i = 0; i < d; ++i) {
    double ref = 0.0;
    for (std::size_t j = 0; j < d; ++j) ref += a.at(i, j) * v[j];
    EXPECT_NEAR(hv[i], ref, 1e-9);
  }
}

TEST(Hvp, MatchesDenseHessianOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SoftplusFixture f(seed);
    const auto h = f.dense_hessian();
    const std::size_t d = f.x.dim(1);
    std::mt19937_64 rng(seed + 100);
    const auto v = random_tensor(rng, {d});
    const auto hv = ad::hvp_finite_diff(f.loss(), f.params, v);
    for (std::size_t i = 0; i < d; ++i) {
      double ref = 0.0;
      for (std::size_t j = 0; j < d; ++j) ref += h[i * d + j] * v[j];
      EXPECT_NEAR(hv[i], ref, 1e-7) << "seed " << seed << " row " << i;
    }
  }
}

TEST(Hvp, SymmetricBilinearForm) {
  SoftplusFixture f(3);
  std::mt19937_64 rng(9);
  const auto u = random_tensor(rng, {5});
  const auto w = random_tensor(rng, {5});
  const auto hu = ad::hvp_finite_diff(f.loss(), f.params, u);
  const auto hw = ad::hvp_finite_diff(f.loss(), f.params, w);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    a += w[i] * hu[i];
    b += u[i] * hw[i];
  }
  EXPECT_NEAR(a, b, 1e-8);
}

TEST(Hvp, RejectsBadStepAndShape) {
  SoftplusFixture f(1);
  EXPECT_THROW(ad::hvp_finite_diff(f.loss(), f.params, ad::Tensor::zeros({5}), 0.0), maoml::ValidationError);
  EXPECT_THROW(ad::hvp_finite_diff(f.loss(), f.params, ad::Tensor::zeros({4})), maoml::ShapeError);
}

TEST(Hvp, NonFiniteGradientNamesParameter) {
  ad::ParamSet p;
  p.add("w", ad::Tensor::vector({1.0}));
  p.add("blowup", ad::Tensor::vector({700.0}));
  auto loss = [](ad::Tape&, const ad::ParamVars& v) {
    return ad::sum(v["w"] * v["w"]) + ad::sum(ad::exp(ad::exp(v["blowup"])));
  };
  try {
    ad::hvp_finite_diff(loss, p, ad::Tensor::vector({1.0, 1.0}));
    FAIL() << "expected NumericalError";
  } catch (const maoml::NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("blowup"), std::string::npos) << e.what();
  }
}
