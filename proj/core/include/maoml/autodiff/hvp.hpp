#pragma once

#include <functional>

#include "maoml/autodiff/param_set.hpp"
#include "maoml/autodiff/tape.hpp"

namespace maoml::ad {

/// A scalar objective of a ParamSet: records its forward pass on the given
/// tape using the bound parameter vars and returns the scalar output node.
using LossFn = std::function<Var(Tape&, const ParamVars&)>;

struct ValueAndGrad {
  double value = 0.0;
  ParamSet grad;
};

/// Evaluates loss(params) and its gradient on a fresh tape.
ValueAndGrad value_and_grad(const LossFn& loss, const ParamSet& params);

/// Central-difference Hessian-vector product:
///   (grad L(theta + h v) - grad L(theta - h v)) / (2h)
/// `vector` is flat, in ParamSet::flatten() order; the result is flat too.
/// Throws NumericalError (naming the parameter) on any non-finite gradient.
Tensor hvp_finite_diff(const LossFn& loss, const ParamSet& params, const Tensor& vector, double h = 1e-5);

}  // namespace maoml::ad
