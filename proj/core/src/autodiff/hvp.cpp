#include "maoml/autodiff/hvp.hpp"

#include <string>

#include "maoml/error.hpp"

namespace maoml::ad {

ValueAndGrad value_and_grad(const LossFn& loss, const ParamSet& params) {
  Tape tape;
  const ParamVars vars = tape.bind(params);
  const Var out = loss(tape, vars);
  const double value = out.value().item();
  return {value, tape.backward(out)};
}

namespace {

ParamSet gradient_at(const LossFn& loss, const ParamSet& params, const char* side) {
  if (auto bad = params.first_non_finite())
    throw NumericalError(std::string("hvp: non-finite perturbed parameter '") + *bad + "' at theta" + side + "hv");
  ParamSet g = value_and_grad(loss, params).grad;
  if (auto bad = g.first_non_finite())
    throw NumericalError(std::string("hvp: non-finite gradient for parameter '") + *bad + "' at theta" + side + "hv");
  return g;
}

}  // namespace

Tensor hvp_finite_diff(const LossFn& loss, const ParamSet& params, const Tensor& vector, double h) {
  if (!(h > 0.0)) throw ValidationError("hvp: step h must be positive");
  if (vector.size() != params.total_count())
    throw ShapeError("hvp: vector has " + std::to_string(vector.size()) + " entries, params have " +
                     std::to_string(params.total_count()));
  const ParamSet direction = params.unflatten(vector);
  if (auto bad = direction.first_non_finite())
    throw NumericalError("hvp: non-finite direction entry for parameter '" + *bad + "'");

  ParamSet plus = params;
  plus.axpy(h, direction);
  ParamSet minus = params;
  minus.axpy(-h, direction);

  ParamSet diff = gradient_at(loss, plus, "+");
  diff.axpy(-1.0, gradient_at(loss, minus, "-"));
  Tensor out = diff.flatten();
  const double inv = 1.0 / (2.0 * h);
  for (double& v : out.data()) v *= inv;
  return out;
}

}  // namespace maoml::ad
