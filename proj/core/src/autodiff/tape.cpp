#include "maoml/autodiff/tape.hpp"

#include <atomic>

#include "maoml/error.hpp"

namespace maoml::ad {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

const Tensor& Var::value() const { return tape().value(*this); }

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

const Var& ParamVars::operator[](const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return vars_[i];
  throw ValidationError("no bound parameter named '" + name + "'");
}

const Tensor& BackwardContext::value(std::size_t id) const { return tape_.nodes_[id].value; }

Tensor& BackwardContext::grad(std::size_t id) {
  auto& slot = tape_.grads_[id];
  if (!slot) slot.emplace(tape_.nodes_[id].value.shape());
  return *slot;
}

bool BackwardContext::needs_grad(std::size_t id) const { return tape_.nodes_[id].needs_grad; }

Tape::Tape() : id_(next_tape_id++) {}

Var Tape::constant(Tensor value) {
  if (finished_) throw ContractError("use after finish: tape already consumed by backward()");
  nodes_.push_back({std::move(value), {}, {}, false});
  return Var(this, id_, nodes_.size() - 1);
}

Var Tape::parameter(std::string name, Tensor value) {
  if (finished_) throw ContractError("use after finish: tape already consumed by backward()");
  for (const auto& p : params_)
    if (p.first == name) throw ValidationError("parameter '" + name + "' registered twice on one tape");
  nodes_.push_back({std::move(value), {}, {}, true});
  params_.emplace_back(std::move(name), nodes_.size() - 1);
  return Var(this, id_, nodes_.size() - 1);
}

ParamVars Tape::bind(const ParamSet& params) {
  ParamVars out;
  for (const auto& e : params) {
    out.names_.push_back(e.name);
    out.vars_.push_back(parameter(e.name, e.value));
  }
  return out;
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  if (finished_) throw ContractError("use after finish: tape already consumed by backward()");
  bool needs = false;
  for (auto p : parents) needs = needs || nodes_[p].needs_grad;
  nodes_.push_back({std::move(value), std::move(parents), needs ? std::move(backward) : BackwardFn{}, needs});
  return Var(this, id_, nodes_.size() - 1);
}

void Tape::check(const Var& v) const {
  if (!v.valid() || v.tape_ != this || v.tape_id() != id_)
    throw ContractError("Var belongs to a different tape (tape " + std::to_string(v.tape_id()) + ", expected " +
                        std::to_string(id_) + ")");
  if (finished_) throw ContractError("use after finish: tape already consumed by backward()");
}

const Tensor& Tape::value(const Var& v) const {
  if (v.tape_ != this || v.tape_id() != id_) throw ContractError("Var belongs to a different tape");
  return nodes_[v.id()].value;
}

ParamSet Tape::backward(const Var& output) {
  check(output);
  const auto& out_value = nodes_[output.id()].value;
  if (out_value.size() != 1)
    throw ContractError("backward() needs a scalar output, got shape " + shape_str(out_value.shape()));

  grads_.assign(output.id() + 1, std::nullopt);
  grads_[output.id()] = Tensor::filled(out_value.shape(), 1.0);
  BackwardContext ctx(*this);
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!grads_[i] || !node.backward) continue;
    node.backward(*grads_[i], ctx);
  }

  ParamSet result;
  for (const auto& [name, id] : params_) {
    if (id < grads_.size() && grads_[id])
      result.add(name, std::move(*grads_[id]));
    else
      result.add(name, Tensor::zeros(nodes_[id].value.shape()));
  }
  finished_ = true;
  grads_.clear();
  return result;
}

}  // namespace maoml::ad
