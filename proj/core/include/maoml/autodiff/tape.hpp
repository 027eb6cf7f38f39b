#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "maoml/autodiff/param_set.hpp"
#include "maoml/autodiff/tensor.hpp"

namespace maoml::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }
  std::uint64_t tape_id() const noexcept { return tape_id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::uint64_t tape_id, std::size_t id) : tape_(tape), tape_id_(tape_id), id_(id) {}

  Tape* tape_ = nullptr;
  std::uint64_t tape_id_ = 0;
  std::size_t id_ = 0;
};

/// Parameters of a ParamSet registered on a tape, addressable by name or index.
class ParamVars {
 public:
  const Var& operator[](const std::string& name) const;
  const Var& at(std::size_t i) const { return vars_.at(i); }
  std::size_t size() const noexcept { return vars_.size(); }

 private:
  friend class Tape;
  std::vector<std::string> names_;
  std::vector<Var> vars_;
};

/// Gradient buffers handed to backward rules.
class BackwardContext {
 public:
  const Tensor& value(std::size_t id) const;
  /// Zero-initialised on first access.
  Tensor& grad(std::size_t id);
  bool needs_grad(std::size_t id) const;

 private:
  friend class Tape;
  explicit BackwardContext(Tape& tape) : tape_(tape) {}
  Tape& tape_;
};

using BackwardFn = std::function<void(const Tensor& upstream, BackwardContext& ctx)>;

/// Records one forward pass and is consumed by a single backward pass.
///
/// Nodes are appended in evaluation order, so every parent id is smaller
/// than its child id and reverse id order is a reverse topological order.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::uint64_t id() const noexcept { return id_; }
  bool finished() const noexcept { return finished_; }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  Var constant(Tensor value);
  Var parameter(std::string name, Tensor value);
  ParamVars bind(const ParamSet& params);

  /// Appends a derived node. Used by the primitive ops.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor& value(const Var& v) const;
  /// Throws ContractError if v belongs to another tape or this tape is finished.
  void check(const Var& v) const;

  /// d(output)/d(p) for every registered parameter, in registration order.
  /// Parameters without a path to `output` get exact zeros. Finishes the tape.
  ParamSet backward(const Var& output);

 private:
  friend class BackwardContext;

  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool needs_grad = false;
  };

  std::uint64_t id_;
  bool finished_ = false;
  std::deque<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
  std::vector<std::optional<Tensor>> grads_;
};

}  // namespace maoml::ad
