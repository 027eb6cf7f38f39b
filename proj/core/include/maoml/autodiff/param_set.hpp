#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "maoml/autodiff/tensor.hpp"

namespace maoml::ad {

/// Ordered, named collection of parameter tensors.
///
/// Entry order is the insertion order and is preserved by clone, flatten,
/// save and load. Gradients returned by Tape::backward are ParamSets with the
/// same layout as the bound parameters, so the arithmetic helpers below double
/// as optimizer primitives.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
  };

  ParamSet() = default;

  /// Appends an entry; names must be unique.
  void add(std::string name, Tensor value);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  /// Total number of scalar parameters.
  std::size_t total_count() const noexcept { return total_; }

  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Tensor& value(std::size_t i) { return entries_[i].value; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::optional<std::size_t> index_of(const std::string& name) const;

  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  /// Concatenates every entry into a rank-1 tensor, in entry order.
  Tensor flatten() const;
  /// Inverse of flatten(): a ParamSet with this layout holding `flat`.
  ParamSet unflatten(const Tensor& flat) const;

  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;

  /// this += scale * other
  void axpy(double scale, const ParamSet& other);
  ParamSet scaled(double scale) const;
  double dot(const ParamSet& other) const;
  double norm() const;
  bool all_finite() const noexcept;
  /// Name of the first entry holding a NaN/Inf, if any.
  std::optional<std::string> first_non_finite() const;

  /// Bitwise equality of names, shapes and values.
  friend bool operator==(const ParamSet& a, const ParamSet& b);

  /// Binary "MAOP" little-endian serialization.
  std::vector<std::uint8_t> to_bytes() const;
  static ParamSet from_bytes(const std::vector<std::uint8_t>& bytes);
  void save(const std::filesystem::path& path) const;
  static ParamSet load(const std::filesystem::path& path);

 private:
  std::vector<Entry> entries_;
  std::size_t total_ = 0;
};

}  // namespace maoml::ad
