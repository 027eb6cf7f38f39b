#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maoml/autodiff/ops.hpp"

namespace maoml::ordinal {

/// 0-based position in an ordered label set r_1 < r_2 < ... < r_K.
struct RankLabel {
  std::size_t index = 0;
  auto operator<=>(const RankLabel&) const = default;
};

/// Ordered class names; index 0 is the lowest rank.
class OrdinalScale {
 public:
  explicit OrdinalScale(std::vector<std::string> names);
  /// Unripe < Early ripe < Ripe < Overripe < Bad.
  static OrdinalScale freshness();
  /// The five freshness names when K == 5, otherwise "rank0".."rank{K-1}".
  static OrdinalScale for_classes(std::size_t k);

  std::size_t size() const noexcept { return names_.size(); }
  const std::string& name(RankLabel label) const { return names_.at(label.index); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
};

/// bits[k] == 1 iff label index > k. Always y ones followed by K-1-y zeros.
using ExtendedLabel = std::vector<std::uint8_t>;

/// Conditional training subsets of the K-1 binary tasks. Task k (0-based)
/// estimates P(y > r_{k+1} | y > r_k) and trains on the samples with index >= k,
/// so subsets[0] is the whole batch and subsets are nested.
struct ConditionalSubsets {
  std::vector<std::vector<std::size_t>> subsets;

  std::size_t task_count() const noexcept { return subsets.size(); }
  std::vector<std::size_t> sizes() const;
  std::size_t total_size() const;
};

/// Conditional probabilities f_k and their chain-rule products P(y > r_k).
struct RankProbabilities {
  std::vector<double> conditional;
  std::vector<double> unconditional;
};

void validate_labels(std::span<const RankLabel> labels, std::size_t num_classes);

std::vector<ExtendedLabel> extend_labels(std::span<const RankLabel> labels, std::size_t num_classes);
ExtendedLabel extend_label(RankLabel label, std::size_t num_classes);
/// Inverse of extend_label: the number of leading ones.
RankLabel collapse_label(const ExtendedLabel& bits);

ConditionalSubsets build_conditional_subsets(std::span<const RankLabel> labels, std::size_t num_classes);

/// CORN loss over pre-sigmoid logits [N, K-1]. Log-sigmoid terms are taken
/// straight from the logits: log f = -softplus(-z), log(1 - f) = -softplus(z).
/// Empty subsets contribute neither terms nor normaliser mass.
/// Throws DegenerateBatchError if every subset is empty and NumericalError
/// on non-finite logits.
ad::Var corn_loss(const ad::Var& logits, std::span<const RankLabel> labels, const ConditionalSubsets& subsets);

/// Convenience overload that builds the subsets itself.
ad::Var corn_loss(const ad::Var& logits, std::span<const RankLabel> labels);

RankProbabilities chain_probabilities(std::span<const double> conditional);

/// Number of unconditional probabilities strictly above `threshold`.
RankLabel decode_rank(const RankProbabilities& probs, double threshold = 0.5);

/// Decodes every row of a [N, K-1] logit matrix.
std::vector<RankLabel> decode_corn_logits(const ad::Tensor& logits, double threshold = 0.5);

struct RankMetrics {
  double accuracy = 0.0;
  double mean_absolute_error = 0.0;
  /// Accuracy per true label; nullopt when a label has no samples.
  std::vector<std::optional<double>> per_label_accuracy;
  std::vector<std::size_t> per_label_count;
  std::vector<std::size_t> per_label_correct;
  std::size_t count = 0;
};

RankMetrics rank_metrics(std::span<const RankLabel> predictions, std::span<const RankLabel> labels,
                         std::size_t num_classes);

std::vector<RankLabel> to_labels(std::span<const std::size_t> indices);

}  // namespace maoml::ordinal
