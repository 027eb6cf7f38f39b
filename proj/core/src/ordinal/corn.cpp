#include "maoml/ordinal/corn.hpp"

#include <cmath>
#include <cstdlib>

#include "maoml/error.hpp"

namespace maoml::ordinal {

OrdinalScale::OrdinalScale(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.size() < 2) throw ValidationError("an ordinal scale needs at least two classes");
}

OrdinalScale OrdinalScale::freshness() { return OrdinalScale({"Unripe", "Early ripe", "Ripe", "Overripe", "Bad"}); }

OrdinalScale OrdinalScale::for_classes(std::size_t k) {
  if (k == 5) return freshness();
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back("rank" + std::to_string(i));
  return OrdinalScale(std::move(names));
}

std::vector<std::size_t> ConditionalSubsets::sizes() const {
  std::vector<std::size_t> out;
  out.reserve(subsets.size());
  for (const auto& s : subsets) out.push_back(s.size());
  return out;
}

std::size_t ConditionalSubsets::total_size() const {
  std::size_t n = 0;
  for (const auto& s : subsets) n += s.size();
  return n;
}

void validate_labels(std::span<const RankLabel> labels, std::size_t num_classes) {
  if (num_classes < 2) throw ValidationError("need at least 2 classes, got " + std::to_string(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i].index >= num_classes)
      throw ValidationError("label " + std::to_string(labels[i].index) + " at position " + std::to_string(i) +
                            " outside [0, " + std::to_string(num_classes - 1) + "]");
}

ExtendedLabel extend_label(RankLabel label, std::size_t num_classes) {
  const RankLabel one[] = {label};
  validate_labels(one, num_classes);
  ExtendedLabel bits(num_classes - 1, 0);
  for (std::size_t k = 0; k < label.index; ++k) bits[k] = 1;
  return bits;
}

std::vector<ExtendedLabel> extend_labels(std::span<const RankLabel> labels, std::size_t num_classes) {
  validate_labels(labels, num_classes);
  std::vector<ExtendedLabel> out;
  out.reserve(labels.size());
  for (auto y : labels) out.push_back(extend_label(y, num_classes));
  return out;
}

RankLabel collapse_label(const ExtendedLabel& bits) {
  std::size_t ones = 0;
  while (ones < bits.size() && bits[ones] == 1) ++ones;
  for (std::size_t k = ones; k < bits.size(); ++k)
    if (bits[k] != 0) throw ValidationError("extended label is not monotone non-increasing");
  return {ones};
}

ConditionalSubsets build_conditional_subsets(std::span<const RankLabel> labels, std::size_t num_classes) {
  if (labels.empty()) throw ValidationError("conditional subsets of an empty label list");
  validate_labels(labels, num_classes);
  ConditionalSubsets out;
  out.subsets.resize(num_classes - 1);
  for (std::size_t k = 0; k + 1 < num_classes; ++k)
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i].index >= k) out.subsets[k].push_back(i);
  return out;
}

ad::Var corn_loss(const ad::Var& logits, std::span<const RankLabel> labels, const ConditionalSubsets& subsets) {
  const ad::Tensor& z = logits.value();
  const std::size_t tasks = subsets.task_count();
  if (z.rank() != 2 || z.dim(0) != labels.size() || z.dim(1) != tasks)
    throw ShapeError("corn_loss: logits " + ad::shape_str(z.shape()) + " for " + std::to_string(labels.size()) +
                     " labels and " + std::to_string(tasks) + " binary tasks");
  validate_labels(labels, tasks + 1);
  if (!z.all_finite()) throw NumericalError("corn_loss: non-finite logits");
  const std::size_t total = subsets.total_size();
  if (total == 0) throw DegenerateBatchError("corn_loss: every conditional subset is empty");

  const std::size_t n = labels.size();
  ad::Tensor positive({n, tasks});
  ad::Tensor negative({n, tasks});
  for (std::size_t k = 0; k < tasks; ++k)
    for (auto i : subsets.subsets[k]) {
      if (i >= n) throw ValidationError("corn_loss: subset index out of range");
      if (labels[i].index > k)
        positive.at(i, k) = 1.0;
      else
        negative.at(i, k) = 1.0;
    }

  ad::Tape& tape = logits.tape();
  const ad::Var pos = tape.constant(std::move(positive));
  const ad::Var negm = tape.constant(std::move(negative));
  // -log f = softplus(-z); -log(1 - f) = softplus(z)
  const ad::Var nll = ad::sum(ad::softplus(ad::neg(logits)) * pos) + ad::sum(ad::softplus(logits) * negm);
  return ad::scale(nll, 1.0 / static_cast<double>(total));
}

ad::Var corn_loss(const ad::Var& logits, std::span<const RankLabel> labels) {
  const auto& shape = logits.value().shape();
  if (shape.size() != 2) throw ShapeError("corn_loss: logits must be rank 2, got " + ad::shape_str(shape));
  return corn_loss(logits, labels, build_conditional_subsets(labels, shape[1] + 1));
}

RankProbabilities chain_probabilities(std::span<const double> conditional) {
  RankProbabilities out;
  out.conditional.assign(conditional.begin(), conditional.end());
  out.unconditional.reserve(conditional.size());
  double running = 1.0;
  for (std::size_t k = 0; k < conditional.size(); ++k) {
    const double f = conditional[k];
    if (!(f >= 0.0 && f <= 1.0))
      throw ValidationError("chain_probabilities: f[" + std::to_string(k) + "] = " + std::to_string(f) +
                            " outside [0, 1]");
    running *= f;
    out.unconditional.push_back(running);
  }
  return out;
}

RankLabel decode_rank(const RankProbabilities& probs, double threshold) {
  std::size_t index = 0;
  for (double p : probs.unconditional)
    if (p > threshold) ++index;
  return {index};
}

std::vector<RankLabel> decode_corn_logits(const ad::Tensor& logits, double threshold) {
  if (logits.rank() != 2) throw ShapeError("decode_corn_logits: expected rank 2, got " + ad::shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), tasks = logits.dim(1);
  std::vector<RankLabel> out;
  out.reserve(n);
  std::vector<double> f(tasks);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < tasks; ++k) {
      const double z = logits.at(i, k);
      f[k] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    out.push_back(decode_rank(chain_probabilities(f), threshold));
  }
  return out;
}

RankMetrics rank_metrics(std::span<const RankLabel> predictions, std::span<const RankLabel> labels,
                         std::size_t num_classes) {
  if (predictions.empty()) throw ValidationError("rank_metrics: empty input");
  if (predictions.size() != labels.size())
    throw ValidationError("rank_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  validate_labels(labels, num_classes);
  validate_labels(predictions, num_classes);

  RankMetrics m;
  m.count = labels.size();
  m.per_label_count.assign(num_classes, 0);
  m.per_label_correct.assign(num_classes, 0);
  std::size_t correct = 0;
  double abs_err = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = labels[i].index;
    const auto p = predictions[i].index;
    ++m.per_label_count[y];
    if (p == y) {
      ++correct;
      ++m.per_label_correct[y];
    }
    abs_err += static_cast<double>(p > y ? p - y : y - p);
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);
  m.mean_absolute_error = abs_err / static_cast<double>(m.count);
  m.per_label_accuracy.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c)
    if (m.per_label_count[c] > 0)
      m.per_label_accuracy[c] =
          static_cast<double>(m.per_label_correct[c]) / static_cast<double>(m.per_label_count[c]);
  return m;
}

std::vector<RankLabel> to_labels(std::span<const std::size_t> indices) {
  std::vector<RankLabel> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back({i});
  return out;
}

}  // namespace maoml::ordinal
