#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "maoml/autodiff/ops.hpp"
#include "maoml/autodiff/param_set.hpp"
#include "maoml/ordinal/corn.hpp"

namespace maoml::model {

enum class HeadKind {
  categorical,  ///< K logits, softmax cross-entropy
  ordinal,      ///< K-1 logits, CORN
};

std::string to_string(HeadKind head);
HeadKind head_from_string(const std::string& s);

struct ModelConfig {
  std::size_t input_dim = 256;
  std::vector<std::size_t> hidden_dims = {64, 32};
  HeadKind head = HeadKind::ordinal;
  std::size_t num_classes = 5;
  std::uint64_t init_seed = 0;

  /// K for categorical heads, K-1 for ordinal heads.
  std::size_t output_dim() const;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// ReLU MLP. Parameters are named W0, b0, W1, b1, ... with W_l of shape
/// [fan_in, fan_out] and b_l of shape [fan_out].
struct Model {
  ModelConfig config;
  ad::ParamSet params;
};

/// Glorot-uniform weights, zero biases; deterministic given config.init_seed.
Model init_model(const ModelConfig& config);

/// Raw logits [N, output_dim] for a batch [N, input_dim].
ad::Var forward(const ModelConfig& config, const ad::ParamVars& params, const ad::Var& batch);

/// Forward pass without gradient bookkeeping.
ad::Tensor predict_logits(const Model& model, const ad::Tensor& batch);
ad::Tensor predict_logits(const ModelConfig& config, const ad::ParamSet& params, const ad::Tensor& batch);

/// Argmax for categorical heads, CORN chain-rule decoding for ordinal heads.
std::vector<ordinal::RankLabel> predict_ranks(const ModelConfig& config, const ad::ParamSet& params,
                                              const ad::Tensor& batch);

/// Mean over rows of -log softmax(logits)[label], log-sum-exp stabilised.
ad::Var cross_entropy_loss(const ad::Var& logits, std::span<const ordinal::RankLabel> labels);

/// Writes <stem>.bin (ParamSet format) and <stem>.json (config sidecar).
void save_checkpoint(const Model& model, const std::filesystem::path& stem);
Model load_checkpoint(const std::filesystem::path& stem);

}  // namespace maoml::model
