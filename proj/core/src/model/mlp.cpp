#include "maoml/model/mlp.hpp"

#include <cmath>
#include <fstream>

#include "maoml/error.hpp"
#include "maoml/util/rng.hpp"

namespace maoml::model {

std::string to_string(HeadKind head) { return head == HeadKind::categorical ? "categorical" : "ordinal"; }

HeadKind head_from_string(const std::string& s) {
  if (s == "categorical") return HeadKind::categorical;
  if (s == "ordinal") return HeadKind::ordinal;
  throw ConfigError("unknown head kind '" + s + "'");
}

std::size_t ModelConfig::output_dim() const { return head == HeadKind::categorical ? num_classes : num_classes - 1; }

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
  if (hidden_dims.empty()) throw ConfigError("model: hidden_dims must be non-empty");
  for (auto d : hidden_dims)
    if (d == 0) throw ConfigError("model: hidden dims must be positive");
  if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"input_dim", c.input_dim},
       {"hidden_dims", c.hidden_dims},
       {"head", to_string(c.head)},
       {"num_classes", c.num_classes},
       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.head = head_from_string(j.at("head").get<std::string>());
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.init_seed = j.value("init_seed", std::uint64_t{0});
}

Model init_model(const ModelConfig& config) {
  config.validate();
  Model m{config, {}};
  std::vector<std::size_t> dims = {config.input_dim};
  dims.insert(dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
  dims.push_back(config.output_dim());
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng = make_rng({config.init_seed, 0x6C61796572ULL, l});
    std::uniform_real_distribution<double> dist(-limit, limit);
    ad::Tensor w({fan_in, fan_out});
    for (double& v : w.data()) v = dist(rng);
    m.params.add("W" + std::to_string(l), std::move(w));
    m.params.add("b" + std::to_string(l), ad::Tensor::zeros({fan_out}));
  }
  return m;
}

ad::Var forward(const ModelConfig& config, const ad::ParamVars& params, const ad::Var& batch) {
  const auto& shape = batch.value().shape();
  if (shape.size() != 2 || shape[1] != config.input_dim)
    throw ShapeError("forward: batch " + ad::shape_str(shape) + " for input_dim " + std::to_string(config.input_dim));
  const std::size_t layers = config.hidden_dims.size() + 1;
  if (params.size() != 2 * layers) throw ShapeError("forward: parameter count does not match config");
  ad::Var h = batch;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::matmul(h, params.at(2 * l)) + params.at(2 * l + 1);
    if (l + 1 < layers) h = ad::relu(h);
  }
  return h;
}

ad::Tensor predict_logits(const ModelConfig& config, const ad::ParamSet& params, const ad::Tensor& batch) {
  if (batch.rank() != 2 || batch.dim(1) != config.input_dim)
    throw ShapeError("predict: batch " + ad::shape_str(batch.shape()) + " for input_dim " +
                     std::to_string(config.input_dim));
  const std::size_t layers = config.hidden_dims.size() + 1;
  if (params.size() != 2 * layers) throw ShapeError("predict: parameter count does not match config");
  ad::Tensor h = batch;
  for (std::size_t l = 0; l < layers; ++l) {
    const ad::Tensor& w = params[2 * l].value;
    const ad::Tensor& b = params[2 * l + 1].value;
    const std::size_t n = h.dim(0), k = w.dim(0), m = w.dim(1);
    if (h.dim(1) != k) throw ShapeError("predict: layer " + std::to_string(l) + " width mismatch");
    ad::Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
      double* row = &out.at(i, 0);
      for (std::size_t p = 0; p < k; ++p) {
        const double hv = h.at(i, p);
        if (hv == 0.0) continue;
        const double* wrow = w.data().data() + p * m;
        for (std::size_t j = 0; j < m; ++j) row[j] += hv * wrow[j];
      }
      // same summation order as forward(): matmul, then bias
      for (std::size_t j = 0; j < m; ++j) row[j] += b[j];
      if (l + 1 < layers)
        for (std::size_t j = 0; j < m; ++j) row[j] = row[j] > 0.0 ? row[j] : 0.0;
    }
    h = std::move(out);
  }
  return h;
}

ad::Tensor predict_logits(const Model& model, const ad::Tensor& batch) {
  return predict_logits(model.config, model.params, batch);
}

std::vector<ordinal::RankLabel> predict_ranks(const ModelConfig& config, const ad::ParamSet& params,
                                              const ad::Tensor& batch) {
  const ad::Tensor logits = predict_logits(config, params, batch);
  if (config.head == HeadKind::ordinal) return ordinal::decode_corn_logits(logits);
  std::vector<ordinal::RankLabel> out;
  out.reserve(logits.dim(0));
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.dim(1); ++k)
      if (logits.at(i, k) > logits.at(i, best)) best = k;
    out.push_back({best});
  }
  return out;
}

ad::Var cross_entropy_loss(const ad::Var& logits, std::span<const ordinal::RankLabel> labels) {
  const auto& shape = logits.value().shape();
  if (shape.size() != 2 || shape[0] != labels.size())
    throw ShapeError("cross_entropy_loss: logits " + ad::shape_str(shape) + " for " + std::to_string(labels.size()) +
                     " labels");
  if (shape[1] < 2) throw ValidationError("cross_entropy_loss: need at least 2 classes");
  ordinal::validate_labels(labels, shape[1]);
  std::vector<std::size_t> idx;
  idx.reserve(labels.size());
  for (auto y : labels) idx.push_back(y.index);
  return ad::mean(ad::log_sum_exp_rows(logits) - ad::pick_rows(logits, idx));
}

void save_checkpoint(const Model& model, const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  model.params.save(bin);
  std::ofstream f(side, std::ios::trunc);
  if (!f) throw DataError("cannot write " + side.string());
  f << nlohmann::json(model.config).dump(2) << "\n";
}

Model load_checkpoint(const std::filesystem::path& stem) {
  auto bin = stem;
  bin += ".bin";
  auto side = stem;
  side += ".json";
  std::ifstream f(side);
  if (!f) throw DataError("cannot open " + side.string());
  Model m;
  try {
    m.config = nlohmann::json::parse(f).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint config " + side.string() + ": " + e.what());
  }
  m.params = ad::ParamSet::load(bin);
  const Model fresh = init_model(m.config);
  if (!fresh.params.same_layout(m.params)) throw DataError("checkpoint parameters do not match its config");
  return m;
}

}  // namespace maoml::model
