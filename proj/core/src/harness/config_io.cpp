#include <fstream>
#include <set>
#include <sstream>

#include "maoml/error.hpp"
#include "maoml/harness/experiment.hpp"

namespace maoml::harness {

using nlohmann::json;

namespace {

const std::set<std::string> kConfigKeys = {"dataset",  "methods",  "losses",      "settings",   "seeds",
                                           "hidden_dims", "meta",  "meta_overrides", "finetune", "finetune_overrides", "holdouts",
                                           "output_dir",  "threads", "deterministic"};
const std::set<std::string> kMetaKeys = {"alpha",      "beta",      "inner_steps", "meta_batch_size",
                                         "support_size", "query_size", "epochs",    "grad_mode",
                                         "seed",       "hvp_step",  "threads",     "eval_inner_steps"};
const std::set<std::string> kFinetuneKeys = {"loss", "lr", "epochs", "batch_size", "seed"};

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

json finetune_json(const meta::FinetuneOptions& f) {
  return {{"loss", meta::to_string(f.loss)},
          {"lr", f.lr},
          {"epochs", f.epochs},
          {"batch_size", f.batch_size},
          {"seed", f.seed}};
}

void read_finetune(const json& j, meta::FinetuneOptions& f) {
  reject_unknown(j, kFinetuneKeys, "finetune");
  if (j.contains("loss")) f.loss = meta::loss_from_string(j.at("loss").get<std::string>());
  if (j.contains("lr")) f.lr = j.at("lr").get<double>();
  if (j.contains("epochs")) f.epochs = j.at("epochs").get<std::size_t>();
  if (j.contains("batch_size")) f.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("seed")) f.seed = j.at("seed").get<std::uint64_t>();
}

}  // namespace

void to_json(json& j, const ExperimentConfig& c) {
  j = json::object();
  j["dataset"] = c.dataset;
  j["methods"] = json::array();
  for (auto m : c.methods) j["methods"].push_back(to_string(m));
  j["losses"] = json::object();
  for (auto m : c.methods) j["losses"][to_string(m)] = meta::to_string(c.loss_for(m));
  j["settings"] = json::array();
  for (auto s : c.settings) j["settings"].push_back(tasks::to_string(s));
  j["seeds"] = c.seeds;
  j["hidden_dims"] = c.hidden_dims;
  j["meta"] = c.meta;
  j["meta_overrides"] = json::object();
  for (const auto& [m, mc] : c.meta_overrides) j["meta_overrides"][to_string(m)] = mc;
  for (const auto& [ms, mc] : c.setting_overrides)
    j["meta_overrides"][to_string(ms.first) + "/" + tasks::to_string(ms.second)] = mc;
  j["finetune"] = finetune_json(c.finetune);
  j["finetune_overrides"] = json::object();
  for (const auto& [s, f] : c.finetune_overrides) j["finetune_overrides"][tasks::to_string(s)] = finetune_json(f);
  j["holdouts"] = c.holdouts;
  j["output_dir"] = c.output_dir;
  j["threads"] = c.threads;
  j["deterministic"] = c.deterministic;
}

void from_json(const json& j, ExperimentConfig& c) {
  try {
    reject_unknown(j, kConfigKeys, "config");
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) c.methods.push_back(method_from_string(m.get<std::string>()));
    }
    if (j.contains("losses")) {
      c.losses.clear();
      for (const auto& [m, l] : j.at("losses").items())
        c.losses[method_from_string(m)] = meta::loss_from_string(l.get<std::string>());
    }
    if (j.contains("settings")) {
      c.settings.clear();
      for (const auto& s : j.at("settings")) c.settings.push_back(tasks::setting_from_string(s.get<std::string>()));
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("hidden_dims")) c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
    if (j.contains("meta")) {
      reject_unknown(j.at("meta"), kMetaKeys, "meta");
      meta::from_json(j.at("meta"), c.meta);
    }
    if (j.contains("meta_overrides")) {
      // "method" entries first, so "method/setting" entries can start from them
      c.meta_overrides.clear();
      c.setting_overrides.clear();
      const auto& mo = j.at("meta_overrides");
      if (!mo.is_object()) throw ConfigError("meta_overrides: expected a JSON object");
      for (const auto& [key, mj] : mo.items()) {
        if (key.find('/') != std::string::npos) continue;
        reject_unknown(mj, kMetaKeys, "meta_overrides." + key);
        meta::MetaConfig mc = c.meta;
        meta::from_json(mj, mc);
        c.meta_overrides[method_from_string(key)] = mc;
      }
      for (const auto& [key, mj] : mo.items()) {
        const auto slash = key.find('/');
        if (slash == std::string::npos) continue;
        reject_unknown(mj, kMetaKeys, "meta_overrides." + key);
        const Method m = method_from_string(key.substr(0, slash));
        const tasks::Setting s = tasks::setting_from_string(key.substr(slash + 1));
        meta::MetaConfig mc = c.meta_for(m);
        meta::from_json(mj, mc);
        c.setting_overrides[{m, s}] = mc;
      }
    }
    if (j.contains("finetune")) read_finetune(j.at("finetune"), c.finetune);
    if (j.contains("finetune_overrides")) {
      c.finetune_overrides.clear();
      const auto& fo = j.at("finetune_overrides");
      if (!fo.is_object()) throw ConfigError("finetune_overrides: expected a JSON object");
      for (const auto& [key, fj] : fo.items()) {
        meta::FinetuneOptions f = c.finetune;
        read_finetune(fj, f);
        c.finetune_overrides[tasks::setting_from_string(key)] = f;
      }
    }
    if (j.contains("holdouts")) c.holdouts = j.at("holdouts").get<std::vector<std::string>>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("threads")) c.threads = j.at("threads").get<std::size_t>();
    if (j.contains("deterministic")) c.deterministic = j.at("deterministic").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  ExperimentConfig c;
  from_json(j, c);
  return c;
}

}  // namespace maoml::harness
