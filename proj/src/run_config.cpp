#include "pptlab/run_config.hpp"

#include <algorithm>

#include "pptlab/binary_io.hpp"
#include "pptlab/errors.hpp"

namespace pptlab {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ConfigError(what + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace

json ModelShape::to_json() const {
  return json{{"embed_dim", embed_dim}, {"num_layers", num_layers}, {"num_heads", num_heads}};
}

ModelShape ModelShape::from_json(const json& j) {
  check_keys(j, {"embed_dim", "num_layers", "num_heads"}, "model");
  ModelShape m;
  try {
    if (j.contains("embed_dim")) m.embed_dim = j.at("embed_dim").get<std::size_t>();
    if (j.contains("num_layers")) m.num_layers = j.at("num_layers").get<std::size_t>();
    if (j.contains("num_heads")) m.num_heads = j.at("num_heads").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return m;
}

RunConfig::RunConfig() : data(bandit::preset_config("ideal", 20000, 0)) { eval.horizon = data.horizon; }

RunConfig RunConfig::for_preset(const std::string& preset) {
  RunConfig c;
  c.data = bandit::preset_config(preset, c.data.num_envs, c.data.seed);
  c.eval.horizon = c.data.horizon;
  return c;
}

void RunConfig::validate() const {
  data.validate();
  train.validate();
  eval.validate();
  if (eval.num_arms != data.num_arms) throw ConfigError("eval.num_arms must equal data.num_arms");
  models::ModelConfig probe;
  probe.embed_dim = model.embed_dim;
  probe.num_layers = model.num_layers;
  probe.num_heads = model.num_heads;
  probe.num_arms = data.num_arms;
  probe.max_seq_len = data.horizon + 1;
  probe.validate();
}

json RunConfig::to_json() const {
  return json{{"data", data.to_json()}, {"model", model.to_json()}, {"train", train.to_json()}, {"eval", eval.to_json()}};
}

RunConfig RunConfig::from_json(const json& j) {
  check_keys(j, {"data", "model", "train", "eval"}, "config");
  RunConfig c;
  if (j.contains("data")) {
    const json& d = j.at("data");
    if (!d.is_object()) throw ConfigError("data: expected a JSON object");
    json base = c.data.to_json();
    if (d.contains("preset")) {
      if (!d.at("preset").is_string()) throw ConfigError("data.preset: expected a string");
      base = bandit::preset_config(d.at("preset").get<std::string>(), c.data.num_envs, c.data.seed).to_json();
    }
    base.update(d);
    c.data = bandit::GenConfig::from_json(base);
  }
  if (j.contains("model")) c.model = ModelShape::from_json(j.at("model"));
  if (j.contains("train")) c.train = training::TrainConfig::from_json(j.at("train"));
  c.eval.horizon = c.data.horizon;
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    if (!e.is_object()) throw ConfigError("eval: expected a JSON object");
    json base = c.eval.to_json();
    base.update(e);
    c.eval = eval::SweepConfig::from_json(base);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

std::string RunConfig::dump() const { return to_json().dump(2) + "\n"; }

RunConfig load_run_config(const std::filesystem::path& path) { return RunConfig::parse(io::read_text(path)); }

}  // namespace pptlab
