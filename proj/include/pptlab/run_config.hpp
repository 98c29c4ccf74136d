#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

#include "pptlab/bandit.hpp"
#include "pptlab/eval.hpp"
#include "pptlab/training.hpp"

namespace pptlab {

// Transformer shape shared by the policy and the predictor; K and the
// sequence length follow the dataset.
struct ModelShape {
  std::size_t embed_dim = 32;
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;

  nlohmann::json to_json() const;
  static ModelShape from_json(const nlohmann::json& j);
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// The whole pipeline in one document: {"data", "model", "train", "eval"}.
// Parsing overlays the given keys on defaults. A data.preset selects that
// preset's defaults before the other data keys apply, and a missing
// eval.horizon follows data.horizon.
struct RunConfig {
  bandit::GenConfig data;
  ModelShape model;
  training::TrainConfig train;
  eval::SweepConfig eval;

  RunConfig();
  static RunConfig for_preset(const std::string& preset);
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig parse(const std::string& text);
  // Sorted keys, two-space indent, trailing newline.
  std::string dump() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace pptlab
