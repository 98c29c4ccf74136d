#pragma once

// Causal transformers for the policy and the reward predictor.
//
// Token layout (feature row per position):
//   predictor  [ one-hot(a) (K) | r (1) ]
//   policy     [ one-hot(a) (K) | r (1) | c (K) ]      (c omitted for the DPT policy)
// Row 0 is the query row with zero action/reward; row t >= 1 carries the t-th
// observed (a_t, r_t). The policy row t additionally carries the prediction c_{t+1}
// made from the first t steps. Output at row t therefore conditions on exactly
// D_{t+1} (and c_{1:t+1}), so one causal pass over an n-step episode yields all n
// decisions.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pptlab/autodiff.hpp"
#include "pptlab/tensor.hpp"

namespace pptlab::models {

enum class HeadKind { action_logits, reward_vector };

std::string to_string(HeadKind kind);
HeadKind head_kind_from_string(const std::string& s);

struct ModelConfig {
  std::size_t embed_dim = 32;
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t num_arms = 3;
  std::size_t max_seq_len = 101;
  HeadKind head = HeadKind::action_logits;
  // Policy only: whether rows carry the predictor's estimate (PPT) or not (DPT).
  bool prediction_inputs = true;

  std::size_t feature_dim() const;
  std::size_t mlp_dim() const { return 4 * embed_dim; }
  std::size_t parameter_count() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  // Keys carry no bias: it would shift every score of a row equally and never get a gradient.
  Tensor qkv_weight, q_bias, v_bias;
  Tensor proj_weight, proj_bias;
  Tensor ln2_gain, ln2_bias;
  Tensor fc_weight, fc_bias;
  Tensor out_weight, out_bias;
};

struct ModelParams {
  ModelConfig config;
  Tensor input_weight, input_bias;
  Tensor positions;
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor head_weight, head_bias;

  // Every tensor in declaration order (the checkpoint order).
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::size_t parameter_count() const;
  void zero_grad();
  bool all_finite() const;
  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

// Zero-filled tensors with the shapes implied by the config.
ModelParams make_params(const ModelConfig& cfg);
// N(0, init_std^2) projections and embeddings, zero biases/offsets, unit gains.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed, double init_std = 0.02);

// ---- tokens ---------------------------------------------------------------------------

// (rows x feature_dim) token matrix for one sequence.
struct TokenSequence {
  std::size_t feature_dim = 0;
  std::vector<double> rows;  // row-major
  std::size_t length() const { return feature_dim == 0 ? 0 : rows.size() / feature_dim; }
  std::span<const double> row(std::size_t t) const { return {rows.data() + t * feature_dim, feature_dim}; }
};

// history of h steps plus predictions c_1..c_{h+1} (flattened, (h+1) x K) -> h+1 rows.
TokenSequence encode_policy_tokens(std::span<const std::uint32_t> actions, std::span<const double> rewards,
                                   std::span<const double> predictions, std::size_t num_arms,
                                   std::size_t max_seq_len);
// DPT policy / predictor rows: history of h steps -> h+1 rows.
TokenSequence encode_history_tokens(std::span<const std::uint32_t> actions, std::span<const double> rewards,
                                    std::size_t num_arms, std::size_t max_seq_len);

// Token rows for decision positions 1..n of a full episode: the first n-1 steps
// are history; predictions (n x K) are required iff with_predictions.
void append_episode_rows(std::vector<double>& out, std::span<const std::uint32_t> actions,
                         std::span<const double> rewards, std::span<const double> predictions,
                         std::size_t num_arms, bool with_predictions);

// A batch of equal-length sequences, flattened to (batch*seq) x feature_dim.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t feature_dim = 0;
  std::vector<double> rows;
};

// ---- forward passes ---------------------------------------------------------------------

// Tape variables for every parameter tensor.
struct BoundModel {
  const ModelConfig* config = nullptr;
  ad::Var input_weight, input_bias, positions;
  struct Layer {
    ad::Var ln1_gain, ln1_bias, qkv_weight, q_bias, v_bias, proj_weight, proj_bias;
    ad::Var ln2_gain, ln2_bias, fc_weight, fc_bias, out_weight, out_bias;
  };
  std::vector<Layer> layers;
  ad::Var final_gain, final_bias, head_weight, head_bias;
};

// trainable: gradients flow into params' grad buffers on backward; otherwise constants.
BoundModel bind(ad::Tape& tape, ModelParams& params, bool trainable);
BoundModel bind_constant(ad::Tape& tape, const ModelParams& params);

// Head output (batch*seq) x K: logits for a policy, reward estimates for a predictor.
ad::Var forward(const BoundModel& model, const TokenBatch& tokens);

// Per-position action probabilities, seq x K. Throws NumericError on non-finite output.
Tensor policy_forward(const ModelParams& params, const TokenSequence& tokens);
// Per-position reward-vector estimates, seq x K.
Tensor predictor_forward(const ModelParams& params, const TokenSequence& tokens);

// ---- checkpoints ------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace pptlab::models
