#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pptlab/autodiff.hpp"
#include "pptlab/bandit.hpp"
#include "pptlab/model.hpp"

namespace pptlab::training {

enum class Algo { dpt, ppt };
enum class PredictorMode { joint_alternating, pretrained_frozen };
enum class ContextMode { ground_truth, proxy };

std::string to_string(Algo a);
std::string to_string(PredictorMode m);
std::string to_string(ContextMode m);
Algo algo_from_string(const std::string& s);
PredictorMode predictor_mode_from_string(const std::string& s);
ContextMode context_mode_from_string(const std::string& s);

struct TrainConfig {
  Algo algo = Algo::ppt;
  double lambda = 200.0;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 256;
  std::size_t steps = 2000;
  PredictorMode predictor_mode = PredictorMode::joint_alternating;
  ContextMode context_mode = ContextMode::ground_truth;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  // Stop before `steps` once the epoch-average policy loss changes by less than
  // convergence_tol for convergence_epochs consecutive epochs.
  bool stop_on_convergence = false;
  double convergence_tol = 1e-4;
  std::size_t convergence_epochs = 3;
  // Abort when the policy loss exceeds divergence_factor x |initial| for
  // divergence_window consecutive steps.
  double divergence_factor = 10.0;
  std::size_t divergence_window = 100;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Non-owning view of the episodes in one minibatch; all share K and n.
struct EpisodeBatch {
  std::vector<const bandit::Episode*> episodes;
  std::size_t num_arms = 0;
  std::size_t horizon = 0;

  static EpisodeBatch of(std::span<const bandit::Episode> eps);
  std::size_t size() const { return episodes.size(); }
};

// Per-position regression target (batch*n x K): c* or the proxy estimate.
Tensor context_targets(const EpisodeBatch& batch, ContextMode mode);
// One-hot-free label list: a* repeated at every position.
std::vector<std::size_t> optimal_action_targets(const EpisodeBatch& batch);
models::TokenBatch history_tokens(const EpisodeBatch& batch);
models::TokenBatch policy_tokens(const EpisodeBatch& batch, const Tensor& predictions);

// (predicted - target)^2 elementwise.
std::vector<double> curiosity_vector(std::span<const double> predicted, std::span<const double> target);
Tensor curiosity_matrix(const Tensor& predicted, const Tensor& target);

// ---- objectives on a tape (scalar Vars, averaged over the batch) -----------------------------

// A policy built with prediction inputs reads `predictions` (zeros when null).
ad::Var dpt_objective(ad::Tape& tape, models::ModelParams& policy, const EpisodeBatch& batch,
                      const Tensor* predictions = nullptr);
ad::Var predictor_objective(ad::Tape& tape, models::ModelParams& predictor, const EpisodeBatch& batch,
                            ContextMode mode, Tensor* predictions_out = nullptr);

struct PolicyObjective {
  ad::Var total;
  ad::Var nll;        // mean over batch of sum_j -log pi(a*)
  ad::Var curiosity;  // mean over batch of sum_j <E_j, pi>  (>= 0)
};
// predictions and curiosity are (batch*n x K) constants.
PolicyObjective ppt_objective(ad::Tape& tape, models::ModelParams& policy, const EpisodeBatch& batch,
                              const Tensor& predictions, const Tensor& curiosity, double lambda);

// ---- losses with gradients --------------------------------------------------------------------
// Each adds d(loss)/d(params) into the params' grad buffers (callers zero them first).

struct PolicyLoss {
  double total = 0.0;
  double nll = 0.0;
  double curiosity = 0.0;
};

PolicyLoss dpt_loss(models::ModelParams& policy, const EpisodeBatch& batch, const Tensor* predictions = nullptr);

struct PredictorLoss {
  double value = 0.0;
  Tensor predictions;  // batch*n x K, the forward outputs c_{1:n}
};
PredictorLoss predictor_loss(models::ModelParams& predictor, const EpisodeBatch& batch, ContextMode mode);
// Forward only (no gradients).
Tensor predict_contexts(const models::ModelParams& predictor, const EpisodeBatch& batch);

PolicyLoss ppt_policy_loss(models::ModelParams& policy, const EpisodeBatch& batch, const Tensor& predictions,
                           const Tensor& curiosity, double lambda);
// Runs the predictor forward first (stop-gradient), then the policy loss.
PolicyLoss ppt_policy_loss(models::ModelParams& policy, const models::ModelParams& predictor,
                           const EpisodeBatch& batch, double lambda, ContextMode mode);

// ---- training loop ------------------------------------------------------------------------------

struct TrainLogRow {
  std::size_t step = 0;
  double nll_term = 0.0;
  double curiosity_term = 0.0;
  std::optional<double> predictor_loss;
  double wallclock_s = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  models::ModelParams policy;
  std::optional<models::ModelParams> predictor;
  TrainLog log;
  std::size_t steps_done = 0;
  std::size_t epochs_done = 0;
  bool converged = false;
  bool diverged = false;
  std::string divergence_reason;
};

struct TrainHooks {
  // Called every checkpoint_every steps with the current parameters.
  std::function<void(std::size_t step, const models::ModelParams& policy, const models::ModelParams* predictor)>
      on_checkpoint;
  // Called after every step with the newest log row.
  std::function<void(const TrainLogRow&)> on_step;
};

// Model configs for a dataset: K and max_seq_len follow the data.
models::ModelConfig policy_config_for(const bandit::PretrainDataset& ds, Algo algo, std::size_t embed_dim,
                                      std::size_t num_layers, std::size_t num_heads);
models::ModelConfig predictor_config_for(const bandit::PretrainDataset& ds, std::size_t embed_dim,
                                         std::size_t num_layers, std::size_t num_heads);

// On divergence the returned parameters are the last ones handed to on_checkpoint
// (or the initial ones if none was), and `diverged` is set.
TrainResult train(const bandit::PretrainDataset& dataset, const models::ModelConfig& policy_cfg,
                  const models::ModelConfig& predictor_cfg, const TrainConfig& cfg,
                  const models::ModelParams* frozen_predictor = nullptr, const TrainHooks& hooks = {});

}  // namespace pptlab::training
