#include "pptlab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pptlab/binary_io.hpp"
#include "pptlab/errors.hpp"
#include "pptlab/optim.hpp"
#include "pptlab/rng.hpp"
#include "pptlab/text.hpp"

namespace pptlab::training {

using nlohmann::json;
using models::ModelParams;

std::string to_string(Algo a) { return a == Algo::dpt ? "dpt" : "ppt"; }
std::string to_string(PredictorMode m) {
  return m == PredictorMode::joint_alternating ? "joint_alternating" : "pretrained_frozen";
}
std::string to_string(ContextMode m) { return m == ContextMode::ground_truth ? "ground_truth" : "proxy"; }

Algo algo_from_string(const std::string& s) {
  if (s == "dpt") return Algo::dpt;
  if (s == "ppt") return Algo::ppt;
  throw ConfigError("algo: expected dpt or ppt, got '" + s + "'");
}

PredictorMode predictor_mode_from_string(const std::string& s) {
  if (s == "joint_alternating") return PredictorMode::joint_alternating;
  if (s == "pretrained_frozen") return PredictorMode::pretrained_frozen;
  throw ConfigError("predictor_mode: expected joint_alternating or pretrained_frozen, got '" + s + "'");
}

ContextMode context_mode_from_string(const std::string& s) {
  if (s == "ground_truth") return ContextMode::ground_truth;
  if (s == "proxy") return ContextMode::proxy;
  throw ConfigError("context_mode: expected ground_truth or proxy, got '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("train: lambda must be finite and >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (steps < 1) throw ConfigError("train: steps must be >= 1");
  if (convergence_epochs < 1) throw ConfigError("train: convergence_epochs must be >= 1");
  if (divergence_window < 1 || !(divergence_factor > 0.0)) {
    throw ConfigError("train: divergence_window must be >= 1 and divergence_factor > 0");
  }
}

json TrainConfig::to_json() const {
  return json{{"algo", to_string(algo)},
              {"lambda", lambda},
              {"learning_rate", learning_rate},
              {"weight_decay", weight_decay},
              {"batch_size", batch_size},
              {"steps", steps},
              {"predictor_mode", to_string(predictor_mode)},
              {"context_mode", to_string(context_mode)},
              {"seed", seed},
              {"checkpoint_every", checkpoint_every},
              {"stop_on_convergence", stop_on_convergence},
              {"convergence_tol", convergence_tol},
              {"convergence_epochs", convergence_epochs},
              {"divergence_factor", divergence_factor},
              {"divergence_window", divergence_window}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train: expected a JSON object");
  TrainConfig c;
  const json defaults = c.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("train: unknown key '" + key + "'");
  }
  try {
    if (j.contains("algo")) c.algo = algo_from_string(j.at("algo").get<std::string>());
    if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("steps")) c.steps = j.at("steps").get<std::size_t>();
    if (j.contains("predictor_mode")) {
      c.predictor_mode = predictor_mode_from_string(j.at("predictor_mode").get<std::string>());
    }
    if (j.contains("context_mode")) c.context_mode = context_mode_from_string(j.at("context_mode").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("checkpoint_every")) c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    if (j.contains("stop_on_convergence")) c.stop_on_convergence = j.at("stop_on_convergence").get<bool>();
    if (j.contains("convergence_tol")) c.convergence_tol = j.at("convergence_tol").get<double>();
    if (j.contains("convergence_epochs")) c.convergence_epochs = j.at("convergence_epochs").get<std::size_t>();
    if (j.contains("divergence_factor")) c.divergence_factor = j.at("divergence_factor").get<double>();
    if (j.contains("divergence_window")) c.divergence_window = j.at("divergence_window").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return c;
}

EpisodeBatch EpisodeBatch::of(std::span<const bandit::Episode> eps) {
  EpisodeBatch b;
  if (eps.empty()) throw ContractError("empty episode batch");
  b.num_arms = eps.front().num_arms();
  b.horizon = eps.front().horizon();
  for (const auto& ep : eps) {
    if (ep.num_arms() != b.num_arms || ep.horizon() != b.horizon) {
      throw ContractError("episodes in a batch must share K and n");
    }
    b.episodes.push_back(&ep);
  }
  return b;
}

Tensor context_targets(const EpisodeBatch& batch, ContextMode mode) {
  const std::size_t k = batch.num_arms, n = batch.horizon;
  Tensor t({batch.size() * n, k});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& src = mode == ContextMode::ground_truth ? batch.episodes[b]->true_means : batch.episodes[b]->proxy_means;
    if (src.size() != k) throw ContractError("episode is missing its context label");
    for (std::size_t j = 0; j < n; ++j) std::copy(src.begin(), src.end(), t.data.begin() + static_cast<std::ptrdiff_t>((b * n + j) * k));
  }
  return t;
}

std::vector<std::size_t> optimal_action_targets(const EpisodeBatch& batch) {
  std::vector<std::size_t> out;
  out.reserve(batch.size() * batch.horizon);
  for (const auto* ep : batch.episodes) out.insert(out.end(), batch.horizon, ep->optimal_arm);
  return out;
}

models::TokenBatch history_tokens(const EpisodeBatch& batch) {
  models::TokenBatch t{batch.size(), batch.horizon, batch.num_arms + 1, {}};
  t.rows.reserve(t.batch * t.seq * t.feature_dim);
  for (const auto* ep : batch.episodes) models::append_episode_rows(t.rows, ep->actions, ep->rewards, {}, batch.num_arms, false);
  return t;
}

models::TokenBatch policy_tokens(const EpisodeBatch& batch, const Tensor& predictions) {
  const std::size_t k = batch.num_arms, n = batch.horizon;
  if (predictions.size() != batch.size() * n * k) {
    throw DimensionError("policy_tokens: predictions " + shape_str(predictions.shape) + " for " +
                         std::to_string(batch.size()) + " episodes of " + std::to_string(n) + " steps");
  }
  models::TokenBatch t{batch.size(), n, 2 * k + 1, {}};
  t.rows.reserve(t.batch * t.seq * t.feature_dim);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto* ep = batch.episodes[b];
    models::append_episode_rows(t.rows, ep->actions, ep->rewards,
                                std::span<const double>(predictions.data).subspan(b * n * k, n * k), k, true);
  }
  return t;
}

std::vector<double> curiosity_vector(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size()) {
    throw DimensionError("curiosity_vector: length " + std::to_string(predicted.size()) + " vs " +
                         std::to_string(target.size()));
  }
  std::vector<double> out(predicted.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (predicted[i] - target[i]) * (predicted[i] - target[i]);
  return out;
}

Tensor curiosity_matrix(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape != target.shape) {
    throw DimensionError("curiosity_matrix: shape " + shape_str(predicted.shape) + " vs " + shape_str(target.shape));
  }
  return Tensor(predicted.shape, curiosity_vector(predicted.data, target.data));
}

namespace {

models::TokenBatch tokens_for_policy(const ModelParams& policy, const EpisodeBatch& batch, const Tensor* predictions) {
  if (!policy.config.prediction_inputs) return history_tokens(batch);
  if (predictions != nullptr) return policy_tokens(batch, *predictions);
  return policy_tokens(batch, Tensor({batch.size() * batch.horizon, batch.num_arms}));
}

void check_policy(const ModelParams& policy, const EpisodeBatch& batch) {
  if (policy.config.head != models::HeadKind::action_logits) throw ConfigError("policy model must have an action head");
  if (policy.config.num_arms != batch.num_arms) throw ConfigError("policy K does not match the episodes");
}

}  // namespace

ad::Var dpt_objective(ad::Tape& tape, ModelParams& policy, const EpisodeBatch& batch, const Tensor* predictions) {
  check_policy(policy, batch);
  const auto model = models::bind(tape, policy, true);
  const ad::Var logits = models::forward(model, tokens_for_policy(policy, batch, predictions));
  const auto targets = optimal_action_targets(batch);
  return ad::scale(ad::cross_entropy(logits, targets), 1.0 / static_cast<double>(batch.size()));
}

ad::Var predictor_objective(ad::Tape& tape, ModelParams& predictor, const EpisodeBatch& batch, ContextMode mode,
                            Tensor* predictions_out) {
  if (predictor.config.head != models::HeadKind::reward_vector) throw ConfigError("predictor must have a reward head");
  if (predictor.config.num_arms != batch.num_arms) throw ConfigError("predictor K does not match the episodes");
  const auto model = models::bind(tape, predictor, true);
  const ad::Var out = models::forward(model, history_tokens(batch));
  if (predictions_out != nullptr) *predictions_out = out.value();
  return ad::scale(ad::squared_error(out, context_targets(batch, mode)), 1.0 / static_cast<double>(batch.size()));
}

PolicyObjective ppt_objective(ad::Tape& tape, ModelParams& policy, const EpisodeBatch& batch,
                              const Tensor& predictions, const Tensor& curiosity, double lambda) {
  check_policy(policy, batch);
  const std::size_t rows = batch.size() * batch.horizon;
  if (curiosity.size() != rows * batch.num_arms) {
    throw DimensionError("ppt_objective: curiosity " + shape_str(curiosity.shape) + " for " + std::to_string(rows) +
                         " positions");
  }
  const auto model = models::bind(tape, policy, true);
  const ad::Var logits = models::forward(model, tokens_for_policy(policy, batch, &predictions));
  const auto targets = optimal_action_targets(batch);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  PolicyObjective obj;
  obj.nll = ad::scale(ad::cross_entropy(logits, targets), inv_batch);
  const Tensor weights({rows, batch.num_arms}, curiosity.data);
  obj.curiosity = ad::scale(ad::sum(ad::mul_const(ad::softmax(logits), weights)), inv_batch);
  obj.total = ad::sub(obj.nll, ad::scale(obj.curiosity, lambda));
  return obj;
}

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string(what) + " is not finite");
}

}  // namespace

PolicyLoss dpt_loss(ModelParams& policy, const EpisodeBatch& batch, const Tensor* predictions) {
  ad::Tape tape;
  const ad::Var loss = dpt_objective(tape, policy, batch, predictions);
  const double v = loss.value().data[0];
  require_finite(v, "DPT loss");
  tape.backward(loss);
  return {v, v, 0.0};
}

PredictorLoss predictor_loss(ModelParams& predictor, const EpisodeBatch& batch, ContextMode mode) {
  ad::Tape tape;
  PredictorLoss out;
  const ad::Var loss = predictor_objective(tape, predictor, batch, mode, &out.predictions);
  out.value = loss.value().data[0];
  require_finite(out.value, "predictor loss");
  tape.backward(loss);
  return out;
}

Tensor predict_contexts(const ModelParams& predictor, const EpisodeBatch& batch) {
  if (predictor.config.num_arms != batch.num_arms) throw ConfigError("predictor K does not match the episodes");
  ad::Tape tape;
  const auto model = models::bind_constant(tape, predictor);
  Tensor out = models::forward(model, history_tokens(batch)).value();
  if (!out.all_finite()) throw NumericError("predictor produced non-finite values");
  return out;
}

PolicyLoss ppt_policy_loss(ModelParams& policy, const EpisodeBatch& batch, const Tensor& predictions,
                           const Tensor& curiosity, double lambda) {
  ad::Tape tape;
  const PolicyObjective obj = ppt_objective(tape, policy, batch, predictions, curiosity, lambda);
  PolicyLoss out{obj.total.value().data[0], obj.nll.value().data[0], obj.curiosity.value().data[0]};
  require_finite(out.total, "PPT policy loss");
  tape.backward(obj.total);
  return out;
}

PolicyLoss ppt_policy_loss(ModelParams& policy, const ModelParams& predictor, const EpisodeBatch& batch,
                           double lambda, ContextMode mode) {
  const Tensor predictions = predict_contexts(predictor, batch);
  const Tensor curiosity = curiosity_matrix(predictions, context_targets(batch, mode));
  return ppt_policy_loss(policy, batch, predictions, curiosity, lambda);
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ostringstream out;
  out << "step,nll_term,curiosity_term,predictor_loss,wallclock_s\n";
  for (const auto& r : rows) {
    out << r.step << ',' << fmt_double(r.nll_term) << ',' << fmt_double(r.curiosity_term) << ','
        << fmt_optional(r.predictor_loss) << ',' << fmt_double(r.wallclock_s) << '\n';
  }
  io::write_text(path, out.str());
}

models::ModelConfig policy_config_for(const bandit::PretrainDataset& ds, Algo algo, std::size_t embed_dim,
                                      std::size_t num_layers, std::size_t num_heads) {
  models::ModelConfig c;
  c.embed_dim = embed_dim;
  c.num_layers = num_layers;
  c.num_heads = num_heads;
  c.num_arms = ds.num_arms();
  c.max_seq_len = ds.horizon() + 1;
  c.head = models::HeadKind::action_logits;
  c.prediction_inputs = algo == Algo::ppt;
  c.validate();
  return c;
}

models::ModelConfig predictor_config_for(const bandit::PretrainDataset& ds, std::size_t embed_dim,
                                         std::size_t num_layers, std::size_t num_heads) {
  models::ModelConfig c = policy_config_for(ds, Algo::dpt, embed_dim, num_layers, num_heads);
  c.head = models::HeadKind::reward_vector;
  c.prediction_inputs = false;
  return c;
}

TrainResult train(const bandit::PretrainDataset& dataset, const models::ModelConfig& policy_cfg,
                  const models::ModelConfig& predictor_cfg, const TrainConfig& cfg,
                  const ModelParams* frozen_predictor, const TrainHooks& hooks) {
  cfg.validate();
  const std::size_t k = dataset.num_arms(), n = dataset.horizon();
  if (dataset.episodes.empty()) throw ConfigError("train: dataset is empty");
  if (policy_cfg.num_arms != k || policy_cfg.max_seq_len < n) {
    throw ConfigError("train: policy config (K=" + std::to_string(policy_cfg.num_arms) + ", max_seq_len=" +
                      std::to_string(policy_cfg.max_seq_len) + ") incompatible with dataset (K=" + std::to_string(k) +
                      ", n=" + std::to_string(n) + ")");
  }
  if (policy_cfg.head != models::HeadKind::action_logits) throw ConfigError("train: policy needs an action head");
  if (cfg.algo == Algo::dpt && policy_cfg.prediction_inputs) {
    throw ConfigError("train: the DPT policy takes no prediction inputs");
  }
  const bool use_predictor = cfg.algo == Algo::ppt;
  const bool frozen = use_predictor && cfg.predictor_mode == PredictorMode::pretrained_frozen;
  if (frozen && frozen_predictor == nullptr) throw ConfigError("train: pretrained_frozen mode needs a predictor checkpoint");
  if (use_predictor) {
    const auto& pc = frozen ? frozen_predictor->config : predictor_cfg;
    if (pc.num_arms != k || pc.max_seq_len < n || pc.head != models::HeadKind::reward_vector) {
      throw ConfigError("train: predictor config incompatible with dataset");
    }
  }

  TrainResult result;
  result.policy = models::init_params(policy_cfg, derive_seed(cfg.seed, 1));
  if (use_predictor) {
    result.predictor = frozen ? *frozen_predictor : models::init_params(predictor_cfg, derive_seed(cfg.seed, 2));
  }
  ModelParams& policy = result.policy;
  ModelParams* predictor = result.predictor ? &*result.predictor : nullptr;

  const AdamWConfig opt_cfg{cfg.learning_rate, cfg.weight_decay};
  AdamW policy_opt(opt_cfg), predictor_opt(opt_cfg);
  auto policy_tensors = policy.tensors();
  std::vector<Tensor*> predictor_tensors = predictor ? predictor->tensors() : std::vector<Tensor*>{};

  ModelParams good_policy = policy;
  std::optional<ModelParams> good_predictor = result.predictor;

  const std::size_t count = dataset.episodes.size();
  const std::size_t batch_size = std::min(cfg.batch_size, count);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(cfg.seed, 0, 0x5eed));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::size_t cursor = 0;

  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0, stable_epochs = 0;
  std::optional<double> prev_epoch_avg;
  std::optional<double> initial_loss;
  std::size_t over_limit = 0;

  const auto start = std::chrono::steady_clock::now();
  auto fail = [&](std::string reason) {
    result.diverged = true;
    result.divergence_reason = std::move(reason);
    result.policy = good_policy;
    result.predictor = good_predictor;
    return result;
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    if (cursor + batch_size > count) {
      ++result.epochs_done;
      const double avg = epoch_sum / static_cast<double>(std::max<std::size_t>(1, epoch_steps));
      if (prev_epoch_avg && std::abs(avg - *prev_epoch_avg) < cfg.convergence_tol) {
        ++stable_epochs;
      } else {
        stable_epochs = 0;
      }
      prev_epoch_avg = avg;
      epoch_sum = 0.0;
      epoch_steps = 0;
      if (stable_epochs >= cfg.convergence_epochs) {
        result.converged = true;
        if (cfg.stop_on_convergence) break;
      }
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      cursor = 0;
    }
    std::vector<const bandit::Episode*> picked;
    picked.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) picked.push_back(&dataset.episodes[order[cursor + i]]);
    cursor += batch_size;
    const EpisodeBatch batch{std::move(picked), k, n};

    TrainLogRow row;
    row.step = step;
    PolicyLoss loss;
    try {
      if (use_predictor) {
        const Tensor targets = context_targets(batch, cfg.context_mode);
        Tensor predictions;
        if (frozen) {
          predictions = predict_contexts(*predictor, batch);
          double se = 0.0;
          for (std::size_t i = 0; i < predictions.size(); ++i) {
            se += (predictions.data[i] - targets.data[i]) * (predictions.data[i] - targets.data[i]);
          }
          row.predictor_loss = se / static_cast<double>(batch.size());
        } else {
          predictor->zero_grad();
          auto pl = predictor_loss(*predictor, batch, cfg.context_mode);
          predictor_opt.step(predictor_tensors);
          row.predictor_loss = pl.value;
          predictions = std::move(pl.predictions);
        }
        const Tensor curiosity = curiosity_matrix(predictions, targets);
        policy.zero_grad();
        loss = ppt_policy_loss(policy, batch, predictions, curiosity, cfg.lambda);
      } else {
        policy.zero_grad();
        loss = dpt_loss(policy, batch);
      }
      policy_opt.step(policy_tensors);
    } catch (const NumericError& e) {
      return fail(std::string("numeric failure at step ") + std::to_string(step) + ": " + e.what());
    }

    if (!initial_loss) initial_loss = loss.total;
    const double limit = cfg.divergence_factor * std::max(std::abs(*initial_loss), 1e-12);
    over_limit = loss.total > limit ? over_limit + 1 : 0;
    if (over_limit >= cfg.divergence_window) {
      return fail("policy loss above " + fmt_double(limit) + " for " + std::to_string(over_limit) + " steps");
    }

    row.nll_term = loss.nll;
    row.curiosity_term = loss.curiosity;
    row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.rows.push_back(row);
    result.steps_done = step;
    epoch_sum += loss.total;
    ++epoch_steps;
    if (hooks.on_step) hooks.on_step(row);

    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      good_policy = policy;
      good_predictor = result.predictor;
      if (hooks.on_checkpoint) hooks.on_checkpoint(step, policy, predictor);
    }
  }
  return result;
}

}  // namespace pptlab::training
