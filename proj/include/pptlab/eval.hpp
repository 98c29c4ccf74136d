#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pptlab/bandit.hpp"
#include "pptlab/model.hpp"
#include "pptlab/rng.hpp"

namespace pptlab::eval {

// One online episode. Deterministic baselines record one-hot distributions.
struct Rollout {
  std::vector<double> means;
  double sigma = 0.0;
  std::vector<double> action_probs;  // horizon x K
  std::vector<std::uint32_t> actions;
  std::vector<double> rewards;
  std::vector<double> predictions;   // horizon x K, empty when no predictor ran

  std::size_t horizon() const { return actions.size(); }
  std::size_t num_arms() const { return means.size(); }
  std::span<const double> probs_at(std::size_t t) const {
    return {action_probs.data() + t * num_arms(), num_arms()};
  }
  // mu* - <p_t, mu>
  double suboptimality_at(std::size_t t) const;
};

enum class ActionMode { sample, greedy };
std::string to_string(ActionMode m);
ActionMode action_mode_from_string(const std::string& s);

// Online deployment: per step the predictor (if any) estimates c_j from the history,
// the policy reads (history, c_{1:j}), an action is sampled (or argmaxed), a reward drawn.
Rollout deploy(const models::ModelParams& policy, const models::ModelParams* predictor,
               const bandit::BanditEnv& env, std::size_t horizon, Rng& rng, ActionMode mode = ActionMode::sample);

// Round-robin over the arms for the first K pulls, then argmax mu_hat + beta sqrt(1/n_a)
// (ties to the lowest index).
Rollout ucb_rollout(const bandit::BanditEnv& env, double beta, std::size_t horizon, Rng& rng);
Rollout random_rollout(const bandit::BanditEnv& env, std::size_t horizon, Rng& rng);

// ---- metrics ----------------------------------------------------------------------------------

std::vector<double> avg_suboptimality(std::span<const Rollout> rollouts);
std::vector<double> avg_regret(std::span<const Rollout> rollouts);
std::vector<double> prefix_sum(std::span<const double> v);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

struct RegretDistribution {
  std::vector<double> totals;  // one per rollout
  Histogram histogram;
};

inline constexpr std::size_t kHistogramBins = 50;
// Total regret per rollout plus a kHistogramBins-bin histogram over [0, max total].
RegretDistribution regret_distribution(std::span<const Rollout> rollouts);
Histogram make_histogram(std::span<const double> values, std::size_t bins);

// Per step, mean over rollouts of ||c_t - mu||^2. Throws ContractError when a
// rollout carries no predictions.
std::vector<double> online_prediction_loss(std::span<const Rollout> rollouts);

// metric(sigma2, t) - metric(sigma2_base, t); t is 0-based.
double degradation_delta(const std::map<double, std::vector<double>>& curves, double sigma2, double sigma2_base,
                         std::size_t t);

// ---- sweeps -----------------------------------------------------------------------------------

struct Algorithm {
  enum class Kind { learned, ucb, random };
  std::string name;
  Kind kind = Kind::random;
  std::shared_ptr<const models::ModelParams> policy;
  std::shared_ptr<const models::ModelParams> predictor;
  nlohmann::json provenance = nlohmann::json::object();  // checkpoint paths/hashes

  static Algorithm ucb(double beta = 1.0);
  static Algorithm uniform_random();
  double beta = 1.0;
};

struct SweepConfig {
  std::vector<double> sigma2_list{0.3, 0.5, 0.9};
  std::size_t num_envs = 1000;
  std::uint64_t seed = 0;
  std::size_t horizon = 100;
  std::size_t num_arms = 3;
  ActionMode mode = ActionMode::sample;
  double ucb_beta = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static SweepConfig from_json(const nlohmann::json& j);
  friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct CellResult {
  std::string algo;
  double sigma2 = 0.0;
  std::vector<double> suboptimality;
  std::vector<double> regret;
  std::vector<double> totals;
  Histogram histogram;
  std::optional<std::vector<double>> prediction_loss;
};

struct EvalReport {
  SweepConfig config;
  std::vector<std::string> algorithms;
  std::vector<CellResult> cells;
  nlohmann::json metadata = nlohmann::json::object();

  const CellResult& cell(const std::string& algo, double sigma2) const;
  // sigma2 -> curve for one algorithm (metric: "regret" or "suboptimality").
  std::map<double, std::vector<double>> curves(const std::string& algo, const std::string& metric) const;
};

// Env i has means drawn from derive_seed(seed, i) and is shared by every algorithm
// and every sigma2 level; only the noise scale changes across levels.
std::vector<bandit::BanditEnv> sweep_envs(const SweepConfig& cfg, double sigma2);
std::vector<Rollout> run_cell(const Algorithm& algo, const SweepConfig& cfg, double sigma2);
EvalReport run_sweep(const std::vector<Algorithm>& algorithms, const SweepConfig& cfg);

std::string cell_dir_name(double sigma2);
void save_report(const EvalReport& report, const std::filesystem::path& dir);
EvalReport load_report(const std::filesystem::path& dir);

}  // namespace pptlab::eval
