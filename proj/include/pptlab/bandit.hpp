#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pptlab/rng.hpp"

namespace pptlab::bandit {

// One Gaussian bandit task: reward of arm a ~ N(means[a], sigma^2) for `horizon` steps.
class BanditEnv {
 public:
  BanditEnv(std::vector<double> means, double sigma, std::size_t horizon);

  const std::vector<double>& means() const { return means_; }
  double sigma() const { return sigma_; }
  double variance() const { return sigma_ * sigma_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t num_arms() const { return means_.size(); }
  double best_mean() const;

 private:
  std::vector<double> means_;
  double sigma_;
  std::size_t horizon_;
};

// Reward variance: a fixed value (lo == hi) or Unif[lo, hi].
struct VarianceSpec {
  double lo = 0.1;
  double hi = 0.1;

  static VarianceSpec fixed(double v) { return {v, v}; }
  static VarianceSpec interval(double lo, double hi) { return {lo, hi}; }
  bool is_fixed() const { return lo == hi; }
  void validate() const;

  nlohmann::json to_json() const;
  static VarianceSpec from_json(const nlohmann::json& j);
  friend bool operator==(const VarianceSpec&, const VarianceSpec&) = default;
};

struct EnvDistribution {
  std::size_t num_arms = 3;
  VarianceSpec variance;
  std::size_t horizon = 100;

  void validate() const;
};

struct CollectionPolicyConfig {
  double expert_weight = 0.2;
  double dirichlet_alpha = 1.0;

  void validate() const;
};

struct Episode {
  std::vector<std::uint32_t> actions;
  std::vector<double> rewards;
  std::vector<double> action_probs;  // horizon x K, row-major
  std::uint32_t optimal_arm = 0;
  std::vector<double> true_means;
  std::vector<double> proxy_means;
  double env_sigma = 0.0;

  std::size_t horizon() const { return actions.size(); }
  std::size_t num_arms() const { return true_means.size(); }
  std::span<const double> probs_at(std::size_t step) const {
    return {action_probs.data() + step * num_arms(), num_arms()};
  }
  friend bool operator==(const Episode&, const Episode&) = default;
};

// How the offline mean estimate divides the per-arm reward sums.
enum class ProxyEstimator {
  horizon,      // divide by the episode length n (default)
  pull_count,   // divide by the number of pulls of that arm (0 if never pulled)
};

std::string to_string(ProxyEstimator e);
ProxyEstimator proxy_estimator_from_string(const std::string& s);

struct GenConfig {
  std::string preset = "ideal";
  std::size_t num_arms = 3;
  double expert_weight = 0.2;
  VarianceSpec variance = VarianceSpec::interval(0.1, 1.0);
  std::size_t horizon = 100;
  std::size_t num_envs = 20000;
  std::uint64_t seed = 0;
  double dirichlet_alpha = 1.0;
  ProxyEstimator proxy_estimator = ProxyEstimator::horizon;

  EnvDistribution env_distribution() const { return {num_arms, variance, horizon}; }
  CollectionPolicyConfig collection_policy() const { return {expert_weight, dirichlet_alpha}; }
  void validate() const;

  // Canonical JSON (sorted keys) with keys preset, num_arms, expert_weight, sigma2,
  // horizon, num_envs, seed, dirichlet_alpha, proxy_estimator.
  nlohmann::json to_json() const;
  static GenConfig from_json(const nlohmann::json& j);
  friend bool operator==(const GenConfig&, const GenConfig&) = default;
};

// Named presets: "ideal" (w=0.2, sigma^2 ~ Unif[0.1,1.0], n=100) and
// "tricky" (w=0.8, sigma^2 = 0.1, n=200). Throws ConfigError for other names.
GenConfig preset_config(const std::string& name, std::size_t num_envs, std::uint64_t seed);

struct PretrainDataset {
  static constexpr std::uint32_t kFormatVersion = 1;

  GenConfig config;
  std::vector<Episode> episodes;
  std::uint32_t format_version = kFormatVersion;

  std::size_t num_arms() const { return config.num_arms; }
  std::size_t horizon() const { return config.horizon; }
  friend bool operator==(const PretrainDataset&, const PretrainDataset&) = default;
};

BanditEnv sample_env(const EnvDistribution& dist, Rng& rng);
double draw_reward(const BanditEnv& env, std::size_t arm, Rng& rng);
// argmax with ties to the lowest index
std::size_t optimal_arm(std::span<const double> means);
inline std::size_t optimal_arm(const BanditEnv& env) { return optimal_arm(env.means()); }

// w e_expert + (1 - w) p
std::vector<double> mix_with_expert(double expert_weight, std::size_t expert_arm, std::span<const double> p);
// Draws a fresh p ~ Dir(alpha 1^K) and mixes it with the expert vertex.
std::vector<double> collection_policy_step(const CollectionPolicyConfig& cfg, std::size_t expert_arm,
                                           std::size_t num_arms, Rng& rng);

std::vector<double> proxy_context(std::span<const std::uint32_t> actions, std::span<const double> rewards,
                                  std::size_t num_arms, ProxyEstimator estimator = ProxyEstimator::horizon);
inline std::vector<double> proxy_context(const Episode& ep, ProxyEstimator estimator = ProxyEstimator::horizon) {
  return proxy_context(ep.actions, ep.rewards, ep.num_arms(), estimator);
}

Episode generate_episode(const BanditEnv& env, const CollectionPolicyConfig& cfg, Rng& rng,
                         ProxyEstimator estimator = ProxyEstimator::horizon);

// Episode i uses the sub-stream derive_seed(config.seed, i); output is independent of
// the thread count.
PretrainDataset build_dataset(const GenConfig& config);
PretrainDataset build_dataset(const std::string& preset, std::size_t num_envs, std::uint64_t seed);

void save_dataset(const PretrainDataset& ds, const std::filesystem::path& path);
PretrainDataset load_dataset(const std::filesystem::path& path);

}  // namespace pptlab::bandit
