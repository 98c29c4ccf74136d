#include "pptlab/bandit.hpp"

#include <algorithm>
#include <cmath>

#include "pptlab/binary_io.hpp"
#include "pptlab/errors.hpp"

namespace pptlab::bandit {

using nlohmann::json;

namespace {

constexpr char kDatasetMagic[8] = {'P', 'P', 'T', 'D', 'S', 'E', 'T', '\0'};

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
    }
  }
}

}  // namespace

BanditEnv::BanditEnv(std::vector<double> means, double sigma, std::size_t horizon)
    : means_(std::move(means)), sigma_(sigma), horizon_(horizon) {
  if (means_.empty()) throw ConfigError("BanditEnv: at least one arm is required");
  if (!std::all_of(means_.begin(), means_.end(), [](double m) { return std::isfinite(m); })) {
    throw ConfigError("BanditEnv: arm means must be finite");
  }
  if (!(sigma_ >= 0.0) || !std::isfinite(sigma_)) throw ConfigError("BanditEnv: sigma must be finite and >= 0");
  if (horizon_ < 1) throw ConfigError("BanditEnv: horizon must be >= 1");
}

double BanditEnv::best_mean() const { return *std::max_element(means_.begin(), means_.end()); }

void VarianceSpec::validate() const {
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError("sigma2: bounds must be finite");
  if (is_fixed()) {
    if (lo < 0.0) throw ConfigError("sigma2: variance must be >= 0");
  } else if (!(0.0 < lo && lo <= hi)) {
    throw ConfigError("sigma2: interval must satisfy 0 < lo <= hi");
  }
}

json VarianceSpec::to_json() const {
  if (is_fixed()) return lo;
  return json::array({lo, hi});
}

VarianceSpec VarianceSpec::from_json(const json& j) {
  VarianceSpec spec;
  if (j.is_number()) {
    spec = fixed(j.get<double>());
  } else if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
    spec = interval(j[0].get<double>(), j[1].get<double>());
  } else {
    throw ConfigError("sigma2: expected a number or a [lo, hi] pair");
  }
  spec.validate();
  return spec;
}

void EnvDistribution::validate() const {
  if (num_arms < 1) throw ConfigError("num_arms must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  variance.validate();
}

void CollectionPolicyConfig::validate() const {
  if (!(expert_weight >= 0.0 && expert_weight <= 1.0)) throw ConfigError("expert_weight must lie in [0, 1]");
  if (!(dirichlet_alpha > 0.0)) throw ConfigError("dirichlet_alpha must be > 0");
}

std::string to_string(ProxyEstimator e) { return e == ProxyEstimator::horizon ? "horizon" : "pull_count"; }

ProxyEstimator proxy_estimator_from_string(const std::string& s) {
  if (s == "horizon") return ProxyEstimator::horizon;
  if (s == "pull_count") return ProxyEstimator::pull_count;
  throw ConfigError("proxy_estimator: expected 'horizon' or 'pull_count', got '" + s + "'");
}

void GenConfig::validate() const {
  env_distribution().validate();
  collection_policy().validate();
  if (num_envs < 1) throw ConfigError("num_envs must be >= 1");
}

json GenConfig::to_json() const {
  return json{{"preset", preset},
              {"num_arms", num_arms},
              {"expert_weight", expert_weight},
              {"sigma2", variance.to_json()},
              {"horizon", horizon},
              {"num_envs", num_envs},
              {"seed", seed},
              {"dirichlet_alpha", dirichlet_alpha},
              {"proxy_estimator", to_string(proxy_estimator)}};
}

GenConfig GenConfig::from_json(const json& j) {
  check_keys(j,
             {"preset", "num_arms", "expert_weight", "sigma2", "horizon", "num_envs", "seed", "dirichlet_alpha",
              "proxy_estimator"},
             "data");
  GenConfig c;
  try {
    if (j.contains("preset")) c.preset = j.at("preset").get<std::string>();
    if (j.contains("num_arms")) c.num_arms = j.at("num_arms").get<std::size_t>();
    if (j.contains("expert_weight")) c.expert_weight = j.at("expert_weight").get<double>();
    if (j.contains("sigma2")) c.variance = VarianceSpec::from_json(j.at("sigma2"));
    if (j.contains("horizon")) c.horizon = j.at("horizon").get<std::size_t>();
    if (j.contains("num_envs")) c.num_envs = j.at("num_envs").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("dirichlet_alpha")) c.dirichlet_alpha = j.at("dirichlet_alpha").get<double>();
    if (j.contains("proxy_estimator")) {
      c.proxy_estimator = proxy_estimator_from_string(j.at("proxy_estimator").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  return c;
}

GenConfig preset_config(const std::string& name, std::size_t num_envs, std::uint64_t seed) {
  GenConfig c;
  c.preset = name;
  c.num_envs = num_envs;
  c.seed = seed;
  if (name == "ideal") {
    c.expert_weight = 0.2;
    c.variance = VarianceSpec::interval(0.1, 1.0);
    c.horizon = 100;
  } else if (name == "tricky") {
    c.expert_weight = 0.8;
    c.variance = VarianceSpec::fixed(0.1);
    c.horizon = 200;
  } else {
    throw ConfigError("unknown dataset preset '" + name + "' (expected ideal or tricky)");
  }
  return c;
}

BanditEnv sample_env(const EnvDistribution& dist, Rng& rng) {
  std::vector<double> means(dist.num_arms);
  for (auto& m : means) m = sample_uniform(rng, 0.0, 1.0);
  const double variance = sample_uniform(rng, dist.variance.lo, dist.variance.hi);
  return BanditEnv(std::move(means), std::sqrt(variance), dist.horizon);
}

double draw_reward(const BanditEnv& env, std::size_t arm, Rng& rng) {
  if (arm >= env.num_arms()) {
    throw IndexError("draw_reward: arm " + std::to_string(arm) + " out of range for " +
                     std::to_string(env.num_arms()) + " arms");
  }
  return sample_normal(rng, env.means()[arm], env.sigma());
}

std::size_t optimal_arm(std::span<const double> means) {
  if (means.empty()) throw ContractError("optimal_arm: no arms");
  // max_element returns the first maximal element.
  return static_cast<std::size_t>(std::max_element(means.begin(), means.end()) - means.begin());
}

std::vector<double> mix_with_expert(double expert_weight, std::size_t expert_arm, std::span<const double> p) {
  if (expert_arm >= p.size()) throw IndexError("collection policy: expert arm out of range");
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = (1.0 - expert_weight) * p[i];
  out[expert_arm] += expert_weight;
  return out;
}

std::vector<double> collection_policy_step(const CollectionPolicyConfig& cfg, std::size_t expert_arm,
                                           std::size_t num_arms, Rng& rng) {
  const auto p = sample_dirichlet(rng, num_arms, cfg.dirichlet_alpha);
  return mix_with_expert(cfg.expert_weight, expert_arm, p);
}

std::vector<double> proxy_context(std::span<const std::uint32_t> actions, std::span<const double> rewards,
                                  std::size_t num_arms, ProxyEstimator estimator) {
  if (actions.size() != rewards.size()) throw ContractError("proxy_context: actions/rewards length mismatch");
  std::vector<double> sums(num_arms, 0.0);
  std::vector<std::size_t> pulls(num_arms, 0);
  for (std::size_t j = 0; j < actions.size(); ++j) {
    if (actions[j] >= num_arms) throw IndexError("proxy_context: action out of range");
    sums[actions[j]] += rewards[j];
    ++pulls[actions[j]];
  }
  for (std::size_t i = 0; i < num_arms; ++i) {
    if (estimator == ProxyEstimator::horizon) {
      sums[i] = actions.empty() ? 0.0 : sums[i] / static_cast<double>(actions.size());
    } else {
      sums[i] = pulls[i] == 0 ? 0.0 : sums[i] / static_cast<double>(pulls[i]);
    }
  }
  return sums;
}

Episode generate_episode(const BanditEnv& env, const CollectionPolicyConfig& cfg, Rng& rng,
                         ProxyEstimator estimator) {
  const std::size_t k = env.num_arms(), n = env.horizon();
  Episode ep;
  ep.optimal_arm = static_cast<std::uint32_t>(optimal_arm(env));
  ep.true_means = env.means();
  ep.env_sigma = env.sigma();
  ep.actions.reserve(n);
  ep.rewards.reserve(n);
  ep.action_probs.reserve(n * k);
  for (std::size_t j = 0; j < n; ++j) {
    const auto probs = collection_policy_step(cfg, ep.optimal_arm, k, rng);
    const auto arm = sample_categorical(rng, probs);
    ep.actions.push_back(static_cast<std::uint32_t>(arm));
    ep.rewards.push_back(draw_reward(env, arm, rng));
    ep.action_probs.insert(ep.action_probs.end(), probs.begin(), probs.end());
  }
  ep.proxy_means = proxy_context(ep, estimator);
  return ep;
}

PretrainDataset build_dataset(const GenConfig& config) {
  config.validate();
  PretrainDataset ds;
  ds.config = config;
  ds.episodes.resize(config.num_envs);
  const auto dist = config.env_distribution();
  const auto policy = config.collection_policy();
  const auto count = static_cast<std::ptrdiff_t>(config.num_envs);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    Rng rng = make_rng(config.seed, static_cast<std::uint64_t>(i));
    const BanditEnv env = sample_env(dist, rng);
    ds.episodes[static_cast<std::size_t>(i)] = generate_episode(env, policy, rng, config.proxy_estimator);
  }
  return ds;
}

PretrainDataset build_dataset(const std::string& preset, std::size_t num_envs, std::uint64_t seed) {
  if (num_envs < 1) throw ConfigError("build_dataset: num_envs must be >= 1");
  return build_dataset(preset_config(preset, num_envs, seed));
}

void save_dataset(const PretrainDataset& ds, const std::filesystem::path& path) {
  const std::size_t k = ds.num_arms(), n = ds.horizon();
  io::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(ds.episodes.size()));
  w.u32(static_cast<std::uint32_t>(k));
  w.u32(static_cast<std::uint32_t>(n));
  for (const auto& ep : ds.episodes) {
    if (ep.horizon() != n || ep.num_arms() != k || ep.action_probs.size() != n * k || ep.proxy_means.size() != k) {
      throw ContractError("save_dataset: episode shape differs from the dataset's (K, n)");
    }
    w.u32s(ep.actions);
    w.f64s(ep.rewards);
    w.f64s(ep.action_probs);
    w.u32(ep.optimal_arm);
    w.f64s(ep.true_means);
    w.f64s(ep.proxy_means);
    w.f64(ep.env_sigma);
  }
  io::Container c;
  c.format_version = ds.format_version;
  c.json = ds.config.to_json().dump();
  c.payload = std::move(w.buffer());
  io::write_container(path, {kDatasetMagic, sizeof kDatasetMagic}, c);
}

PretrainDataset load_dataset(const std::filesystem::path& path) {
  const auto c = io::read_container(path, {kDatasetMagic, sizeof kDatasetMagic}, PretrainDataset::kFormatVersion);
  PretrainDataset ds;
  ds.format_version = c.format_version;
  try {
    ds.config = GenConfig::from_json(json::parse(c.json));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad gen_config block: " + e.what());
  }
  io::ByteReader r(c.payload);
  const std::size_t count = r.u32(), k = r.u32(), n = r.u32();
  if (k != ds.config.num_arms || n != ds.config.horizon || count != ds.config.num_envs) {
    throw FormatError(path.string() + ": payload dimensions disagree with gen_config");
  }
  ds.episodes.resize(count);
  for (auto& ep : ds.episodes) {
    ep.actions.resize(n);
    ep.rewards.resize(n);
    ep.action_probs.resize(n * k);
    ep.true_means.resize(k);
    ep.proxy_means.resize(k);
    r.u32s(ep.actions);
    r.f64s(ep.rewards);
    r.f64s(ep.action_probs);
    ep.optimal_arm = r.u32();
    r.f64s(ep.true_means);
    r.f64s(ep.proxy_means);
    ep.env_sigma = r.f64();
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after episodes");
  return ds;
}

}  // namespace pptlab::bandit
