#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "pptlab/errors.hpp"
#include "pptlab/eval.hpp"
#include "pptlab/kernels.hpp"

using namespace pptlab;
using namespace pptlab::eval;

namespace {

Rollout fixed_rollout(std::vector<double> means, std::vector<std::vector<double>> probs,
                      std::vector<std::vector<double>> predictions = {}) {
  Rollout r;
  r.means = std::move(means);
  for (const auto& p : probs) {
    r.action_probs.insert(r.action_probs.end(), p.begin(), p.end());
    r.actions.push_back(0);
    r.rewards.push_back(0.0);
  }
  for (const auto& c : predictions) r.predictions.insert(r.predictions.end(), c.begin(), c.end());
  return r;
}

// Two envs, three steps; all values dyadic so every sum is exact.
std::vector<Rollout> hand_fixture() {
  return {fixed_rollout({0.25, 0.5, 0.875}, {{0.25, 0.25, 0.5}, {0, 1, 0}, {0, 0, 1}},
                        {{0, 0, 0}, {0.25, 0.5, 0.875}, {0.25, 0.5, 0.375}}),
          fixed_rollout({0.75, 0.125, 0.5}, {{0.5, 0.5, 0}, {0, 0, 1}, {0.25, 0.25, 0.5}},
                        {{0.75, 0.125, 0}, {0.5, 0.125, 0.5}, {1, 0, 0.5}})};
}

models::ModelParams tiny_policy(bool predictions, std::uint64_t seed) {
  models::ModelConfig c;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.num_arms = 3;
  c.max_seq_len = 21;
  c.prediction_inputs = predictions;
  return models::init_params(c, seed, 0.2);
}

models::ModelParams tiny_predictor(std::uint64_t seed) {
  models::ModelConfig c;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.num_arms = 3;
  c.max_seq_len = 21;
  c.head = models::HeadKind::reward_vector;
  c.prediction_inputs = false;
  return models::init_params(c, seed, 0.2);
}

}  // namespace

TEST_CASE("hand-computed metric fixture") {
  const auto rollouts = hand_fixture();
  CHECK(avg_suboptimality(rollouts) == std::vector<double>{0.28125, 0.3125, 0.140625});
  CHECK(avg_regret(rollouts) == std::vector<double>{0.28125, 0.59375, 0.734375});
  CHECK(online_prediction_loss(rollouts) == std::vector<double>{0.6640625, 0.03125, 0.1640625});
  const auto dist = regret_distribution(rollouts);
  CHECK(dist.totals == std::vector<double>{0.625, 0.84375});
  CHECK(dist.histogram.counts.size() == kHistogramBins);
  CHECK(dist.histogram.hi == 0.84375);
  CHECK(dist.histogram.counts.front() == 0);
  CHECK(dist.histogram.counts.back() == 1);
}

TEST_CASE("suboptimality edge cases") {
  const auto best = fixed_rollout({0.2, 0.9}, {{0, 1}, {0, 1}});
  CHECK(avg_suboptimality(std::vector<Rollout>{best}) == std::vector<double>{0.0, 0.0});
  CHECK(avg_regret(std::vector<Rollout>{best}) == std::vector<double>{0.0, 0.0});
  const auto uniform = fixed_rollout({0, 0, 0.6}, {{1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}});
  for (double v : avg_suboptimality(std::vector<Rollout>{uniform})) CHECK(v == doctest::Approx(0.4).epsilon(1e-15));
  CHECK_THROWS_AS(avg_suboptimality(std::vector<Rollout>{}), ContractError);
  CHECK_THROWS_AS(avg_regret(std::vector<Rollout>{}), ContractError);
}

TEST_CASE("online prediction loss") {
  const auto zero = fixed_rollout({1, 0, 0}, {{1, 0, 0}, {1, 0, 0}}, {{0, 0, 0}, {0, 0, 0}});
  CHECK(online_prediction_loss(std::vector<Rollout>{zero}) == std::vector<double>{1.0, 1.0});
  const auto perfect = fixed_rollout({1, 0, 0}, {{1, 0, 0}}, {{1, 0, 0}});
  CHECK(online_prediction_loss(std::vector<Rollout>{perfect}) == std::vector<double>{0.0});
  const auto none = fixed_rollout({1, 0, 0}, {{1, 0, 0}});
  CHECK_THROWS_AS(online_prediction_loss(std::vector<Rollout>{none}), ContractError);
}

TEST_CASE("regret distribution identities on random rollouts") {
  Rng rng(5);
  std::vector<Rollout> rollouts;
  for (int i = 0; i < 37; ++i) {
    const bandit::BanditEnv env({sample_uniform(rng, 0, 1), sample_uniform(rng, 0, 1), sample_uniform(rng, 0, 1)}, 0.5,
                                50);
    rollouts.push_back(i % 2 ? random_rollout(env, 50, rng) : ucb_rollout(env, 1.0, 50, rng));
  }
  const auto sub = avg_suboptimality(rollouts);
  const auto reg = avg_regret(rollouts);
  const auto ps = prefix_sum(sub);
  for (std::size_t t = 0; t < reg.size(); ++t) {
    CHECK(std::abs(reg[t] - ps[t]) < 1e-12);
    CHECK(sub[t] >= 0.0);
    if (t > 0) CHECK(reg[t] >= reg[t - 1]);
  }
  const auto dist = regret_distribution(rollouts);
  CHECK(dist.totals.size() == rollouts.size());
  const double mean = std::accumulate(dist.totals.begin(), dist.totals.end(), 0.0) / 37.0;
  CHECK(std::abs(mean - reg.back()) < 1e-12);
  const auto total_count = std::accumulate(dist.histogram.counts.begin(), dist.histogram.counts.end(), std::size_t{0});
  CHECK(total_count == 37);

  const auto same = make_histogram(std::vector<double>(10, 2.5), kHistogramBins);
  CHECK(std::count_if(same.counts.begin(), same.counts.end(), [](auto c) { return c > 0; }) == 1);
}

TEST_CASE("ucb") {
  Rng rng(1);
  const bandit::BanditEnv env({0.5, 0.9, 0.1}, 0.0, 10);
  const auto r = ucb_rollout(env, 1.0, 10, rng);
  CHECK(std::vector<std::uint32_t>(r.actions.begin(), r.actions.begin() + 4) == std::vector<std::uint32_t>{0, 1, 2, 1});
  for (std::size_t t = 0; t < r.horizon(); ++t) {
    const auto p = r.probs_at(t);
    CHECK(p[r.actions[t]] == 1.0);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == 1.0);
  }
  const bandit::BanditEnv single({0.3}, 1.0, 20);
  const auto one = ucb_rollout(single, 1.0, 20, rng);
  for (auto a : one.actions) CHECK(a == 0);
  CHECK(avg_regret(std::vector<Rollout>{one}).back() == 0.0);
  CHECK_THROWS_AS(ucb_rollout(env, 0.0, 10, rng), ConfigError);
}

TEST_CASE("random baseline") {
  Rng rng(2);
  const bandit::BanditEnv env({0.1, 0.4, 0.7}, 0.3, 10);
  const auto r = random_rollout(env, 10, rng);
  for (std::size_t t = 0; t < 10; ++t)
    for (double p : r.probs_at(t)) CHECK(p == doctest::Approx(1.0 / 3));
  for (double s : avg_suboptimality(std::vector<Rollout>{r})) CHECK(s == doctest::Approx(0.7 - 0.4));
  CHECK(random_rollout(env, 0, rng).horizon() == 0);
}

TEST_CASE("deploy") {
  const auto policy = tiny_policy(true, 3);
  const auto predictor = tiny_predictor(4);
  const bandit::BanditEnv env({0.2, 0.4, 0.6}, 0.5, 20);
  Rng rng(5);

  const auto one = deploy(policy, &predictor, env, 1, rng);
  CHECK(one.horizon() == 1);
  CHECK(one.predictions.size() == 3);
  // first decision sees only the query row
  const auto c1 = models::predictor_forward(predictor, models::encode_history_tokens({}, {}, 3, 21));
  const auto p1 = models::policy_forward(policy, models::encode_policy_tokens({}, {}, c1.data, 3, 21));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(one.predictions[k] - c1.data[k]) < 1e-12);
    CHECK(std::abs(one.action_probs[k] - p1.data[k]) < 1e-12);
  }

  const auto full = deploy(policy, &predictor, env, 20, rng);
  for (std::size_t t = 0; t < 20; ++t) {
    const auto p = full.probs_at(t);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-12);
  }

  auto greedy_policy = tiny_policy(false, 6);
  greedy_policy.head_bias.data = {0.0, 0.0, 50.0};
  const auto g = deploy(greedy_policy, nullptr, env, 20, rng, ActionMode::greedy);
  for (auto a : g.actions) CHECK(a == 2);
  CHECK(g.predictions.empty());

  const bandit::BanditEnv four({0.1, 0.2, 0.3, 0.4}, 0.1, 5);
  CHECK_THROWS_AS(deploy(policy, &predictor, four, 5, rng), ConfigError);
  CHECK_THROWS_AS(deploy(policy, nullptr, env, 5, rng), ConfigError);
  CHECK_THROWS_AS(deploy(policy, &predictor, env, 22, rng), ConfigError);
}

TEST_CASE("deployment replays the history the models were trained on") {
  // The rollout's own actions/rewards, re-encoded offline, give the same distributions.
  const auto policy = tiny_policy(true, 7);
  const auto predictor = tiny_predictor(8);
  const bandit::BanditEnv env({0.2, 0.4, 0.6}, 0.5, 12);
  Rng rng(9);
  const auto r = deploy(policy, &predictor, env, 12, rng);
  const auto preds = models::predictor_forward(
      predictor, models::encode_history_tokens(std::span(r.actions).first(11), std::span(r.rewards).first(11), 3, 21));
  const auto probs = models::policy_forward(
      policy, models::encode_policy_tokens(std::span(r.actions).first(11), std::span(r.rewards).first(11), preds.data,
                                           3, 21));
  for (std::size_t i = 0; i < 36; ++i) {
    CHECK(std::abs(preds.data[i] - r.predictions[i]) < 1e-12);
    CHECK(std::abs(probs.data[i] - r.action_probs[i]) < 1e-12);
  }
}

TEST_CASE("degradation delta") {
  const std::map<double, std::vector<double>> curves{{0.3, {1.0, 2.0}}, {0.9, {1.5, 3.5}}};
  CHECK(degradation_delta(curves, 0.3, 0.3, 1) == 0.0);
  CHECK(degradation_delta(curves, 0.9, 0.3, 1) == 1.5);
  CHECK(degradation_delta(curves, 0.9, 0.3, 0) == -degradation_delta(curves, 0.3, 0.9, 0));
  CHECK_THROWS_AS(degradation_delta(curves, 0.5, 0.3, 1), ContractError);
}

TEST_CASE("sweeps are paired, reproducible and thread-count independent") {
  SweepConfig cfg;
  cfg.num_envs = 40;
  cfg.horizon = 20;
  cfg.seed = 11;
  cfg.sigma2_list = {0.3, 0.9};
  const auto lo = sweep_envs(cfg, 0.3), hi = sweep_envs(cfg, 0.9);
  for (std::size_t i = 0; i < lo.size(); ++i) {
    CHECK(lo[i].means() == hi[i].means());
    CHECK(hi[i].variance() == doctest::Approx(0.9));
  }
  CHECK(cfg.to_json().at("num_envs") == 40);
  CHECK(SweepConfig::from_json(cfg.to_json()) == cfg);
  CHECK(SweepConfig{} .sigma2_list == std::vector<double>{0.3, 0.5, 0.9});
  CHECK(SweepConfig{}.num_envs == 1000);

  Algorithm ppt;
  ppt.name = "ppt";
  ppt.kind = Algorithm::Kind::learned;
  ppt.policy = std::make_shared<models::ModelParams>(tiny_policy(true, 12));
  ppt.predictor = std::make_shared<models::ModelParams>(tiny_predictor(13));
  const std::vector<Algorithm> algos{ppt, Algorithm::ucb(), Algorithm::uniform_random()};

  kernels::set_num_threads(1);
  const auto a = run_sweep(algos, cfg);
  kernels::set_num_threads(4);
  const auto b = run_sweep(algos, cfg);
  kernels::set_num_threads(0);
  REQUIRE(a.cells.size() == 6);
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(a.cells[i].regret == b.cells[i].regret);
    CHECK(a.cells[i].totals == b.cells[i].totals);
  }
  CHECK(a.cell("ppt", 0.3).prediction_loss.has_value());
  CHECK(!a.cell("ucb", 0.3).prediction_loss.has_value());

  const auto dir = std::filesystem::temp_directory_path() / "pptlab_tests" / "report";
  std::filesystem::remove_all(dir);
  save_report(a, dir);
  const auto loaded = load_report(dir);
  CHECK(loaded.config == a.config);
  REQUIRE(loaded.cells.size() == a.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(loaded.cells[i].algo == a.cells[i].algo);
    CHECK(loaded.cells[i].regret == a.cells[i].regret);
    CHECK(loaded.cells[i].suboptimality == a.cells[i].suboptimality);
    CHECK(loaded.cells[i].totals == a.cells[i].totals);
    CHECK(loaded.cells[i].prediction_loss == a.cells[i].prediction_loss);
  }
  CHECK(std::filesystem::exists(dir / "ppt" / "sigma2_0.3" / "curves.csv"));
  CHECK(std::filesystem::exists(dir / "ucb" / "sigma2_0.9" / "totals.csv"));
}
