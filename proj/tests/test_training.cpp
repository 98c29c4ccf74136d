#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pptlab/errors.hpp"
#include "pptlab/training.hpp"

using namespace pptlab;
using namespace pptlab::training;
using models::HeadKind;
using models::ModelConfig;

namespace {

ModelConfig tiny(HeadKind head, bool predictions, std::size_t max_seq = 101) {
  ModelConfig c;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.num_arms = 3;
  c.max_seq_len = max_seq;
  c.head = head;
  c.prediction_inputs = predictions;
  return c;
}

bandit::Episode constant_episode(std::size_t n, std::uint32_t best, std::vector<double> means) {
  bandit::Episode ep;
  for (std::size_t j = 0; j < n; ++j) {
    ep.actions.push_back(static_cast<std::uint32_t>(j % 3));
    ep.rewards.push_back(0.1 * static_cast<double>(j));
    ep.action_probs.insert(ep.action_probs.end(), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  }
  ep.optimal_arm = best;
  ep.true_means = std::move(means);
  ep.proxy_means = bandit::proxy_context(ep);
  ep.env_sigma = 0.3;
  return ep;
}

bandit::PretrainDataset small_dataset(std::size_t n_envs, std::size_t horizon, std::uint64_t seed) {
  auto cfg = bandit::preset_config("ideal", n_envs, seed);
  cfg.horizon = horizon;
  return bandit::build_dataset(cfg);
}

void zero_head(models::ModelParams& p) {
  p.head_weight.data.assign(p.head_weight.size(), 0.0);
  p.head_bias.data.assign(p.head_bias.size(), 0.0);
}

}  // namespace

TEST_CASE("dpt loss limits") {
  std::vector<bandit::Episode> eps{constant_episode(100, 1, {0.1, 0.9, 0.2}), constant_episode(100, 1, {0.3, 0.8, 0.1})};
  const auto batch = EpisodeBatch::of(eps);
  auto policy = models::init_params(tiny(HeadKind::action_logits, false), 1);

  zero_head(policy);
  const auto uniform = dpt_loss(policy, batch);
  CHECK(uniform.total == doctest::Approx(100 * std::log(3.0)).epsilon(1e-12));

  policy.head_bias.data = {0.0, 1000.0, 0.0};
  CHECK(dpt_loss(policy, batch).total == 0.0);
}

TEST_CASE("predictor loss arithmetic") {
  std::vector<bandit::Episode> eps{constant_episode(2, 0, {0.5, 0.5, 0.5})};
  const auto batch = EpisodeBatch::of(eps);
  auto predictor = models::init_params(tiny(HeadKind::reward_vector, false), 2);
  zero_head(predictor);
  CHECK(predictor_loss(predictor, batch, ContextMode::ground_truth).value == doctest::Approx(1.5).epsilon(1e-15));

  predictor.head_bias.data = {0.5, 0.5, 0.5};
  CHECK(predictor_loss(predictor, batch, ContextMode::ground_truth).value == 0.0);

  // proxy targets come from the episode's offline estimate
  predictor.head_bias.data = eps[0].proxy_means;
  CHECK(predictor_loss(predictor, batch, ContextMode::proxy).value == 0.0);
}

TEST_CASE("curiosity vector") {
  const auto e = curiosity_vector(std::vector<double>{0.5, 0.5, 0.5}, std::vector<double>{0.5, 0.7, 0.1});
  CHECK(e[0] == 0.0);
  CHECK(e[1] == doctest::Approx(0.04).epsilon(1e-14));
  CHECK(e[2] == doctest::Approx(0.16).epsilon(1e-14));
  const std::vector<double> a{0.3, -1.2, 4.0}, b{1.0, 0.5, -2.0}, na{-0.3, 1.2, -4.0}, nb{-1.0, -0.5, 2.0};
  CHECK(curiosity_vector(a, a) == std::vector<double>(3, 0.0));
  CHECK(curiosity_vector(a, b) == curiosity_vector(na, nb));
  CHECK_THROWS_AS(curiosity_vector(a, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("ppt loss with lambda 0 is the NLL of the augmented policy") {
  const auto ds = small_dataset(8, 6, 3);
  const auto batch = EpisodeBatch::of(ds.episodes);
  auto policy = models::init_params(tiny(HeadKind::action_logits, true), 4, 0.2);
  const auto predictor = models::init_params(tiny(HeadKind::reward_vector, false), 5, 0.2);
  const Tensor predictions = predict_contexts(predictor, batch);
  const Tensor curiosity = curiosity_matrix(predictions, context_targets(batch, ContextMode::ground_truth));

  const auto ppt = ppt_policy_loss(policy, batch, predictions, curiosity, 0.0);
  const auto dpt = dpt_loss(policy, batch, &predictions);
  CHECK(std::abs(ppt.total - ppt.nll) < 1e-12);
  CHECK(std::abs(ppt.total - dpt.total) < 1e-12);

  const Tensor no_curiosity(curiosity.shape, 0.0);
  const auto flat = ppt_policy_loss(policy, batch, predictions, no_curiosity, 500.0);
  CHECK(flat.total == flat.nll);

  const auto with = ppt_policy_loss(policy, batch, predictions, curiosity, 200.0);
  CHECK(with.curiosity >= 0.0);
  CHECK(with.total == doctest::Approx(with.nll - 200.0 * with.curiosity).epsilon(1e-12));
}

TEST_CASE("policy and predictor gradients stay separate") {
  const auto ds = small_dataset(4, 5, 6);
  const auto batch = EpisodeBatch::of(ds.episodes);
  auto policy = models::init_params(tiny(HeadKind::action_logits, true), 7, 0.2);
  auto predictor = models::init_params(tiny(HeadKind::reward_vector, false), 8, 0.2);

  predictor.zero_grad();
  policy.zero_grad();
  ppt_policy_loss(policy, predictor, batch, 200.0, ContextMode::ground_truth);
  for (const Tensor* t : predictor.tensors()) CHECK(t->grad == std::vector<double>(t->size(), 0.0));
  bool policy_touched = false;
  for (const Tensor* t : policy.tensors())
    for (double g : t->grad) policy_touched |= g != 0.0;
  CHECK(policy_touched);

  policy.zero_grad();
  predictor_loss(predictor, batch, ContextMode::ground_truth);
  for (const Tensor* t : policy.tensors()) CHECK(t->grad == std::vector<double>(t->size(), 0.0));
}

TEST_CASE("train config json and validation") {
  TrainConfig cfg;
  cfg.lambda = 500;
  cfg.context_mode = ContextMode::proxy;
  CHECK(TrainConfig::from_json(cfg.to_json()) == cfg);
  auto j = cfg.to_json();
  j["lamda"] = 1;
  CHECK_THROWS_AS(TrainConfig::from_json(j), ConfigError);
  cfg.lambda = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lambda = 0;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("training is reproducible and logs every step") {
  const auto ds = small_dataset(40, 10, 9);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.steps = 12;
  cfg.seed = 3;
  const auto pc = tiny(HeadKind::action_logits, true, 11);
  const auto qc = tiny(HeadKind::reward_vector, false, 11);
  const auto a = train(ds, pc, qc, cfg);
  const auto b = train(ds, pc, qc, cfg);
  CHECK(a.policy == b.policy);
  CHECK(*a.predictor == *b.predictor);
  REQUIRE(a.log.rows.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(a.log.rows[i].step == i + 1);
    CHECK(a.log.rows[i].nll_term == b.log.rows[i].nll_term);
    CHECK(a.log.rows[i].nll_term >= 0.0);
    CHECK(a.log.rows[i].curiosity_term >= 0.0);
    CHECK(*a.log.rows[i].predictor_loss >= 0.0);
  }
}

TEST_CASE("frozen predictor is never updated") {
  const auto ds = small_dataset(16, 8, 10);
  const auto qc = tiny(HeadKind::reward_vector, false, 9);
  const auto frozen = models::init_params(qc, 11);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.steps = 5;
  cfg.predictor_mode = PredictorMode::pretrained_frozen;
  const auto r = train(ds, tiny(HeadKind::action_logits, true, 9), qc, cfg, &frozen);
  CHECK(*r.predictor == frozen);
  CHECK_THROWS_AS(train(ds, tiny(HeadKind::action_logits, true, 9), qc, cfg), ConfigError);
}

TEST_CASE("dpt training has no predictor") {
  const auto ds = small_dataset(16, 8, 12);
  TrainConfig cfg;
  cfg.algo = Algo::dpt;
  cfg.batch_size = 4;
  cfg.steps = 3;
  const auto r = train(ds, tiny(HeadKind::action_logits, false, 9), tiny(HeadKind::reward_vector, false, 9), cfg);
  CHECK(!r.predictor);
  CHECK(!r.log.rows[0].predictor_loss);
  CHECK_THROWS_AS(train(ds, tiny(HeadKind::action_logits, true, 9), tiny(HeadKind::reward_vector, false, 9), cfg),
                  ConfigError);
}

TEST_CASE("mismatched model configs are rejected") {
  const auto ds = small_dataset(4, 8, 13);
  TrainConfig cfg;
  CHECK_THROWS_AS(train(ds, tiny(HeadKind::action_logits, true, 5), tiny(HeadKind::reward_vector, false, 9), cfg),
                  ConfigError);
}

TEST_CASE("divergence guard restores the last checkpoint") {
  const auto ds = small_dataset(16, 8, 14);
  TrainConfig cfg;
  cfg.algo = Algo::dpt;
  cfg.batch_size = 4;
  cfg.steps = 20;
  cfg.learning_rate = 1e-2;
  cfg.divergence_factor = 1e-3;  // every loss counts as divergent
  cfg.divergence_window = 3;
  cfg.checkpoint_every = 1;
  std::vector<std::size_t> checkpoints;
  TrainHooks hooks;
  models::ModelParams last;
  hooks.on_checkpoint = [&](std::size_t step, const models::ModelParams& p, const models::ModelParams*) {
    checkpoints.push_back(step);
    last = p;
  };
  const auto pc = tiny(HeadKind::action_logits, false, 9);
  const auto r = train(ds, pc, tiny(HeadKind::reward_vector, false, 9), cfg, nullptr, hooks);
  CHECK(r.diverged);
  CHECK(r.steps_done == 2);
  CHECK(checkpoints == std::vector<std::size_t>{1, 2});
  CHECK(r.policy == last);
}

TEST_CASE("predictor loss falls across epochs on the ideal data") {
  const auto ds = small_dataset(64, 20, 15);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.steps = 4 * 6;  // 6 epochs of 4 batches
  cfg.learning_rate = 3e-3;
  cfg.seed = 1;
  const auto r = train(ds, tiny(HeadKind::action_logits, true, 21), tiny(HeadKind::reward_vector, false, 21), cfg);
  std::vector<double> epoch_avg;
  for (std::size_t e = 0; e < 6; ++e) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += *r.log.rows[e * 4 + i].predictor_loss;
    epoch_avg.push_back(s / 4);
  }
  for (std::size_t e = 1; e < epoch_avg.size(); ++e) {
    CAPTURE(e);
    CHECK(epoch_avg[e] < epoch_avg[e - 1]);
  }
}
