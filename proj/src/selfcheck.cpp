#include "pptlab/selfcheck.hpp"

#include <functional>

#include "pptlab/autodiff.hpp"
#include "pptlab/bandit.hpp"
#include "pptlab/gradcheck.hpp"
#include "pptlab/model.hpp"
#include "pptlab/rng.hpp"
#include "pptlab/training.hpp"

namespace pptlab {

using namespace ad;

namespace {

constexpr double kPrimitiveTol = 1e-6;
constexpr double kObjectiveTol = 1e-4;
// Truncation error grows as eps^2, roundoff as 1/eps.
constexpr double kPrimitiveEps = 1e-4;
constexpr double kObjectiveEps = 1e-4;

Tensor randn(Shape shape, std::uint64_t seed, double scale = 1.0, double shift = 0.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& x : t.data) x = shift + scale * sample_normal(rng, 0.0, 1.0);
  return t;
}

Var weighted_sum(Var y, std::uint64_t seed) { return sum(mul_const(y, randn(y.shape(), seed))); }

using Op = std::function<Var(std::vector<Var>&)>;

double check(std::vector<Tensor> inputs, const Op& op) {
  std::vector<Tensor*> params;
  for (auto& t : inputs) params.push_back(&t);
  Objective f = [&](Tape& tape, std::vector<Tensor*>& ps) {
    std::vector<Var> vars;
    for (auto* p : ps) vars.push_back(tape.parameter(*p));
    return op(vars);
  };
  return grad_check(f, params, kPrimitiveEps).max_relative_error;
}

models::ModelConfig tiny(models::HeadKind head, bool predictions) {
  models::ModelConfig c;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.num_arms = 3;
  c.max_seq_len = 5;
  c.head = head;
  c.prediction_inputs = predictions;
  return c;
}

double check_model(models::ModelParams& params, const std::function<Var(Tape&, models::ModelParams&)>& loss) {
  Objective f = [&](Tape& tape, std::vector<Tensor*>&) { return loss(tape, params); };
  return grad_check(f, params.tensors(), kObjectiveEps).max_relative_error;
}

}  // namespace

std::vector<CheckOutcome> primitive_gradient_checks() {
  const Tensor a = randn({3, 4}, 1), b = randn({3, 4}, 2), w = randn({4, 5}, 3), bias = randn({5}, 4);
  const Tensor row_bias = randn({4}, 5), gain = randn({4}, 7, 0.3, 1.0);
  const Tensor positive = randn({3, 4}, 6, 0.2, 2.0), weights = randn({3, 4}, 8);
  const Tensor qkv = randn({2 * 5, 3 * 4}, 10);
  const std::vector<std::size_t> rows{2, 0, 2, 1, 1}, cols{3, 0, 2}, targets{1, 3, 0};

  std::vector<CheckOutcome> out;
  auto add_check = [&](std::string name, std::vector<Tensor> in, const Op& op) {
    out.push_back({std::move(name), check(std::move(in), op), kPrimitiveTol});
  };
  add_check("add", {a, b}, [](auto& v) { return weighted_sum(add(v[0], v[1]), 9); });
  add_check("sub", {a, b}, [](auto& v) { return weighted_sum(sub(v[0], v[1]), 9); });
  add_check("mul", {a, b}, [](auto& v) { return weighted_sum(mul(v[0], v[1]), 9); });
  add_check("scale", {a}, [](auto& v) { return weighted_sum(scale(v[0], -1.7), 9); });
  add_check("add_bias", {a, row_bias}, [](auto& v) { return weighted_sum(add_bias(v[0], v[1]), 9); });
  add_check("add_bias_offset", {a, randn({2}, 11)}, [](auto& v) { return weighted_sum(add_bias(v[0], v[1], 1), 9); });
  add_check("matmul", {a, w}, [](auto& v) { return weighted_sum(matmul(v[0], v[1]), 9); });
  add_check("linear", {a, w, bias}, [](auto& v) { return weighted_sum(linear(v[0], v[1], v[2]), 9); });
  add_check("mul_const", {a}, [&](auto& v) { return weighted_sum(mul_const(v[0], weights), 9); });
  add_check("exp", {a}, [](auto& v) { return weighted_sum(exp(v[0]), 9); });
  add_check("log", {positive}, [](auto& v) { return weighted_sum(log(v[0]), 9); });
  add_check("square", {a}, [](auto& v) { return weighted_sum(square(v[0]), 9); });
  add_check("gelu", {a}, [](auto& v) { return weighted_sum(gelu(v[0]), 9); });
  add_check("sum", {a}, [](auto& v) { return sum(square(v[0])); });
  add_check("mean", {a}, [](auto& v) { return mean(exp(v[0])); });
  add_check("softmax", {a}, [](auto& v) { return weighted_sum(softmax(v[0]), 9); });
  add_check("log_softmax", {a}, [](auto& v) { return weighted_sum(log_softmax(v[0]), 9); });
  add_check("layer_norm", {a, gain, row_bias}, [](auto& v) { return weighted_sum(layer_norm(v[0], v[1], v[2]), 9); });
  add_check("causal_attention", {qkv}, [](auto& v) { return weighted_sum(causal_attention(v[0], 2, 5, 2), 9); });
  add_check("gather_rows", {a}, [&](auto& v) { return weighted_sum(gather_rows(v[0], rows), 9); });
  add_check("pick", {a}, [&](auto& v) { return weighted_sum(pick(v[0], cols), 9); });
  add_check("cross_entropy", {a}, [&](auto& v) { return cross_entropy(v[0], targets); });
  add_check("squared_error", {a}, [&](auto& v) { return squared_error(v[0], b); });
  return out;
}

std::vector<CheckOutcome> objective_gradient_checks() {
  using namespace training;
  auto gen = bandit::preset_config("ideal", 3, 17);
  gen.horizon = 4;
  const auto ds = bandit::build_dataset(gen);
  const auto batch = EpisodeBatch::of(ds.episodes);

  auto predictor = models::init_params(tiny(models::HeadKind::reward_vector, false), 3, 0.3);
  auto policy = models::init_params(tiny(models::HeadKind::action_logits, true), 4, 0.3);
  auto dpt = models::init_params(tiny(models::HeadKind::action_logits, false), 5, 0.3);
  const Tensor predictions = predict_contexts(predictor, batch);
  const Tensor curiosity = curiosity_matrix(predictions, context_targets(batch, ContextMode::ground_truth));

  std::vector<CheckOutcome> out;
  out.push_back({"ppt_policy_loss", check_model(policy, [&](Tape& t, models::ModelParams& p) {
                   return ppt_objective(t, p, batch, predictions, curiosity, 200.0).total;
                 }),
                 kObjectiveTol});
  out.push_back({"predictor_loss", check_model(predictor, [&](Tape& t, models::ModelParams& p) {
                   return predictor_objective(t, p, batch, ContextMode::ground_truth);
                 }),
                 kObjectiveTol});
  out.push_back({"dpt_loss",
                 check_model(dpt, [&](Tape& t, models::ModelParams& p) { return dpt_objective(t, p, batch); }),
                 kObjectiveTol});
  return out;
}

}  // namespace pptlab
