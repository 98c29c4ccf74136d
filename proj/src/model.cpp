#include "pptlab/model.hpp"

#include <algorithm>
#include <cmath>

#include "pptlab/binary_io.hpp"
#include "pptlab/errors.hpp"
#include "pptlab/rng.hpp"

namespace pptlab::models {

using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'P', 'T', 'C', 'K', 'P', 'T', '\0'};

template <class Self, class Fn>
void for_each_tensor(Self& p, Fn&& fn) {
  fn(p.input_weight);
  fn(p.input_bias);
  fn(p.positions);
  for (auto& l : p.layers) {
    fn(l.ln1_gain);
    fn(l.ln1_bias);
    fn(l.qkv_weight);
    fn(l.q_bias);
    fn(l.v_bias);
    fn(l.proj_weight);
    fn(l.proj_bias);
    fn(l.ln2_gain);
    fn(l.ln2_bias);
    fn(l.fc_weight);
    fn(l.fc_bias);
    fn(l.out_weight);
    fn(l.out_bias);
  }
  fn(p.final_gain);
  fn(p.final_bias);
  fn(p.head_weight);
  fn(p.head_bias);
}

}  // namespace

std::string to_string(HeadKind kind) { return kind == HeadKind::action_logits ? "action_logits" : "reward_vector"; }

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "action_logits") return HeadKind::action_logits;
  if (s == "reward_vector") return HeadKind::reward_vector;
  throw ConfigError("head_kind: expected action_logits or reward_vector, got '" + s + "'");
}

std::size_t ModelConfig::feature_dim() const {
  const bool with_predictions = head == HeadKind::action_logits && prediction_inputs;
  return with_predictions ? 2 * num_arms + 1 : num_arms + 1;
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t d = embed_dim, f = feature_dim(), k = num_arms, m = mlp_dim();
  const std::size_t per_layer = 2 * d + (d * 3 * d + 2 * d) + (d * d + d) + 2 * d + (d * m + m) + (m * d + d);
  return f * d + d + max_seq_len * d + num_layers * per_layer + 2 * d + d * k + k;
}

void ModelConfig::validate() const {
  if (embed_dim == 0 || num_layers == 0 || num_heads == 0) {
    throw ConfigError("model: embed_dim, num_layers and num_heads must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("model: embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (num_arms < 1) throw ConfigError("model: num_arms must be >= 1");
  if (max_seq_len < 1) throw ConfigError("model: max_seq_len must be >= 1");
}

json ModelConfig::to_json() const {
  return json{{"embed_dim", embed_dim},   {"num_layers", num_layers},   {"num_heads", num_heads},
              {"num_arms", num_arms},     {"max_seq_len", max_seq_len}, {"head_kind", to_string(head)},
              {"prediction_inputs", prediction_inputs}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config: expected a JSON object");
  static const std::vector<std::string> allowed{"embed_dim", "num_layers",  "num_heads",        "num_arms",
                                                "max_seq_len", "head_kind", "prediction_inputs"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("model config: unknown key '" + key + "'");
    }
  }
  ModelConfig c;
  try {
    if (j.contains("embed_dim")) c.embed_dim = j.at("embed_dim").get<std::size_t>();
    if (j.contains("num_layers")) c.num_layers = j.at("num_layers").get<std::size_t>();
    if (j.contains("num_heads")) c.num_heads = j.at("num_heads").get<std::size_t>();
    if (j.contains("num_arms")) c.num_arms = j.at("num_arms").get<std::size_t>();
    if (j.contains("max_seq_len")) c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
    if (j.contains("head_kind")) c.head = head_kind_from_string(j.at("head_kind").get<std::string>());
    if (j.contains("prediction_inputs")) c.prediction_inputs = j.at("prediction_inputs").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for_each_tensor(*this, [&](Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<const Tensor*> ModelParams::tensors() const {
  std::vector<const Tensor*> out;
  for_each_tensor(*this, [&](const Tensor& t) { out.push_back(&t); });
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

void ModelParams::zero_grad() {
  for (Tensor* t : tensors()) {
    t->ensure_grad();
    t->zero_grad();
  }
}

bool ModelParams::all_finite() const {
  const auto ts = tensors();
  return std::all_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->all_finite(); });
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!(a.config == b.config)) return false;
  const auto ta = a.tensors(), tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (!(*ta[i] == *tb[i])) return false;
  return true;
}

ModelParams make_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.embed_dim, m = cfg.mlp_dim();
  ModelParams p;
  p.config = cfg;
  p.input_weight = Tensor({cfg.feature_dim(), d});
  p.input_bias = Tensor({d});
  p.positions = Tensor({cfg.max_seq_len, d});
  p.layers.resize(cfg.num_layers);
  for (auto& l : p.layers) {
    l.ln1_gain = Tensor({d}, 1.0);
    l.ln1_bias = Tensor({d});
    l.qkv_weight = Tensor({d, 3 * d});
    l.q_bias = Tensor({d});
    l.v_bias = Tensor({d});
    l.proj_weight = Tensor({d, d});
    l.proj_bias = Tensor({d});
    l.ln2_gain = Tensor({d}, 1.0);
    l.ln2_bias = Tensor({d});
    l.fc_weight = Tensor({d, m});
    l.fc_bias = Tensor({m});
    l.out_weight = Tensor({m, d});
    l.out_bias = Tensor({d});
  }
  p.final_gain = Tensor({d}, 1.0);
  p.final_bias = Tensor({d});
  p.head_weight = Tensor({d, cfg.num_arms});
  p.head_bias = Tensor({cfg.num_arms});
  return p;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed, double init_std) {
  ModelParams p = make_params(cfg);
  Rng rng(derive_seed(seed, 0, 0x1417));
  auto fill = [&](Tensor& t) {
    for (auto& v : t.data) v = sample_normal(rng, 0.0, init_std);
  };
  fill(p.input_weight);
  fill(p.positions);
  for (auto& l : p.layers) {
    fill(l.qkv_weight);
    fill(l.proj_weight);
    fill(l.fc_weight);
    fill(l.out_weight);
  }
  fill(p.head_weight);
  return p;
}

// ---- tokens -------------------------------------------------------------------------------

namespace {

void append_step(std::vector<double>& out, std::size_t num_arms, bool has_step, std::uint32_t action, double reward) {
  const std::size_t base = out.size();
  out.resize(base + num_arms + 1, 0.0);
  if (has_step) {
    if (action >= num_arms) throw EncodingError("action " + std::to_string(action) + " out of range");
    out[base + action] = 1.0;
    out[base + num_arms] = reward;
  }
}

}  // namespace

void append_episode_rows(std::vector<double>& out, std::span<const std::uint32_t> actions,
                         std::span<const double> rewards, std::span<const double> predictions,
                         std::size_t num_arms, bool with_predictions) {
  const std::size_t n = actions.size();
  if (rewards.size() != n) throw EncodingError("actions/rewards length mismatch");
  if (with_predictions && predictions.size() != n * num_arms) {
    throw EncodingError("expected " + std::to_string(n) + " prediction rows of width " + std::to_string(num_arms));
  }
  for (std::size_t t = 0; t < n; ++t) {
    append_step(out, num_arms, t > 0, t > 0 ? actions[t - 1] : 0, t > 0 ? rewards[t - 1] : 0.0);
    if (with_predictions) {
      out.insert(out.end(), predictions.begin() + static_cast<std::ptrdiff_t>(t * num_arms),
                 predictions.begin() + static_cast<std::ptrdiff_t>((t + 1) * num_arms));
    }
  }
}

TokenSequence encode_policy_tokens(std::span<const std::uint32_t> actions, std::span<const double> rewards,
                                   std::span<const double> predictions, std::size_t num_arms,
                                   std::size_t max_seq_len) {
  const std::size_t h = actions.size();
  if (rewards.size() != h) throw EncodingError("actions/rewards length mismatch");
  if (predictions.size() != (h + 1) * num_arms) {
    throw EncodingError("policy tokens need " + std::to_string(h + 1) + " predictions for a history of " +
                        std::to_string(h) + " steps, got " + std::to_string(predictions.size() / std::max<std::size_t>(1, num_arms)));
  }
  if (h + 1 > max_seq_len) {
    throw EncodingError(std::to_string(h + 1) + " rows exceed max_seq_len " + std::to_string(max_seq_len));
  }
  TokenSequence seq;
  seq.feature_dim = 2 * num_arms + 1;
  seq.rows.reserve((h + 1) * seq.feature_dim);
  // The query row is the (h+1)-th row; appending a dummy step keeps one code path.
  std::vector<std::uint32_t> a(actions.begin(), actions.end());
  std::vector<double> r(rewards.begin(), rewards.end());
  a.push_back(0);
  r.push_back(0.0);
  append_episode_rows(seq.rows, a, r, predictions, num_arms, true);
  return seq;
}

TokenSequence encode_history_tokens(std::span<const std::uint32_t> actions, std::span<const double> rewards,
                                    std::size_t num_arms, std::size_t max_seq_len) {
  const std::size_t h = actions.size();
  if (rewards.size() != h) throw EncodingError("actions/rewards length mismatch");
  if (h + 1 > max_seq_len) {
    throw EncodingError(std::to_string(h + 1) + " rows exceed max_seq_len " + std::to_string(max_seq_len));
  }
  TokenSequence seq;
  seq.feature_dim = num_arms + 1;
  std::vector<std::uint32_t> a(actions.begin(), actions.end());
  std::vector<double> r(rewards.begin(), rewards.end());
  a.push_back(0);
  r.push_back(0.0);
  append_episode_rows(seq.rows, a, r, {}, num_arms, false);
  return seq;
}

// ---- forward -------------------------------------------------------------------------------

namespace {

template <class Binder>
BoundModel bind_with(const ModelConfig* cfg, ModelParams& p, Binder&& b) {
  BoundModel m;
  m.config = cfg;
  m.input_weight = b(p.input_weight);
  m.input_bias = b(p.input_bias);
  m.positions = b(p.positions);
  for (auto& l : p.layers) {
    m.layers.push_back({b(l.ln1_gain), b(l.ln1_bias), b(l.qkv_weight), b(l.q_bias), b(l.v_bias), b(l.proj_weight),
                        b(l.proj_bias), b(l.ln2_gain), b(l.ln2_bias), b(l.fc_weight), b(l.fc_bias),
                        b(l.out_weight), b(l.out_bias)});
  }
  m.final_gain = b(p.final_gain);
  m.final_bias = b(p.final_bias);
  m.head_weight = b(p.head_weight);
  m.head_bias = b(p.head_bias);
  return m;
}

}  // namespace

BoundModel bind(ad::Tape& tape, ModelParams& params, bool trainable) {
  if (trainable) {
    return bind_with(&params.config, params, [&](Tensor& t) { return tape.parameter(t); });
  }
  return bind_with(&params.config, params, [&](Tensor& t) { return tape.constant(Tensor(t.shape, t.data)); });
}

BoundModel bind_constant(ad::Tape& tape, const ModelParams& params) {
  // Constants copy the data, so the binder never writes through the reference.
  return bind_with(&params.config, const_cast<ModelParams&>(params),
                   [&](Tensor& t) { return tape.constant(Tensor(t.shape, t.data)); });
}

ad::Var forward(const BoundModel& model, const TokenBatch& tokens) {
  const ModelConfig& cfg = *model.config;
  if (tokens.feature_dim != cfg.feature_dim()) {
    throw EncodingError("token width " + std::to_string(tokens.feature_dim) + " != model feature_dim " +
                        std::to_string(cfg.feature_dim()));
  }
  if (tokens.seq > cfg.max_seq_len) {
    throw EncodingError("sequence length " + std::to_string(tokens.seq) + " exceeds max_seq_len " +
                        std::to_string(cfg.max_seq_len));
  }
  const std::size_t rows = tokens.batch * tokens.seq;
  if (tokens.rows.size() != rows * tokens.feature_dim) throw EncodingError("token buffer size mismatch");
  ad::Tape& tape = *model.input_weight.tape;

  ad::Var x = tape.constant(Tensor({rows, tokens.feature_dim}, tokens.rows));
  std::vector<std::size_t> pos(rows);
  for (std::size_t r = 0; r < rows; ++r) pos[r] = r % tokens.seq;
  ad::Var h = ad::add(ad::linear(x, model.input_weight, model.input_bias), ad::gather_rows(model.positions, pos));
  for (const auto& l : model.layers) {
    ad::Var a = ad::layer_norm(h, l.ln1_gain, l.ln1_bias);
    ad::Var qkv = ad::add_bias(ad::add_bias(ad::matmul(a, l.qkv_weight), l.q_bias, 0), l.v_bias, 2 * cfg.embed_dim);
    ad::Var att = ad::causal_attention(qkv, tokens.batch, tokens.seq, cfg.num_heads);
    h = ad::add(h, ad::linear(att, l.proj_weight, l.proj_bias));
    ad::Var m = ad::layer_norm(h, l.ln2_gain, l.ln2_bias);
    ad::Var f = ad::gelu(ad::linear(m, l.fc_weight, l.fc_bias));
    h = ad::add(h, ad::linear(f, l.out_weight, l.out_bias));
  }
  h = ad::layer_norm(h, model.final_gain, model.final_bias);
  return ad::linear(h, model.head_weight, model.head_bias);
}

namespace {

Tensor single_forward(const ModelParams& params, const TokenSequence& tokens) {
  ad::Tape tape;
  const BoundModel m = bind_constant(tape, params);
  TokenBatch batch{1, tokens.length(), tokens.feature_dim, tokens.rows};
  Tensor out = forward(m, batch).value();
  if (!out.all_finite()) throw NumericError("model forward produced non-finite values");
  return out;
}

}  // namespace

Tensor policy_forward(const ModelParams& params, const TokenSequence& tokens) {
  if (params.config.head != HeadKind::action_logits) throw ConfigError("policy_forward: model is not a policy");
  Tensor out = single_forward(params, tokens);
  const std::size_t k = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (auto& v : row) total += (v = std::exp(v - mx));
    for (auto& v : row) v /= total;
  }
  (void)k;
  return out;
}

Tensor predictor_forward(const ModelParams& params, const TokenSequence& tokens) {
  if (params.config.head != HeadKind::reward_vector) throw ConfigError("predictor_forward: model is not a predictor");
  return single_forward(params, tokens);
}

// ---- checkpoints -------------------------------------------------------------------------------

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.u64(params.parameter_count());
  for (const Tensor* t : params.tensors()) w.f64s(t->data);
  io::Container c;
  c.format_version = kCheckpointVersion;
  c.json = params.config.to_json().dump();
  c.payload = std::move(w.buffer());
  io::write_container(path, {kCheckpointMagic, sizeof kCheckpointMagic}, c);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  const auto c = io::read_container(path, {kCheckpointMagic, sizeof kCheckpointMagic}, kCheckpointVersion);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(json::parse(c.json));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad model config block: " + e.what());
  }
  ModelParams p = make_params(cfg);
  io::ByteReader r(c.payload);
  if (r.u64() != p.parameter_count()) throw FormatError(path.string() + ": parameter count mismatch");
  for (Tensor* t : p.tensors()) r.f64s(t->data);
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes");
  return p;
}

}  // namespace pptlab::models
