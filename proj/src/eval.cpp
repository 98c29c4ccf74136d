#include "pptlab/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pptlab/binary_io.hpp"
#include "pptlab/errors.hpp"
#include "pptlab/inference.hpp"
#include "pptlab/text.hpp"

namespace pptlab::eval {

using nlohmann::json;

double Rollout::suboptimality_at(std::size_t t) const {
  const double best = *std::max_element(means.begin(), means.end());
  const auto p = probs_at(t);
  double expected = 0.0;
  for (std::size_t a = 0; a < means.size(); ++a) expected += p[a] * means[a];
  return best - expected;
}

std::string to_string(ActionMode m) { return m == ActionMode::sample ? "sample" : "greedy"; }

ActionMode action_mode_from_string(const std::string& s) {
  if (s == "sample") return ActionMode::sample;
  if (s == "greedy") return ActionMode::greedy;
  throw ConfigError("action mode: expected sample or greedy, got '" + s + "'");
}

namespace {

Rollout start_rollout(const bandit::BanditEnv& env, std::size_t horizon) {
  Rollout r;
  r.means = env.means();
  r.sigma = env.sigma();
  r.actions.reserve(horizon);
  r.rewards.reserve(horizon);
  r.action_probs.reserve(horizon * env.num_arms());
  return r;
}

void record_step(Rollout& r, std::span<const double> probs, std::size_t action, double reward) {
  r.action_probs.insert(r.action_probs.end(), probs.begin(), probs.end());
  r.actions.push_back(static_cast<std::uint32_t>(action));
  r.rewards.push_back(reward);
}

}  // namespace

Rollout deploy(const models::ModelParams& policy, const models::ModelParams* predictor, const bandit::BanditEnv& env,
               std::size_t horizon, Rng& rng, ActionMode mode) {
  const std::size_t k = env.num_arms();
  if (policy.config.num_arms != k || policy.config.head != models::HeadKind::action_logits) {
    throw ConfigError("deploy: policy expects K=" + std::to_string(policy.config.num_arms) + ", env has K=" +
                      std::to_string(k));
  }
  if (predictor != nullptr &&
      (predictor->config.num_arms != k || predictor->config.head != models::HeadKind::reward_vector)) {
    throw ConfigError("deploy: predictor K=" + std::to_string(predictor->config.num_arms) + " does not match env K=" +
                      std::to_string(k));
  }
  const bool with_predictions = policy.config.prediction_inputs;
  if (with_predictions && predictor == nullptr) throw ConfigError("deploy: this policy needs a predictor");
  if (horizon > policy.config.max_seq_len || (predictor != nullptr && horizon > predictor->config.max_seq_len)) {
    throw ConfigError("deploy: horizon " + std::to_string(horizon) + " exceeds the models' max_seq_len");
  }

  models::IncrementalModel pol(policy);
  std::optional<models::IncrementalModel> pred;
  if (predictor != nullptr) pred.emplace(*predictor);

  Rollout out = start_rollout(env, horizon);
  std::vector<double> history_row(k + 1, 0.0);
  std::vector<double> policy_row;
  std::vector<double> probs(k);
  for (std::size_t j = 0; j < horizon; ++j) {
    policy_row.assign(history_row.begin(), history_row.end());
    if (pred) {
      const auto c = pred->push(history_row);
      out.predictions.insert(out.predictions.end(), c.begin(), c.end());
      if (with_predictions) policy_row.insert(policy_row.end(), c.begin(), c.end());
    }
    const auto logits = pol.push(policy_row);
    std::copy(logits.begin(), logits.end(), probs.begin());
    models::softmax_inplace(probs);
    const std::size_t action =
        mode == ActionMode::sample ? sample_categorical(rng, probs) : bandit::optimal_arm(probs);
    const double reward = bandit::draw_reward(env, action, rng);
    record_step(out, probs, action, reward);
    std::fill(history_row.begin(), history_row.end(), 0.0);
    history_row[action] = 1.0;
    history_row[k] = reward;
  }
  return out;
}

Rollout ucb_rollout(const bandit::BanditEnv& env, double beta, std::size_t horizon, Rng& rng) {
  if (!(beta > 0.0)) throw ConfigError("ucb: beta must be > 0");
  const std::size_t k = env.num_arms();
  Rollout out = start_rollout(env, horizon);
  std::vector<double> sums(k, 0.0);
  std::vector<std::size_t> pulls(k, 0);
  std::vector<double> one_hot(k);
  for (std::size_t t = 0; t < horizon; ++t) {
    std::size_t action = 0;
    if (t < k) {
      action = t;
    } else {
      double best = -INFINITY;
      for (std::size_t a = 0; a < k; ++a) {
        const double score =
            sums[a] / static_cast<double>(pulls[a]) + beta * std::sqrt(1.0 / static_cast<double>(pulls[a]));
        if (score > best) {
          best = score;
          action = a;
        }
      }
    }
    const double reward = bandit::draw_reward(env, action, rng);
    sums[action] += reward;
    ++pulls[action];
    std::fill(one_hot.begin(), one_hot.end(), 0.0);
    one_hot[action] = 1.0;
    record_step(out, one_hot, action, reward);
  }
  return out;
}

Rollout random_rollout(const bandit::BanditEnv& env, std::size_t horizon, Rng& rng) {
  const std::size_t k = env.num_arms();
  Rollout out = start_rollout(env, horizon);
  const std::vector<double> uniform(k, 1.0 / static_cast<double>(k));
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  for (std::size_t t = 0; t < horizon; ++t) {
    const std::size_t action = pick(rng);
    record_step(out, uniform, action, bandit::draw_reward(env, action, rng));
  }
  return out;
}

// ---- metrics ----------------------------------------------------------------------------------

namespace {

std::size_t common_horizon(std::span<const Rollout> rollouts, const char* what) {
  if (rollouts.empty()) throw ContractError(std::string(what) + ": no rollouts");
  const std::size_t n = rollouts.front().horizon();
  for (const auto& r : rollouts) {
    if (r.horizon() != n) throw ContractError(std::string(what) + ": rollouts differ in horizon");
  }
  return n;
}

}  // namespace

std::vector<double> avg_suboptimality(std::span<const Rollout> rollouts) {
  const std::size_t n = common_horizon(rollouts, "avg_suboptimality");
  std::vector<double> curve(n, 0.0);
  for (const auto& r : rollouts)
    for (std::size_t t = 0; t < n; ++t) curve[t] += r.suboptimality_at(t);
  for (auto& v : curve) v /= static_cast<double>(rollouts.size());
  return curve;
}

std::vector<double> prefix_sum(std::span<const double> v) {
  std::vector<double> out(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (acc += v[i]);
  return out;
}

std::vector<double> avg_regret(std::span<const Rollout> rollouts) { return prefix_sum(avg_suboptimality(rollouts)); }

Histogram make_histogram(std::span<const double> values, std::size_t bins) {
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty() || bins == 0) return h;
  h.hi = *std::max_element(values.begin(), values.end());
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double v : values) {
    std::size_t b = 0;
    if (width > 0.0) b = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, (v - h.lo) / width)));
    ++h.counts[b];
  }
  return h;
}

RegretDistribution regret_distribution(std::span<const Rollout> rollouts) {
  RegretDistribution d;
  d.totals.reserve(rollouts.size());
  for (const auto& r : rollouts) {
    double total = 0.0;
    for (std::size_t t = 0; t < r.horizon(); ++t) total += r.suboptimality_at(t);
    d.totals.push_back(total);
  }
  d.histogram = make_histogram(d.totals, kHistogramBins);
  return d;
}

std::vector<double> online_prediction_loss(std::span<const Rollout> rollouts) {
  const std::size_t n = common_horizon(rollouts, "online_prediction_loss");
  std::vector<double> curve(n, 0.0);
  for (const auto& r : rollouts) {
    const std::size_t k = r.num_arms();
    if (r.predictions.size() != n * k) throw ContractError("online_prediction_loss: rollout has no predictions");
    for (std::size_t t = 0; t < n; ++t) {
      double se = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        const double d = r.predictions[t * k + a] - r.means[a];
        se += d * d;
      }
      curve[t] += se;
    }
  }
  for (auto& v : curve) v /= static_cast<double>(rollouts.size());
  return curve;
}

double degradation_delta(const std::map<double, std::vector<double>>& curves, double sigma2, double sigma2_base,
                         std::size_t t) {
  const auto hi = curves.find(sigma2);
  const auto lo = curves.find(sigma2_base);
  if (hi == curves.end() || lo == curves.end()) {
    throw ContractError("degradation_delta: sigma2 level " + fmt_label(hi == curves.end() ? sigma2 : sigma2_base) +
                        " was not evaluated");
  }
  if (t >= hi->second.size() || t >= lo->second.size()) throw IndexError("degradation_delta: t beyond horizon");
  return hi->second[t] - lo->second[t];
}

// ---- sweeps -----------------------------------------------------------------------------------

Algorithm Algorithm::ucb(double beta) {
  Algorithm a;
  a.name = "ucb";
  a.kind = Kind::ucb;
  a.beta = beta;
  return a;
}

Algorithm Algorithm::uniform_random() {
  Algorithm a;
  a.name = "random";
  a.kind = Kind::random;
  return a;
}

void SweepConfig::validate() const {
  if (sigma2_list.empty()) throw ConfigError("eval: sigma2_list is empty");
  for (double s : sigma2_list) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("eval: sigma2 values must be finite and >= 0");
  }
  if (num_envs < 1) throw ConfigError("eval: num_envs must be >= 1");
  if (num_arms < 1) throw ConfigError("eval: num_arms must be >= 1");
  if (!(ucb_beta > 0.0)) throw ConfigError("eval: ucb_beta must be > 0");
}

json SweepConfig::to_json() const {
  return json{{"sigma2_list", sigma2_list}, {"num_envs", num_envs},  {"seed", seed},
              {"horizon", horizon},         {"num_arms", num_arms},  {"mode", to_string(mode)},
              {"ucb_beta", ucb_beta}};
}

SweepConfig SweepConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("eval: expected a JSON object");
  SweepConfig c;
  const json defaults = c.to_json();
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("eval: unknown key '" + key + "'");
  }
  try {
    if (j.contains("sigma2_list")) c.sigma2_list = j.at("sigma2_list").get<std::vector<double>>();
    if (j.contains("num_envs")) c.num_envs = j.at("num_envs").get<std::size_t>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("horizon")) c.horizon = j.at("horizon").get<std::size_t>();
    if (j.contains("num_arms")) c.num_arms = j.at("num_arms").get<std::size_t>();
    if (j.contains("mode")) c.mode = action_mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("ucb_beta")) c.ucb_beta = j.at("ucb_beta").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("eval: ") + e.what());
  }
  return c;
}

const CellResult& EvalReport::cell(const std::string& algo, double sigma2) const {
  for (const auto& c : cells)
    if (c.algo == algo && c.sigma2 == sigma2) return c;
  throw ContractError("report has no cell for " + algo + " at sigma2=" + fmt_label(sigma2));
}

std::map<double, std::vector<double>> EvalReport::curves(const std::string& algo, const std::string& metric) const {
  std::map<double, std::vector<double>> out;
  for (const auto& c : cells) {
    if (c.algo != algo) continue;
    if (metric == "regret") out[c.sigma2] = c.regret;
    else if (metric == "suboptimality") out[c.sigma2] = c.suboptimality;
    else throw ContractError("unknown metric '" + metric + "'");
  }
  return out;
}

std::vector<bandit::BanditEnv> sweep_envs(const SweepConfig& cfg, double sigma2) {
  std::vector<bandit::BanditEnv> envs;
  envs.reserve(cfg.num_envs);
  for (std::size_t i = 0; i < cfg.num_envs; ++i) {
    Rng rng = make_rng(cfg.seed, i, 1);
    std::vector<double> means(cfg.num_arms);
    for (auto& m : means) m = sample_uniform(rng, 0.0, 1.0);
    envs.emplace_back(std::move(means), std::sqrt(sigma2), std::max<std::size_t>(1, cfg.horizon));
  }
  return envs;
}

std::vector<Rollout> run_cell(const Algorithm& algo, const SweepConfig& cfg, double sigma2) {
  const auto envs = sweep_envs(cfg, sigma2);
  std::vector<Rollout> rollouts(envs.size());
  // Noise stream keyed by the variance level so each level is independent of the others.
  const std::uint64_t stream = std::bit_cast<std::uint64_t>(sigma2);
  const auto count = static_cast<std::ptrdiff_t>(envs.size());
  if (algo.kind == Algorithm::Kind::learned && !algo.policy) throw ConfigError("algorithm " + algo.name + " has no policy");
  // Exceptions must not escape the parallel region.
  std::vector<std::string> errors(envs.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    Rng rng = make_rng(cfg.seed, idx, stream);
    try {
      switch (algo.kind) {
        case Algorithm::Kind::learned:
          rollouts[idx] = deploy(*algo.policy, algo.predictor.get(), envs[idx], cfg.horizon, rng, cfg.mode);
          break;
        case Algorithm::Kind::ucb:
          rollouts[idx] = ucb_rollout(envs[idx], algo.beta, cfg.horizon, rng);
          break;
        case Algorithm::Kind::random:
          rollouts[idx] = random_rollout(envs[idx], cfg.horizon, rng);
          break;
      }
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw ConfigError("evaluating " + algo.name + ": " + e);
  }
  return rollouts;
}

EvalReport run_sweep(const std::vector<Algorithm>& algorithms, const SweepConfig& cfg) {
  cfg.validate();
  EvalReport report;
  report.config = cfg;
  json algos = json::array();
  for (const auto& algo : algorithms) {
    report.algorithms.push_back(algo.name);
    json a{{"name", algo.name}, {"provenance", algo.provenance}};
    a["kind"] = algo.kind == Algorithm::Kind::learned ? "learned" : algo.kind == Algorithm::Kind::ucb ? "ucb" : "random";
    if (algo.kind == Algorithm::Kind::ucb) a["beta"] = algo.beta;
    algos.push_back(std::move(a));
  }
  report.metadata["algorithms"] = algos;
  for (const auto& algo : algorithms) {
    for (double s2 : cfg.sigma2_list) {
      const auto rollouts = run_cell(algo, cfg, s2);
      CellResult cell;
      cell.algo = algo.name;
      cell.sigma2 = s2;
      cell.suboptimality = avg_suboptimality(rollouts);
      cell.regret = prefix_sum(cell.suboptimality);
      auto dist = regret_distribution(rollouts);
      cell.totals = std::move(dist.totals);
      cell.histogram = std::move(dist.histogram);
      if (!rollouts.front().predictions.empty()) cell.prediction_loss = online_prediction_loss(rollouts);
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

std::string cell_dir_name(double sigma2) { return "sigma2_" + fmt_label(sigma2); }

void save_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest{{"sweep", report.config.to_json()}, {"algorithms", report.algorithms}, {"metadata", report.metadata}};
  json cells = json::array();
  for (const auto& c : report.cells) {
    const std::filesystem::path rel = std::filesystem::path(c.algo) / cell_dir_name(c.sigma2);
    cells.push_back({{"algo", c.algo}, {"sigma2", c.sigma2}, {"dir", rel.generic_string()}});
    std::ostringstream curves;
    curves << "t,avg_suboptimality,avg_regret,prediction_loss\n";
    for (std::size_t t = 0; t < c.suboptimality.size(); ++t) {
      curves << (t + 1) << ',' << fmt_double(c.suboptimality[t]) << ',' << fmt_double(c.regret[t]) << ',';
      if (c.prediction_loss) curves << fmt_double((*c.prediction_loss)[t]);
      curves << '\n';
    }
    io::write_text(dir / rel / "curves.csv", curves.str());
    std::ostringstream totals;
    totals << "env,total_regret\n";
    for (std::size_t i = 0; i < c.totals.size(); ++i) totals << i << ',' << fmt_double(c.totals[i]) << '\n';
    io::write_text(dir / rel / "totals.csv", totals.str());
    std::ostringstream hist;
    hist << "bin_lo,bin_hi,count\n";
    const double width = c.histogram.counts.empty() ? 0.0 : (c.histogram.hi - c.histogram.lo) / static_cast<double>(c.histogram.counts.size());
    for (std::size_t b = 0; b < c.histogram.counts.size(); ++b) {
      hist << fmt_double(c.histogram.lo + width * static_cast<double>(b)) << ','
           << fmt_double(c.histogram.lo + width * static_cast<double>(b + 1)) << ',' << c.histogram.counts[b] << '\n';
    }
    io::write_text(dir / rel / "histogram.csv", hist.str());
  }
  manifest["cells"] = cells;
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    rows.push_back(std::move(fields));
  }
  return rows;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": bad number '" + s + "'");
  }
}

}  // namespace

EvalReport load_report(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(io::read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  EvalReport report;
  try {
    report.config = SweepConfig::from_json(manifest.at("sweep"));
    report.algorithms = manifest.at("algorithms").get<std::vector<std::string>>();
    report.metadata = manifest.at("metadata");
    for (const auto& c : manifest.at("cells")) {
      CellResult cell;
      cell.algo = c.at("algo").get<std::string>();
      cell.sigma2 = c.at("sigma2").get<double>();
      const auto cdir = dir / c.at("dir").get<std::string>();
      bool has_pred = true;
      std::vector<double> pred;
      for (const auto& row : read_csv(cdir / "curves.csv")) {
        if (row.size() != 4) throw FormatError((cdir / "curves.csv").string() + ": expected 4 columns");
        cell.suboptimality.push_back(parse_double(row[1], cdir));
        cell.regret.push_back(parse_double(row[2], cdir));
        if (row[3].empty()) has_pred = false;
        else pred.push_back(parse_double(row[3], cdir));
      }
      if (has_pred && !pred.empty()) cell.prediction_loss = std::move(pred);
      for (const auto& row : read_csv(cdir / "totals.csv")) {
        if (row.size() != 2) throw FormatError((cdir / "totals.csv").string() + ": expected 2 columns");
        cell.totals.push_back(parse_double(row[1], cdir));
      }
      cell.histogram = make_histogram(cell.totals, kHistogramBins);
      report.cells.push_back(std::move(cell));
    }
  } catch (const json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  return report;
}

}  // namespace pptlab::eval
