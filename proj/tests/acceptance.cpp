// Acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance --cli PATH --work DIR   criteria 1-7 (fast, deterministic)
//   acceptance --desk DIR              criteria 8-12 on reports made by tools/desk_runs.sh
//
// Exit status is the number of failed criteria (capped at 100).
#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pptlab/bandit.hpp"
#include "pptlab/binary_io.hpp"
#include "pptlab/eval.hpp"
#include "pptlab/model.hpp"
#include "pptlab/rng.hpp"
#include "pptlab/selfcheck.hpp"
#include "pptlab/training.hpp"

namespace fs = std::filesystem;
using namespace pptlab;

namespace {

int failures = 0;

void verdict(const std::string& id, const std::string& title, bool ok, const std::string& detail) {
  std::printf("[%s] %-4s %s: %s\n", ok ? "PASS" : "FAIL", id.c_str(), title.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 ------------------------------------------------------------------------------------------

void gradient_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto prim = primitive_gradient_checks();
  const auto obj = objective_gradient_checks();
  const double runtime = seconds_since(t0);
  double prim_max = 0.0;
  bool ok = runtime < 60.0;
  for (const auto& c : prim) {
    prim_max = std::max(prim_max, c.value);
    ok = ok && c.value < 1e-6;
  }
  std::string detail = fmt("%zu primitives max %.2e (< 1e-6)", prim.size(), prim_max);
  for (const auto& c : obj) {
    ok = ok && c.value < 1e-4;
    detail += fmt("; %s %.2e (< 1e-4)", c.name.c_str(), c.value);
  }
  detail += fmt("; %.1fs (< 60s)", runtime);
  verdict("1", "gradient fidelity", ok, detail);
}

// ---- 2 ------------------------------------------------------------------------------------------

void lambda_zero_reduction() {
  double worst_nll = 0.0, worst_dpt = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Rng rng = make_rng(2024, i);
    auto gen = bandit::preset_config(i % 2 ? "tricky" : "ideal", 2 + i % 5, 1000 + i);
    gen.horizon = 2 + (rng() % 8);
    gen.num_arms = 2 + (rng() % 3);
    const auto ds = bandit::build_dataset(gen);
    const auto batch = training::EpisodeBatch::of(ds.episodes);

    models::ModelConfig pc;
    pc.embed_dim = 8;
    pc.num_layers = 1 + i % 2;
    pc.num_heads = 2;
    pc.num_arms = gen.num_arms;
    pc.max_seq_len = gen.horizon + 1;
    pc.prediction_inputs = true;
    models::ModelConfig qc = pc;
    qc.head = models::HeadKind::reward_vector;
    qc.prediction_inputs = false;
    auto policy = models::init_params(pc, derive_seed(7, i, 1), 0.3);
    const auto predictor = models::init_params(qc, derive_seed(7, i, 2), 0.3);
    const auto mode = i % 3 ? training::ContextMode::ground_truth : training::ContextMode::proxy;
    const Tensor pred = training::predict_contexts(predictor, batch);
    const Tensor cur = training::curiosity_matrix(pred, training::context_targets(batch, mode));

    policy.zero_grad();
    const auto ppt = training::ppt_policy_loss(policy, batch, pred, cur, 0.0);
    policy.zero_grad();
    const auto dpt = training::dpt_loss(policy, batch, &pred);
    worst_nll = std::max(worst_nll, std::abs(ppt.total - ppt.nll));
    worst_dpt = std::max(worst_dpt, std::abs(ppt.total - dpt.total));
  }
  verdict("2", "lambda=0 reduction", worst_nll < 1e-12 && worst_dpt < 1e-12,
          fmt("100 instances, max |L_ppt - NLL| %.2e, max |L_ppt - L_dpt| %.2e (< 1e-12)", worst_nll, worst_dpt));
}

// ---- 3 ------------------------------------------------------------------------------------------

eval::Rollout make_rollout(std::vector<double> means, std::vector<double> probs, std::vector<double> preds = {}) {
  eval::Rollout r;
  r.means = std::move(means);
  const std::size_t steps = probs.size() / r.means.size();
  r.action_probs = std::move(probs);
  r.actions.assign(steps, 0);
  r.rewards.assign(steps, 0.0);
  r.predictions = std::move(preds);
  return r;
}

void metric_identities() {
  double worst_prefix = 0.0, worst_mean = 0.0;
  for (std::uint64_t f = 0; f < 50; ++f) {
    Rng rng = make_rng(99, f);
    const std::size_t envs = 1 + rng() % 20, steps = 1 + rng() % 60, k = 2 + rng() % 4;
    std::vector<eval::Rollout> rs;
    for (std::size_t e = 0; e < envs; ++e) {
      std::vector<double> means(k);
      for (auto& m : means) m = sample_uniform(rng, 0.0, 1.0);
      std::vector<double> probs;
      for (std::size_t t = 0; t < steps; ++t) {
        const auto p = sample_dirichlet(rng, k, 1.0);
        probs.insert(probs.end(), p.begin(), p.end());
      }
      rs.push_back(make_rollout(means, probs));
    }
    const auto sub = eval::avg_suboptimality(rs);
    const auto reg = eval::avg_regret(rs);
    const auto pre = eval::prefix_sum(sub);
    for (std::size_t t = 0; t < steps; ++t) worst_prefix = std::max(worst_prefix, std::abs(reg[t] - pre[t]));
    const auto dist = eval::regret_distribution(rs);
    double mean = 0.0;
    for (double v : dist.totals) mean += v;
    mean /= static_cast<double>(dist.totals.size());
    worst_mean = std::max(worst_mean, std::abs(mean - reg.back()));
  }
  // Two envs, three steps, dyadic values: every intermediate is exact.
  const std::vector<eval::Rollout> hand{
      make_rollout({0.25, 0.5, 0.875}, {0.25, 0.25, 0.5, 0, 1, 0, 0, 0, 1},
                   {0, 0, 0, 0.25, 0.5, 0.875, 0.25, 0.5, 0.375}),
      make_rollout({0.75, 0.125, 0.5}, {0.5, 0.5, 0, 0, 0, 1, 0.25, 0.25, 0.5},
                   {0.75, 0.125, 0, 0.5, 0.125, 0.5, 1, 0, 0.5})};
  const bool hand_ok = eval::avg_suboptimality(hand) == std::vector<double>{0.28125, 0.3125, 0.140625} &&
                       eval::avg_regret(hand) == std::vector<double>{0.28125, 0.59375, 0.734375} &&
                       eval::regret_distribution(hand).totals == std::vector<double>{0.625, 0.84375} &&
                       eval::online_prediction_loss(hand) == std::vector<double>{0.6640625, 0.03125, 0.1640625};
  verdict("3", "metric identities", worst_prefix < 1e-12 && worst_mean < 1e-12 && hand_ok,
          fmt("50 random fixtures: regret-prefix %.2e, mean-total %.2e (< 1e-12); 2x3 hand fixture %s", worst_prefix,
              worst_mean, hand_ok ? "exact" : "MISMATCH"));
}

// ---- 4 ------------------------------------------------------------------------------------------

void data_generation_law() {
  bool ok = true;
  std::string detail;
  for (double w : {0.2, 0.8}) {
    auto cfg = bandit::preset_config("ideal", 10000, 4);
    cfg.expert_weight = w;
    const auto ds = bandit::build_dataset(cfg);
    std::size_t hits = 0, total = 0;
    for (const auto& ep : ds.episodes) {
      for (auto a : ep.actions) hits += a == ep.optimal_arm;
      total += ep.horizon();
    }
    const double p = w + (1.0 - w) / static_cast<double>(cfg.num_arms);
    const double freq = static_cast<double>(hits) / static_cast<double>(total);
    const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(total));
    ok = ok && std::abs(freq - p) < 3.0 * se;
    detail += fmt("w=%.1f freq %.5f vs %.5f (%.2f SE); ", w, freq, p, std::abs(freq - p) / se);
  }
  const auto tricky = bandit::build_dataset("tricky", 10000, 4);
  std::size_t off = 0;
  for (const auto& ep : tricky.episodes) off += ep.env_sigma != std::sqrt(0.1);
  ok = ok && off == 0 && tricky.config.expert_weight == 0.8;
  detail += fmt("tricky: %zu of %zu episodes with sigma2 != 0.1", off, tricky.episodes.size());
  verdict("4", "data-generation law", ok, detail);
}

// ---- 5 ------------------------------------------------------------------------------------------

void causality() {
  std::size_t checked = 0, changed = 0;
  for (auto head : {models::HeadKind::action_logits, models::HeadKind::reward_vector}) {
    models::ModelConfig cfg;  // default scale: embed 32, 4 layers, 4 heads
    cfg.max_seq_len = 24;
    cfg.head = head;
    cfg.prediction_inputs = head == models::HeadKind::action_logits;
    const auto params = models::init_params(cfg, 31, 0.2);
    const std::size_t seq = cfg.max_seq_len, fd = cfg.feature_dim();
    Rng rng(5);
    models::TokenSequence tok{fd, std::vector<double>(seq * fd)};
    for (auto& v : tok.rows) v = sample_normal(rng, 0.0, 1.0);
    auto run = [&](const models::TokenSequence& t) {
      return head == models::HeadKind::action_logits ? models::policy_forward(params, t)
                                                     : models::predictor_forward(params, t);
    };
    const Tensor base = run(tok);
    for (std::size_t j = 0; j + 1 < seq; ++j) {
      auto pert = tok;
      for (std::size_t i = (j + 1) * fd; i < pert.rows.size(); ++i) pert.rows[i] += sample_normal(rng, 0.0, 5.0);
      const Tensor out = run(pert);
      for (std::size_t t = 0; t <= j; ++t)
        for (std::size_t k = 0; k < cfg.num_arms; ++k) {
          ++checked;
          changed += out.at(t, k) != base.at(t, k);
        }
    }
  }
  verdict("5", "causality", changed == 0,
          fmt("%zu earlier outputs compared bitwise after perturbing later tokens, %zu changed", checked, changed));
}

// ---- 6 ------------------------------------------------------------------------------------------

void baseline_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  eval::SweepConfig cfg;
  cfg.num_envs = 1000;
  cfg.horizon = 100;
  cfg.num_arms = 3;
  cfg.seed = 6;
  bool ok = true;
  std::string detail;
  for (double s : {0.3, 0.5, 0.9}) {
    const auto ucb = eval::avg_regret(eval::run_cell(eval::Algorithm::ucb(1.0), cfg, s));
    const auto rnd = eval::avg_regret(eval::run_cell(eval::Algorithm::uniform_random(), cfg, s));
    bool sublinear = true;
    for (std::size_t t = cfg.horizon / 2; t < cfg.horizon; ++t) {
      sublinear = sublinear && ucb[t] / static_cast<double>(t + 1) < ucb[t - 1] / static_cast<double>(t);
    }
    ok = ok && ucb.back() < rnd.back() && sublinear;
    detail += fmt("s2=%.1f ucb %.3f < random %.3f, regret/t decreasing %s; ", s, ucb.back(), rnd.back(),
                  sublinear ? "yes" : "NO");
  }
  const double runtime = seconds_since(t0);
  ok = ok && runtime < 60.0;
  detail += fmt("%.1fs (< 60s)", runtime);
  verdict("6", "baseline sanity", ok, detail);
}

// ---- 7 ------------------------------------------------------------------------------------------

std::string strip_last_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string out, line;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

bool run(const std::string& cmd) {
  const std::string full = cmd + " > /dev/null 2>&1";
  return std::system(full.c_str()) == 0;
}

void reproducibility(const fs::path& cli, const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  io::write_text(work / "config.json", R"({
  "data": {"preset": "ideal", "num_envs": 256, "seed": 7},
  "train": {"algo": "ppt", "lambda": 200.0, "steps": 50, "batch_size": 32, "seed": 7},
  "eval": {"num_envs": 100, "seed": 7}
}
)");
  bool ran = true;
  for (const char* name : {"run_a", "run_b"}) {
    const fs::path dir = work / name;
    fs::create_directories(dir);
    const std::string pre = "cd '" + dir.string() + "' && '" + cli.string() + "' ";
    ran = ran && run(pre + "gen-data --threads 1 --config ../config.json --out data");
    ran = ran && run(pre + "train --threads 1 --config ../config.json --data data --out ppt");
    ran = ran && run(pre + "eval --threads 1 --config ../config.json --ckpt ppt_200=ppt --algos ppt_200 --out report");
  }
  std::size_t files = 0, differing = 0;
  std::vector<std::string> diffs;
  if (ran) {
    for (const auto& entry : fs::recursive_directory_iterator(work / "run_a")) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), work / "run_a");
      const fs::path other = work / "run_b" / rel;
      ++files;
      if (!fs::exists(other)) {
        ++differing;
        diffs.push_back(rel.string());
        continue;
      }
      std::string a = io::read_text(entry.path()), b = io::read_text(other);
      if (rel.filename() == "train_log.csv") a = strip_last_column(a), b = strip_last_column(b);
      if (a != b) {
        ++differing;
        diffs.push_back(rel.string());
      }
    }
  }
  std::string detail = ran ? fmt("%zu artifacts, %zu differ (train_log wallclock column excluded)", files, differing)
                           : std::string("pipeline command failed");
  for (const auto& d : diffs) detail += " " + d;
  verdict("7", "reproducibility", ran && files > 0 && differing == 0, detail);
}

// ---- desk tier (8-12) ---------------------------------------------------------------------------

double final_regret(const eval::EvalReport& r, const std::string& algo, double s) {
  return r.cell(algo, s).regret.back();
}

std::vector<fs::path> seed_reports(const fs::path& desk, const std::string& preset) {
  std::vector<fs::path> out;
  for (int s = 1; s <= 9; ++s) {
    const fs::path p = desk / "reports" / (preset + "_s" + std::to_string(s));
    if (fs::exists(p / "manifest.json")) out.push_back(p);
  }
  return out;
}

void desk(const fs::path& dir) {
  const auto tricky = seed_reports(dir, "tricky");
  const auto ideal = seed_reports(dir, "ideal");
  std::vector<eval::EvalReport> tr, id;
  for (const auto& p : tricky) tr.push_back(eval::load_report(p));
  for (const auto& p : ideal) id.push_back(eval::load_report(p));
  auto has = [](const eval::EvalReport& r, const std::string& a) {
    return std::find(r.algorithms.begin(), r.algorithms.end(), a) != r.algorithms.end();
  };

  {  // 8
    std::size_t wins = 0;
    std::string detail;
    for (const auto& r : tr) {
      const auto n = r.config.horizon - 1;
      const double dp = eval::degradation_delta(r.curves("ppt_200", "regret"), 0.9, 0.3, n);
      const double dd = eval::degradation_delta(r.curves("dpt", "regret"), 0.9, 0.3, n);
      wins += dp < dd;
      detail += fmt("seed %zu: d_ppt %.3f vs d_dpt %.3f; ", &r - tr.data() + 1, dp, dd);
    }
    verdict("8", "tricky degradation delta ppt_200 < dpt", tr.size() >= 3 && wins >= 2,
            detail + fmt("%zu of %zu seeds (need 2 of 3)", wins, tr.size()));
  }
  {  // 9
    bool ok = !id.empty();
    std::string detail;
    for (const auto& r : id) {
      const double a = final_regret(r, "ppt_0", 0.3), b = final_regret(r, "dpt", 0.3);
      const double rel = std::abs(a - b) / b;
      ok = ok && rel <= 0.15;
      detail += fmt("seed %zu: ppt_0 %.3f vs dpt %.3f, rel %.3f (<= 0.15); ", &r - id.data() + 1, a, b, rel);
    }
    verdict("9", "ppt_0 matches dpt on ideal data", ok, id.empty() ? "no ideal reports" : detail);
  }
  {  // 10
    std::size_t wins = 0;
    std::string detail;
    for (const auto& r : tr) {
      auto gap = [&](double s) {
        const double d = final_regret(r, "dpt", s);
        return std::abs(final_regret(r, "ppt_200", s) - d) / d;
      };
      wins += gap(0.9) < gap(0.5);
      detail += fmt("seed %zu: gap@0.9 %.3f vs gap@0.5 %.3f; ", &r - tr.data() + 1, gap(0.9), gap(0.5));
    }
    verdict("10", "tricky gap shrinks with variance", tr.size() >= 3 && wins >= 2,
            detail + fmt("%zu of %zu seeds (need 2 of 3)", wins, tr.size()));
  }
  {  // 11
    bool ok = true;
    std::size_t cells = 0;
    std::string detail;
    for (const auto* group : {&id, &tr}) {
      for (const auto& r : *group) {
        if (!has(r, "ppt_200_proxy")) continue;
        for (double s : {0.3, 0.5, 0.9}) {
          const double a = final_regret(r, "ppt_200_proxy", s), b = final_regret(r, "ppt_200", s);
          const double rel = std::abs(a - b) / b;
          ok = ok && rel <= 0.20;
          ++cells;
          detail += fmt("%s s2=%.1f rel %.3f; ", group == &id ? "ideal" : "tricky", s, rel);
        }
      }
    }
    verdict("11", "proxy context within 20% of ground truth", ok && cells >= 6, detail + fmt("(<= 0.20, %zu cells)", cells));
  }
  {  // 12
    bool ok = !id.empty();
    std::string detail;
    for (const auto& r : id) {
      const auto& loss = r.cell("ppt_200", 0.3).prediction_loss;
      if (!loss) {
        ok = false;
        continue;
      }
      ok = ok && loss->back() < loss->front();
      detail += fmt("seed %zu: step 1 %.4f -> step %zu %.4f; ", &r - id.data() + 1, loss->front(), loss->size(),
                    loss->back());
    }
    verdict("12", "online prediction loss decreases", ok, detail);
  }
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
  CLI::App app{"acceptance criteria"};
  std::string cli, work, desk_dir;
  app.add_option("--cli", cli, "ppt_lab executable");
  app.add_option("--work", work, "Scratch directory for the pipeline check");
  app.add_option("--desk", desk_dir, "Desk experiment directory");
  CLI11_PARSE(app, argc, argv);

  try {
    if (!desk_dir.empty()) {
      desk(desk_dir);
    } else {
      if (cli.empty() || work.empty()) {
        std::fprintf(stderr, "need --cli and --work (or --desk)\n");
        return 2;
      }
      gradient_fidelity();
      lambda_zero_reduction();
      metric_identities();
      data_generation_law();
      causality();
      baseline_sanity();
      reproducibility(fs::absolute(cli), fs::absolute(work));
    }
  } catch (const std::exception& e) {
    std::printf("[FAIL] aborted: %s\n", e.what());
    return 100;
  }
  std::printf("%d criteria failed\n", failures);
  return std::min(failures, 100);
}
