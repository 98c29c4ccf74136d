// ppt_lab: data generation, training, evaluation and reports for the bandit lab.
//
// Exit codes: 0 ok, 1 other failure (including a failed grad-check),
// 2 configuration error, 3 I/O or format error, 4 training diverged.
#include <malloc.h>
#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pptlab/binary_io.hpp"
#include "pptlab/errors.hpp"
#include "pptlab/eval.hpp"
#include "pptlab/model.hpp"
#include "pptlab/report.hpp"
#include "pptlab/run_config.hpp"
#include "pptlab/selfcheck.hpp"
#include "pptlab/text.hpp"
#include "pptlab/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pptlab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDiverged = 4;

struct Diverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

RunConfig base_config(const std::string& config_path, const std::string& preset) {
  if (!config_path.empty()) {
    RunConfig c = load_run_config(config_path);
    if (!preset.empty() && preset != c.data.preset) {
      throw ConfigError("--preset " + preset + " conflicts with the config's preset " + c.data.preset);
    }
    return c;
  }
  return RunConfig::for_preset(preset.empty() ? "ideal" : preset);
}

fs::path dataset_file(const fs::path& p) { return fs::is_directory(p) ? p / "dataset.bin" : p; }

// ---- gen-data -----------------------------------------------------------------------------------

struct GenArgs {
  std::string config, preset, out;
  std::optional<std::size_t> num_envs;
  std::optional<std::uint64_t> seed;
};

int cmd_gen_data(const GenArgs& a) {
  RunConfig cfg = base_config(a.config, a.preset);
  if (a.num_envs) cfg.data.num_envs = *a.num_envs;
  if (a.seed) cfg.data.seed = *a.seed;
  cfg.validate();

  const auto ds = bandit::build_dataset(cfg.data);
  fs::create_directories(a.out);
  const fs::path file = fs::path(a.out) / "dataset.bin";
  bandit::save_dataset(ds, file);
  io::write_text(fs::path(a.out) / "config.json", cfg.dump());
  const std::string hash = io::sha256_file(file);
  std::cout << "dataset   " << file.string() << "\n"
            << "preset    " << cfg.data.preset << "\n"
            << "N         " << ds.episodes.size() << "\n"
            << "K         " << ds.num_arms() << "\n"
            << "n         " << ds.horizon() << "\n"
            << "w         " << fmt_label(cfg.data.expert_weight) << "\n"
            << "sigma2    " << cfg.data.variance.to_json().dump() << "\n"
            << "seed      " << cfg.data.seed << "\n"
            << "sha256    " << hash << "\n";
  return 0;
}

// ---- train --------------------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, algo, context, predictor_ckpt;
  std::optional<double> lambda, lr;
  std::optional<std::size_t> steps, batch_size, checkpoint_every, log_every;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = base_config(a.config, "");
  const fs::path data_path = dataset_file(a.data);
  const auto ds = bandit::load_dataset(data_path);
  cfg.data = ds.config;
  cfg.eval.horizon = ds.horizon();
  cfg.eval.num_arms = ds.num_arms();

  auto& tc = cfg.train;
  if (!a.algo.empty()) tc.algo = training::algo_from_string(a.algo);
  if (a.lambda) tc.lambda = *a.lambda;
  if (!a.context.empty()) tc.context_mode = training::context_mode_from_string(a.context);
  if (a.lr) tc.learning_rate = *a.lr;
  if (a.steps) tc.steps = *a.steps;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.checkpoint_every) tc.checkpoint_every = *a.checkpoint_every;
  if (a.seed) tc.seed = *a.seed;

  std::optional<models::ModelParams> frozen;
  if (!a.predictor_ckpt.empty()) {
    fs::path p = a.predictor_ckpt;
    if (fs::is_directory(p)) p /= "predictor.ckpt";
    frozen = models::load_checkpoint(p);
    tc.predictor_mode = training::PredictorMode::pretrained_frozen;
  }
  cfg.validate();

  const auto policy_cfg =
      training::policy_config_for(ds, tc.algo, cfg.model.embed_dim, cfg.model.num_layers, cfg.model.num_heads);
  const auto predictor_cfg =
      training::predictor_config_for(ds, cfg.model.embed_dim, cfg.model.num_layers, cfg.model.num_heads);

  const fs::path out = a.out;
  fs::create_directories(out);
  io::write_text(out / "config.json", cfg.dump());

  const std::size_t log_every = a.log_every.value_or(10);
  training::TrainHooks hooks;
  hooks.on_checkpoint = [&](std::size_t step, const models::ModelParams& policy, const models::ModelParams* pred) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%06zu", step);
    const fs::path dir = out / "checkpoints" / name;
    fs::create_directories(dir);
    models::save_checkpoint(policy, dir / "policy.ckpt");
    if (pred) models::save_checkpoint(*pred, dir / "predictor.ckpt");
  };
  hooks.on_step = [&](const training::TrainLogRow& r) {
    if (log_every == 0 || (r.step % log_every != 0 && r.step != 1)) return;
    std::printf("step %6zu  nll %.6f  curiosity %.6f", r.step, r.nll_term, r.curiosity_term);
    if (r.predictor_loss) std::printf("  predictor %.6f", *r.predictor_loss);
    std::printf("  %.1fs\n", r.wallclock_s);
    std::fflush(stdout);
  };

  const auto result = training::train(ds, policy_cfg, predictor_cfg, tc, frozen ? &*frozen : nullptr, hooks);

  models::save_checkpoint(result.policy, out / "policy.ckpt");
  if (result.predictor) models::save_checkpoint(*result.predictor, out / "predictor.ckpt");
  result.log.write_csv(out / "train_log.csv");
  json summary{{"dataset", {{"path", data_path.string()}, {"sha256", io::sha256_file(data_path)}}},
               {"steps_done", result.steps_done},
               {"epochs_done", result.epochs_done},
               {"converged", result.converged},
               {"diverged", result.diverged},
               {"divergence_reason", result.divergence_reason},
               {"policy_sha256", io::sha256_file(out / "policy.ckpt")}};
  if (result.predictor) summary["predictor_sha256"] = io::sha256_file(out / "predictor.ckpt");
  if (frozen) summary["frozen_predictor"] = a.predictor_ckpt;
  write_json(out / "summary.json", summary);

  std::cout << "trained " << training::to_string(tc.algo) << " for " << result.steps_done << " steps ("
            << result.epochs_done << " epochs) -> " << out.string() << "\n";
  if (result.diverged) throw Diverged(result.divergence_reason);
  return 0;
}

// ---- eval ---------------------------------------------------------------------------------------

struct EvalArgs {
  std::string config, algos, out, mode;
  std::vector<std::string> ckpts;
  std::vector<double> sigma2;
  std::optional<std::size_t> num_envs, horizon;
  std::optional<std::uint64_t> seed;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_eval(const EvalArgs& a) {
  RunConfig cfg = base_config(a.config, "");
  std::map<std::string, fs::path> dirs;
  for (const auto& spec : a.ckpts) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--ckpt expects NAME=DIR, got '" + spec + "'");
    dirs[spec.substr(0, eq)] = spec.substr(eq + 1);
  }
  std::vector<std::string> names = split_csv(a.algos);
  if (names.empty())
    for (const auto& [name, _] : dirs) names.push_back(name);
  for (const char* baseline : {"ucb", "random"})
    if (std::find(names.begin(), names.end(), baseline) == names.end()) names.push_back(baseline);

  // Every checkpoint is loaded before anything is written.
  std::vector<eval::Algorithm> algos;
  std::optional<std::size_t> trained_horizon;
  for (const auto& name : names) {
    if (name == "ucb") {
      algos.push_back(eval::Algorithm::ucb(cfg.eval.ucb_beta));
      continue;
    }
    if (name == "random") {
      algos.push_back(eval::Algorithm::uniform_random());
      continue;
    }
    const auto it = dirs.find(name);
    if (it == dirs.end()) throw ConfigError("algorithm '" + name + "' has no --ckpt " + name + "=DIR");
    const fs::path policy_path = it->second / "policy.ckpt";
    const fs::path predictor_path = it->second / "predictor.ckpt";
    if (!fs::exists(policy_path)) throw IoError("missing checkpoint " + policy_path.string());
    eval::Algorithm alg;
    alg.name = name;
    alg.kind = eval::Algorithm::Kind::learned;
    alg.policy = std::make_shared<models::ModelParams>(models::load_checkpoint(policy_path));
    alg.provenance = {{"policy", policy_path.string()}, {"policy_sha256", io::sha256_file(policy_path)}};
    if (alg.policy->config.prediction_inputs) {
      if (!fs::exists(predictor_path)) throw IoError("missing checkpoint " + predictor_path.string());
      alg.predictor = std::make_shared<models::ModelParams>(models::load_checkpoint(predictor_path));
      alg.provenance["predictor"] = predictor_path.string();
      alg.provenance["predictor_sha256"] = io::sha256_file(predictor_path);
    }
    if (!trained_horizon) trained_horizon = alg.policy->config.max_seq_len - 1;
    cfg.eval.num_arms = alg.policy->config.num_arms;
    algos.push_back(std::move(alg));
  }

  // Test horizon: flag, then config, then the training horizon of the checkpoints.
  if (a.horizon) {
    cfg.eval.horizon = *a.horizon;
  } else if (a.config.empty() && trained_horizon) {
    cfg.eval.horizon = *trained_horizon;
  }
  if (!a.sigma2.empty()) cfg.eval.sigma2_list = a.sigma2;
  if (a.num_envs) cfg.eval.num_envs = *a.num_envs;
  if (a.seed) cfg.eval.seed = *a.seed;
  if (!a.mode.empty()) cfg.eval.mode = eval::action_mode_from_string(a.mode);
  cfg.eval.validate();
  for (const auto& alg : algos) {
    if (alg.policy && cfg.eval.horizon + 1 > alg.policy->config.max_seq_len) {
      throw ConfigError("horizon " + std::to_string(cfg.eval.horizon) + " exceeds what '" + alg.name +
                        "' was trained for");
    }
  }

  const auto report = eval::run_sweep(algos, cfg.eval);
  eval::save_report(report, a.out);
  write_json(fs::path(a.out) / "eval_config.json", cfg.eval.to_json());

  std::printf("%-12s", "final regret");
  for (double s : cfg.eval.sigma2_list) std::printf("  sigma2=%-6s", fmt_label(s).c_str());
  std::printf("\n");
  for (const auto& name : report.algorithms) {
    std::printf("%-12s", name.c_str());
    for (double s : cfg.eval.sigma2_list) std::printf("  %-13.4f", report.cell(name, s).regret.back());
    std::printf("\n");
  }
  std::cout << "report -> " << a.out << "\n";
  return 0;
}

// ---- report -------------------------------------------------------------------------------------

int cmd_report(const std::vector<std::string>& inputs, const std::string& out, double sigma2_base) {
  std::vector<eval::EvalReport> reports;
  std::vector<std::string> labels;
  for (const auto& in : inputs) {
    reports.push_back(eval::load_report(in));
    labels.push_back(fs::path(in).filename().string());
  }
  const auto files = report::write_report(reports, labels, out, sigma2_base);
  for (const auto& f : files) std::cout << f.string() << "\n";
  return 0;
}

// ---- grad-check ---------------------------------------------------------------------------------

int cmd_grad_check() {
  bool ok = true;
  auto show = [&](const std::vector<CheckOutcome>& outcomes) {
    for (const auto& c : outcomes) {
      std::printf("%-4s %-28s rel.err %.3e  (< %.0e)\n", c.passed() ? "ok" : "FAIL", c.name.c_str(), c.value,
                  c.threshold);
      ok = ok && c.passed();
    }
  };
  show(primitive_gradient_checks());
  show(objective_gradient_checks());
  std::cout << (ok ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return ok ? 0 : 1;
}

void set_threads(std::optional<int> flag) {
  std::optional<int> n = flag;
  if (!n) {
    if (const char* env = std::getenv("PPT_LAB_THREADS")) {
      try {
        n = std::stoi(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("PPT_LAB_THREADS is not an integer: ") + env);
      }
    }
  }
  if (n) {
    if (*n < 1) throw ConfigError("thread count must be >= 1");
    omp_set_num_threads(*n);
  }
}

}  // namespace

int main(int argc, char** argv) {
  // Large activations would otherwise be mmapped and unmapped every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);

  CLI::App app{"In-context curiosity bandit lab"};
  app.require_subcommand(1);
  std::optional<int> threads;
  app.add_option("--threads", threads, "OpenMP threads (default: PPT_LAB_THREADS or all cores)");
  app.fallthrough();

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a pretraining dataset");
  gen_cmd->add_option("--config", gen.config, "Run config JSON")->check(CLI::ExistingFile);
  gen_cmd->add_option("--preset", gen.preset, "ideal or tricky");
  gen_cmd->add_option("--num-envs", gen.num_envs, "Episodes N");
  gen_cmd->add_option("--seed", gen.seed, "Data seed");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Pretrain a DPT or PPT policy");
  train_cmd->add_option("--config", tr.config, "Run config JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", tr.data, "Dataset file or gen-data directory")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--algo", tr.algo, "dpt or ppt");
  train_cmd->add_option("--lambda", tr.lambda, "Curiosity weight");
  train_cmd->add_option("--context", tr.context, "ground_truth or proxy");
  train_cmd->add_option("--predictor-ckpt", tr.predictor_ckpt, "Frozen pretrained predictor (file or train dir)");
  train_cmd->add_option("--steps", tr.steps, "Optimizer steps");
  train_cmd->add_option("--batch-size", tr.batch_size, "Episodes per step");
  train_cmd->add_option("--lr", tr.lr, "AdamW learning rate");
  train_cmd->add_option("--seed", tr.seed, "Training seed");
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every, "Intermediate checkpoint period (0: off)");
  train_cmd->add_option("--log-every", tr.log_every, "Progress line period (0: quiet)");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Online evaluation sweep over test variances");
  eval_cmd->add_option("--config", ev.config, "Run config JSON")->check(CLI::ExistingFile);
  eval_cmd->add_option("--ckpt", ev.ckpts, "NAME=TRAIN_DIR, repeatable");
  eval_cmd->add_option("--algos", ev.algos, "Comma list, e.g. dpt,ppt_0,ppt_200,ucb,random");
  eval_cmd->add_option("--sigma2", ev.sigma2, "Test variances")->delimiter(',');
  eval_cmd->add_option("--num-envs", ev.num_envs, "Environments per cell");
  eval_cmd->add_option("--horizon", ev.horizon, "Test horizon (default: training horizon)");
  eval_cmd->add_option("--seed", ev.seed, "Environment seed");
  eval_cmd->add_option("--mode", ev.mode, "sample or greedy");
  eval_cmd->add_option("--out", ev.out, "Report directory")->required();

  std::vector<std::string> report_in;
  std::string report_out;
  double sigma2_base = 0.3;
  auto* report_cmd = app.add_subcommand("report", "SVG figures and summary tables from eval reports");
  report_cmd->add_option("--in", report_in, "Report directory, repeatable (two: side-by-side panels)")
      ->required()
      ->check(CLI::ExistingDirectory);
  report_cmd->add_option("--out", report_out, "Output directory")->required();
  report_cmd->add_option("--sigma2-base", sigma2_base, "Baseline variance for the degradation delta");

  std::string print_config_path, print_preset;
  auto* print_cmd = app.add_subcommand("print-config", "Print the fully resolved run config");
  print_cmd->add_option("--config", print_config_path, "Run config JSON")->check(CLI::ExistingFile);
  print_cmd->add_option("--preset", print_preset, "ideal or tricky");

  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference checks of every gradient");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    set_threads(threads);
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) return cmd_train(tr);
    if (*eval_cmd) return cmd_eval(ev);
    if (*report_cmd) return cmd_report(report_in, report_out, sigma2_base);
    if (*print_cmd) {
      std::cout << base_config(print_config_path, print_preset).dump();
      return 0;
    }
    if (*grad_cmd) return cmd_grad_check();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Diverged& e) {
    std::cerr << "training diverged: " << e.what() << " (artifacts kept, last good checkpoint saved)\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
