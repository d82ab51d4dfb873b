#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "branchgrpo/config.hpp"
#include "branchgrpo/credit.hpp"
#include "branchgrpo/errors.hpp"
#include "branchgrpo/io.hpp"
#include "branchgrpo/metrics.hpp"
#include "branchgrpo/pruning.hpp"
#include "branchgrpo/rollout.hpp"
#include "branchgrpo/trainer.hpp"

namespace fs = std::filesystem;
using namespace branchgrpo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonOptions& opts) {
  app->add_option("-c,--config", opts.config_path, "INI config file (defaults when omitted)");
  app->add_option("--set", opts.overrides, "Override one key, e.g. --set grpo.iterations=50")->take_all();
}

RunConfig resolve(const CommonOptions& opts) {
  RunConfig config = opts.config_path.empty() ? parse_config("") : load_config(opts.config_path);
  for (const auto& assignment : opts.overrides) set_config_value(config, assignment);
  apply_env_overrides(config);
  config.validate();
  return config;
}

fs::path run_dir(const RunConfig& config) { return fs::path(config.output_dir) / run_id(config); }

PolicyParams fresh_policy(const RunConfig& config) {
  PolicyParams p = PolicyParams::init(MlpShape::for_dim(config.trainer.world.dim, config.hidden), config.pretrain.seed);
  p.ema_decay = config.ema_decay;
  return p;
}

PolicyParams load_policy(const std::string& path, const RunConfig& config) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.params.shape != MlpShape::for_dim(config.trainer.world.dim, config.hidden)) {
    throw ConfigError("policy.hidden", "checkpoint shape does not match the configured world and hidden width");
  }
  ck.params.ema_decay = config.ema_decay;
  return ck.params;
}

PolicyParams pretrained(const RunConfig& config) {
  PolicyParams p = fresh_policy(config);
  pretrain_flow_matching(config.trainer.world, p, config.pretrain);
  p.reset_ema();
  return p;
}

std::span<const double> eval_weights(const PolicyParams& p, const RunConfig& config) {
  return config.use_ema ? std::span<const double>(p.ema) : std::span<const double>(p.values);
}

int cmd_pretrain(const RunConfig& config, const std::string& out) {
  PolicyParams p = fresh_policy(config);
  const auto report = pretrain_flow_matching(config.trainer.world, p, config.pretrain);
  p.reset_ema();
  const fs::path path = out.empty() ? run_dir(config) / "pretrained.ckpt" : fs::path(out);
  write_checkpoint(path, p, config.pretrain.seed, 0);
  nlohmann::json j = {{"checkpoint", path.string()},
                      {"steps", config.pretrain.steps},
                      {"final_loss", report.losses.empty() ? 0.0 : report.losses.back()}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_train(RunConfig config, const std::string& init) {
  const fs::path dir = run_dir(config);
  RunManifest manifest = make_manifest(config);
  const fs::path manifest_path = dir / "manifest.json";
  write_manifest(manifest_path, manifest);

  PolicyParams policy = init.empty() ? pretrained(config) : load_policy(init, config);
  config.trainer.on_checkpoint = [&](int iteration, const PolicyParams& p) {
    char name[32];
    std::snprintf(name, sizeof(name), "iter_%05d.ckpt", iteration);
    const fs::path path = dir / "checkpoints" / name;
    write_checkpoint(path, p, config.trainer.seed, iteration);
    manifest.checkpoints.push_back(path.string());
    write_manifest(manifest_path, manifest);
  };
  config.trainer.on_numerical_failure = [&](const TrajectoryTree& tree) {
    write_file_atomic(dir / "failed_tree.json", tree_to_json(tree).dump(2));
  };
  RunLog log;
  try {
    log = train(config.trainer, policy, config.mode);
  } catch (const NumericalError&) {
    manifest.status = "numerical_failure";
    manifest.finished_at = utc_timestamp();
    write_manifest(manifest_path, manifest);
    throw;
  }
  const fs::path final_ckpt = dir / "final.ckpt";
  write_checkpoint(final_ckpt, policy, config.trainer.seed, config.trainer.grpo.iterations);
  manifest.checkpoints.push_back(final_ckpt.string());
  const auto files = emit_curves(log, dir, "runlog", config.reward_threshold);
  manifest.metric_files = {files.csv.string(), files.summary.string()};
  manifest.status = "finished";
  manifest.finished_at = utc_timestamp();
  write_manifest(manifest_path, manifest);
  nlohmann::json j = summary_to_json(summarize(log, config.reward_threshold));
  j["run_dir"] = dir.string();
  j["initial_reward"] = log.initial_reward;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_eval(const RunConfig& config, const std::string& checkpoint, int samples, bool deterministic) {
  const PolicyParams p = checkpoint.empty() ? pretrained(config) : load_policy(checkpoint, config);
  const int n = samples > 0 ? samples : config.eval_samples;
  const auto r = evaluate_policy(config.trainer, eval_weights(p, config), p.shape, n, config.sampler_seed,
                                 deterministic);
  nlohmann::json j = {{"samples", r.samples},
                      {"reward_mean", r.reward_mean},
                      {"reward_std", r.reward_std},
                      {"target_mode_fraction", r.target_mode_fraction},
                      {"within_three_scales", r.within_three_scales},
                      {"sampler", deterministic ? "ode" : "sde"}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_diversity(const RunConfig& config, const std::string& checkpoint, std::size_t n, const std::string& kernel_name,
                  int permutations, double alpha, const std::string& out) {
  const PolicyParams p = checkpoint.empty() ? pretrained(config) : load_policy(checkpoint, config);
  const auto sets = boundary_invariance_samples(config.trainer, eval_weights(p, config), p.shape, n,
                                                config.sampler_seed);
  Kernel kernel;
  if (kernel_name == "rbf") {
    kernel = Kernel::rbf(median_heuristic_bandwidth(sets.branch, sets.sequential, 1024, config.sampler_seed));
  } else if (kernel_name == "polynomial") {
    kernel = Kernel::polynomial(3, 1.0);
  } else {
    throw ConfigError("kernel", "expected rbf or polynomial");
  }
  const auto result = permutation_test(sets.branch, sets.sequential, kernel, permutations, alpha, config.sampler_seed);
  nlohmann::json j = to_json(result);
  if (kernel.kind == Kernel::Kind::kPolynomial) j["kid"] = kid_style_statistic(sets.branch, sets.sequential);
  const std::string text = j.dump(2) + "\n";
  if (!out.empty()) write_file_atomic(out, text);
  std::cout << text;
  return 0;
}

int cmd_nfe(const RunConfig& config, long iteration) {
  const auto& schedule = config.trainer.schedule;
  nlohmann::json j = {{"leaf_count", schedule.leaf_count()},
                      {"tree_evaluations", tree_evaluation_count(schedule)},
                      {"average_per_sample_nfe", average_per_sample_nfe(schedule)},
                      {"sequential_nfe", config.trainer.sequential_steps}};
  // the mask is structural; a zero-velocity policy suffices to build it
  const PolicyParams zero = PolicyParams::zeros(MlpShape::for_dim(config.trainer.world.dim, config.hidden));
  const Dynamics dynamics = branch_dynamics(config.trainer, config.mode == TrainMode::kSequential ? TrainMode::kBranch
                                                                                              : config.mode,
                                            iteration);
  const auto z0 = root_noise(config.trainer.seed, 0, static_cast<std::size_t>(config.trainer.world.dim));
  TrajectoryTree tree = rollout_tree(zero.values, zero.shape, dynamics, schedule, z0, config.trainer.seed, 0);
  std::vector<double> rewards;
  for (const auto& leaf : leaves(tree)) rewards.push_back(config.trainer.reward(tree.state(leaf)));
  const auto credit = compute_credit(tree, rewards, config.trainer.fusion, config.trainer.grpo.norm_epsilon,
                                     config.trainer.grpo.advantage_clip);
  apply_pruning(tree, credit, config.trainer.pruning, iteration);
  j["gradient_edge_nfe"] = gradient_edge_nfe(tree);
  j["iteration"] = iteration;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_dump_tree(const RunConfig& config, const std::string& checkpoint, std::uint64_t prompt, long iteration,
                  const std::string& out, const std::string& credit_csv) {
  const PolicyParams p = checkpoint.empty() ? pretrained(config) : load_policy(checkpoint, config);
  const TrainMode mode = config.mode == TrainMode::kSequential ? TrainMode::kBranch : config.mode;
  const Dynamics dynamics = branch_dynamics(config.trainer, mode, iteration);
  const auto z0 = root_noise(config.trainer.seed, prompt, static_cast<std::size_t>(config.trainer.world.dim));
  TrajectoryTree tree =
      rollout_tree(p.values, p.shape, dynamics, config.trainer.schedule, z0, config.trainer.seed, prompt);
  std::vector<double> rewards;
  for (const auto& leaf : leaves(tree)) rewards.push_back(config.trainer.reward(tree.state(leaf)));
  const auto credit = compute_credit(tree, rewards, config.trainer.fusion, config.trainer.grpo.norm_epsilon,
                                     config.trainer.grpo.advantage_clip);
  assign_edge_advantages(tree, credit);
  apply_pruning(tree, credit, config.trainer.pruning, iteration);
  nlohmann::json j = tree_to_json(tree);
  j["leaf_rewards"] = rewards;
  j["fused_value"] = credit.fused_value;
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out, text);
  }
  if (!credit_csv.empty()) {
    std::ostringstream csv;
    write_credit_csv(csv, tree, credit);
    write_file_atomic(credit_csv, csv.str());
  }
  return 0;
}

int cmd_sweep(const RunConfig& config, const std::string& axis_name, const std::vector<std::string>& values,
              const std::string& init, int parallel, const std::string& out) {
  const SweepAxis axis = sweep_axis_from_string(axis_name);
  const PolicyParams start = init.empty() ? pretrained(config) : load_policy(init, config);
  const auto report = sweep(config, axis, values, start, parallel);
  const fs::path dir = out.empty() ? fs::path(config.output_dir) / ("sweep-" + run_id(config)) : fs::path(out);
  write_sweep(report, dir);
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : report.runs) {
    nlohmann::json r = {{"label", run.label}, {"ok", run.ok}, {"leaf_count", run.leaf_count}};
    if (run.ok) r["summary"] = summary_to_json(run.summary);
    if (!run.ok) r["error"] = run.error;
    runs.push_back(r);
  }
  std::cout << nlohmann::json{{"axis", to_string(axis)}, {"dir", dir.string()}, {"runs", runs}}.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-structured GRPO on a toy flow-matching generator"};
  app.require_subcommand(1);

  CommonOptions pre_opts, train_opts, eval_opts, div_opts, nfe_opts, dump_opts, sweep_opts;
  std::string pre_out, train_init, train_mode, eval_ckpt, div_ckpt, div_kernel = "rbf", div_out, dump_ckpt, dump_out,
      dump_csv, sweep_axis, sweep_init, sweep_out;
  std::vector<std::string> sweep_values;
  int eval_samples = 0, div_perms = 200, sweep_parallel = 1;
  bool eval_ode = false;
  std::size_t div_n = 1024;
  double div_alpha = 0.01;
  long nfe_iter = 0, dump_iter = 0;
  std::uint64_t dump_prompt = 0;

  auto* pre = app.add_subcommand("pretrain", "Flow-matching pretraining; writes a checkpoint");
  add_common(pre, pre_opts);
  pre->add_option("-o,--out", pre_out, "Checkpoint path");

  auto* tr = app.add_subcommand("train", "GRPO fine-tuning");
  add_common(tr, train_opts);
  tr->add_option("--mode", train_mode, "branch, sequential or hybrid")
      ->check(CLI::IsMember({"branch", "sequential", "hybrid"}));
  tr->add_option("--init", train_init, "Starting checkpoint (pretrains in-process when omitted)");

  auto* ev = app.add_subcommand("eval", "Mean reward of a checkpoint");
  add_common(ev, eval_opts);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint path");
  ev->add_option("-n,--samples", eval_samples, "Number of samples");
  ev->add_flag("--ode", eval_ode, "Deterministic sampler");

  auto* dv = app.add_subcommand("diversity", "Branch vs sequential two-sample test");
  add_common(dv, div_opts);
  dv->add_option("--checkpoint", div_ckpt, "Checkpoint path");
  dv->add_option("-n,--samples", div_n, "Points per set");
  dv->add_option("--kernel", div_kernel, "rbf or polynomial");
  dv->add_option("--permutations", div_perms, "Permutation count");
  dv->add_option("--alpha", div_alpha, "Test level");
  dv->add_option("-o,--out", div_out, "JSON report path");

  auto* nf = app.add_subcommand("nfe", "Evaluation counts for a schedule");
  add_common(nf, nfe_opts);
  nf->add_option("--iteration", nfe_iter, "Iteration for pruning / hybrid windows");

  auto* dt = app.add_subcommand("dump-tree", "Roll out one tree and dump it as JSON");
  add_common(dt, dump_opts);
  dt->add_option("--checkpoint", dump_ckpt, "Checkpoint path");
  dt->add_option("--prompt", dump_prompt, "Prompt index");
  dt->add_option("--iteration", dump_iter, "Iteration for pruning / hybrid windows");
  dt->add_option("-o,--out", dump_out, "JSON path (stdout when omitted)");
  dt->add_option("--credit-csv", dump_csv, "Credit table CSV path");

  auto* sw = app.add_subcommand("sweep", "Sequential child runs along one axis");
  add_common(sw, sweep_opts);
  sw->add_option("--axis", sweep_axis, "s, K, split_steps, fusion_beta or pruning")->required();
  sw->add_option("--values", sweep_values, "Axis values")->take_all();
  sw->add_option("--init", sweep_init, "Starting checkpoint");
  sw->add_option("--parallel", sweep_parallel, "Concurrent child runs");
  sw->add_option("-o,--out", sweep_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(resolve(pre_opts), pre_out);
    if (tr->parsed()) {
      if (!train_mode.empty()) train_opts.overrides.push_back("run.mode=" + train_mode);
      return cmd_train(resolve(train_opts), train_init);
    }
    if (ev->parsed()) return cmd_eval(resolve(eval_opts), eval_ckpt, eval_samples, eval_ode);
    if (dv->parsed()) return cmd_diversity(resolve(div_opts), div_ckpt, div_n, div_kernel, div_perms, div_alpha, div_out);
    if (nf->parsed()) return cmd_nfe(resolve(nfe_opts), nfe_iter);
    if (dt->parsed()) {
      return cmd_dump_tree(resolve(dump_opts), dump_ckpt, dump_prompt, dump_iter, dump_out, dump_csv);
    }
    if (sw->parsed()) {
      return cmd_sweep(resolve(sweep_opts), sweep_axis, sweep_values, sweep_init, sweep_parallel, sweep_out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
