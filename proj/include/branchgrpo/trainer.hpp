#ifndef BRANCHGRPO_TRAINER_HPP
#define BRANCHGRPO_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "branchgrpo/credit.hpp"
#include "branchgrpo/dynamics.hpp"
#include "branchgrpo/optimizer.hpp"
#include "branchgrpo/policy.hpp"
#include "branchgrpo/pruning.hpp"
#include "branchgrpo/tree.hpp"

namespace branchgrpo {

struct GrpoConfig {
  double clip_epsilon = 1e-4;
  int num_generations = 12;      ///< baseline group size
  int train_batch_size = 2;
  int grad_accum_steps = 12;     ///< prompts per optimizer step = batch * accum
  int iterations = 300;
  bool init_same_noise = true;
  double timestep_fraction = 1.0;  ///< baseline only
  double advantage_clip = 5.0;
  double norm_epsilon = 1e-8;
  int updates_per_iteration = 1;
  int checkpoint_every = 40;
  bool zero_advantages = false;    ///< diagnostic: drop the learning signal

  void validate() const;
  int prompts_per_iteration() const { return train_batch_size * grad_accum_steps; }
};

enum class TrainMode { kBranch, kSequential, kHybrid };

const char* to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainerConfig {
  BranchSchedule schedule{};
  int sequential_steps = 16;
  double shift = 3.0;
  double eta = 0.3;
  MixtureWorld world = MixtureWorld::two_modes();
  RewardFunction reward{};
  FusionConfig fusion{};
  PruningConfig pruning{};
  SlidingWindow hybrid_window{true, 4, 30, 9, 15};
  GrpoConfig grpo{};
  OptimizerConfig optimizer{};
  std::uint64_t seed = 42;
  int threads = 1;
  bool record_wall_time = false;

  /// Called after every `grpo.checkpoint_every` iterations.
  std::function<void(int iteration, const PolicyParams&)> on_checkpoint;
  /// Receives the offending tree before a numerical abort.
  std::function<void(const TrajectoryTree&)> on_numerical_failure;
};

/// Gradient-carrying transitions, flattened.
struct EdgeBatch {
  std::size_t dim = 0;
  std::vector<double> parents;
  std::vector<double> children;
  std::vector<int> steps;
  std::vector<double> advantages;
  std::vector<double> old_logprobs;

  std::size_t size() const noexcept { return steps.size(); }
  void add(std::span<const double> parent, std::span<const double> child, int step, double advantage,
           double old_logprob);
};

/// Edges of `tree` with in_gradient_set, carrying their edge advantages.
EdgeBatch gradient_edges(const TrajectoryTree& tree);

struct EdgeLossResult {
  double objective = 0.0;
  std::vector<double> ratios;
  /// dJ/d(new_logprob) per edge; zero where the clipped branch is selected.
  std::vector<double> coefficients;
  std::size_t clipped = 0;
};

/// J = (1/|E|) sum_e min(rho A, clip(rho, 1-eps, 1+eps) A), rho = exp(new - old).
/// Throws NumericalError on a non-finite ratio.
EdgeLossResult grpo_edge_loss(std::span<const double> advantages, std::span<const double> old_logprobs,
                              std::span<const double> new_logprobs, double clip_epsilon);

/// Replays `edges` through `params` and adds weight * dJ/dparams to `grad`.
/// Returns the edge objective.
double accumulate_policy_gradient(std::span<const double> params, const MlpShape& shape, const Dynamics& dynamics,
                                  const EdgeBatch& edges, double clip_epsilon, double weight, std::span<double> grad);

/// floor(fraction * steps)
int timestep_subsample_count(int steps, double fraction);

/// Steps that receive gradient for one baseline chain.
std::vector<int> subsample_timesteps(int steps, double fraction, std::uint64_t run_seed, std::uint64_t prompt,
                                     std::size_t chain);

/// (r - mean) / (std + eps), population std, clipped to +-clip; zero spread
/// gives zero advantages.
std::vector<double> group_advantages(std::span<const double> rewards, double epsilon, double clip);

struct IterationRecord {
  int iteration = 0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  std::uint64_t nfe_old = 0;  ///< old-policy denoiser evaluations this iteration
  std::uint64_t nfe_new = 0;  ///< new-policy (gradient edge) evaluations this iteration
  double wall_ms = 0.0;

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct RunLog {
  TrainMode mode = TrainMode::kBranch;
  double initial_reward = 0.0;  ///< mean leaf reward of the first rollouts, before any update
  std::vector<IterationRecord> records;
  std::uint64_t samples_per_iteration = 0;

  std::uint64_t total_nfe_old() const;
  std::uint64_t total_nfe_new() const;
};

/// Tree rollouts, fusion, depth-wise normalization, pruning and the clipped
/// edge objective. `mode` is kBranch or kHybrid.
RunLog train_branch(const TrainerConfig& config, PolicyParams& policy, TrainMode mode = TrainMode::kBranch);

/// Independent chains with prompt-level group normalization broadcast to
/// every step, under the same edge objective.
RunLog train_sequential_baseline(const TrainerConfig& config, PolicyParams& policy);

RunLog train(const TrainerConfig& config, PolicyParams& policy, TrainMode mode);

/// Gradient step: global-norm clip then AdamW; EMA shadow follows.
double optimizer_step(PolicyParams& params, AdamW& optimizer);

/// Dynamics used for branch / hybrid rollouts at `iteration`.
Dynamics branch_dynamics(const TrainerConfig& config, TrainMode mode, long iteration);
Dynamics sequential_dynamics(const TrainerConfig& config);

struct EvalReport {
  std::size_t samples = 0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double target_mode_fraction = 0.0;  ///< samples whose nearest mode is the one closest to the reward target
  double within_three_scales = 0.0;   ///< samples within 3 mode scales of some mode
};

/// Independent samples on the branch time grid (SDE at every step, or pure
/// ODE when `deterministic`), noise keyed by `sampler_seed`.
EvalReport evaluate_policy(const TrainerConfig& config, std::span<const double> params, const MlpShape& shape,
                           int samples, std::uint64_t sampler_seed, bool deterministic = false);

}  // namespace branchgrpo

#endif
