#include "branchgrpo/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "branchgrpo/errors.hpp"
#include "branchgrpo/rollout.hpp"

namespace branchgrpo {

void GrpoConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw ConfigError("clip_range", "must be positive");
  if (num_generations < 2) throw ConfigError("num_generations", "group size must be at least 2");
  if (train_batch_size < 1) throw ConfigError("train_batch_size", "must be positive");
  if (grad_accum_steps < 1) throw ConfigError("grad_accum_steps", "must be positive");
  if (iterations < 0) throw ConfigError("iterations", "must be non-negative");
  if (!(timestep_fraction > 0.0 && timestep_fraction <= 1.0)) {
    throw ConfigError("timestep_fraction", "must lie in (0, 1]");
  }
  if (!(advantage_clip > 0.0)) throw ConfigError("adv_clip_max", "must be positive");
  if (!(norm_epsilon >= 0.0)) throw ConfigError("norm_epsilon", "must be non-negative");
  if (updates_per_iteration < 1) throw ConfigError("updates_per_iteration", "must be positive");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_steps", "must be non-negative");
}

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kBranch:
      return "branch";
    case TrainMode::kSequential:
      return "sequential";
    case TrainMode::kHybrid:
      return "hybrid";
  }
  return "branch";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "branch") return TrainMode::kBranch;
  if (name == "sequential") return TrainMode::kSequential;
  if (name == "hybrid") return TrainMode::kHybrid;
  throw ConfigError("mode", "unknown training mode '" + name + "'");
}

void EdgeBatch::add(std::span<const double> parent, std::span<const double> child, int step, double advantage,
                    double old_logprob) {
  if (dim == 0) dim = parent.size();
  parents.insert(parents.end(), parent.begin(), parent.end());
  children.insert(children.end(), child.begin(), child.end());
  steps.push_back(step);
  advantages.push_back(advantage);
  old_logprobs.push_back(old_logprob);
}

EdgeBatch gradient_edges(const TrajectoryTree& tree) {
  if (!tree.mask_set()) throw std::logic_error("gradient mask not set");
  EdgeBatch batch;
  batch.dim = tree.dim();
  for (std::size_t i = 1; i < tree.node_count(); ++i) {
    const NodeId node = tree.node_at(i);
    if (!tree.in_gradient_set(node) || !tree.stochastic(node)) continue;
    const auto adv = tree.advantage(node);
    if (!adv) throw std::logic_error("gradient edge without advantage");
    batch.add(tree.state(*tree.parent(node)), tree.state(node), node.depth - 1, *adv, tree.behavior_logprob(node));
  }
  return batch;
}

EdgeLossResult grpo_edge_loss(std::span<const double> advantages, std::span<const double> old_logprobs,
                              std::span<const double> new_logprobs, double clip_epsilon) {
  const std::size_t n = advantages.size();
  if (old_logprobs.size() != n || new_logprobs.size() != n) throw std::invalid_argument("grpo_edge_loss: size mismatch");
  EdgeLossResult out;
  out.ratios.resize(n);
  out.coefficients.assign(n, 0.0);
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t e = 0; e < n; ++e) {
    const double rho = std::exp(new_logprobs[e] - old_logprobs[e]);
    if (!std::isfinite(rho)) throw NumericalError("non-finite importance ratio on edge " + std::to_string(e));
    out.ratios[e] = rho;
    const double a = advantages[e];
    const double clipped_rho = std::clamp(rho, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    const double unclipped = rho * a;
    const double clipped = clipped_rho * a;
    if (unclipped <= clipped) {
      total += unclipped;
      out.coefficients[e] = unclipped * inv;  // d(rho A)/d(new_lp) = rho A
    } else {
      total += clipped;
      ++out.clipped;
    }
  }
  out.objective = total * inv;
  return out;
}

double accumulate_policy_gradient(std::span<const double> params, const MlpShape& shape, const Dynamics& dynamics,
                                  const EdgeBatch& edges, double clip_epsilon, double weight, std::span<double> grad) {
  const std::size_t n = edges.size();
  if (n == 0) return 0.0;
  const std::size_t dim = edges.dim;
  std::vector<ForwardRecord> records(n);
  std::vector<double> means(n * dim);
  std::vector<double> new_lp(n);
  std::vector<double> velocity(dim);
  for (std::size_t e = 0; e < n; ++e) {
    const int step = edges.steps[e];
    const std::span<const double> parent(edges.parents.data() + e * dim, dim);
    const std::span<const double> child(edges.children.data() + e * dim, dim);
    const std::span<double> mean(means.data() + e * dim, dim);
    forward_velocity(params, shape, parent, dynamics.grid().time(step), velocity, &records[e]);
    dynamics.mean_update(parent, velocity, step, mean);
    new_lp[e] = dynamics.transition_logprob(mean, child, step);
  }
  const auto loss = grpo_edge_loss(edges.advantages, edges.old_logprobs, new_lp, clip_epsilon);
  if (!std::isfinite(loss.objective)) throw NumericalError("non-finite edge objective");
  std::vector<double> upstream(dim);
  for (std::size_t e = 0; e < n; ++e) {
    const double c = loss.coefficients[e] * weight;
    if (c == 0.0) continue;
    const int step = edges.steps[e];
    const double sigma = dynamics.noise_scale(step);
    const double h = dynamics.grid().step_size(step);
    // d log N(x; mu, sigma^2) / d mu = (x - mu) / sigma^2, d mu / d v = h
    for (std::size_t i = 0; i < dim; ++i) {
      upstream[i] = c * h * (edges.children[e * dim + i] - means[e * dim + i]) / (sigma * sigma);
    }
    backward(params, shape, records[e], upstream, grad);
  }
  return loss.objective;
}

int timestep_subsample_count(int steps, double fraction) {
  return static_cast<int>(std::floor(fraction * steps + 1e-9));
}

std::vector<int> subsample_timesteps(int steps, double fraction, std::uint64_t run_seed, std::uint64_t prompt,
                                     std::size_t chain) {
  std::vector<int> order(static_cast<std::size_t>(steps));
  std::iota(order.begin(), order.end(), 0);
  const int keep = timestep_subsample_count(steps, fraction);
  if (keep >= steps) return order;
  NoiseStream rng({run_seed, Stream::kTimestep, prompt, 0, chain});
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.next_u64() % (i + 1));
    std::swap(order[i], order[j]);
  }
  order.resize(static_cast<std::size_t>(keep));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<double> group_advantages(std::span<const double> rewards, double epsilon, double clip) {
  const std::size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  if (n < 2) return adv;
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  if (sd == 0.0) return adv;
  for (std::size_t i = 0; i < n; ++i) adv[i] = std::clamp((rewards[i] - mean) / (sd + epsilon), -clip, clip);
  return adv;
}

std::uint64_t RunLog::total_nfe_old() const {
  std::uint64_t total = 0;
  for (const auto& r : records) total += r.nfe_old;
  return total;
}

std::uint64_t RunLog::total_nfe_new() const {
  std::uint64_t total = 0;
  for (const auto& r : records) total += r.nfe_new;
  return total;
}

double optimizer_step(PolicyParams& params, AdamW& optimizer) {
  const double norm = optimizer.step(params.values, params.grads);
  params.update_ema();
  params.zero_grad();
  return norm;
}

Dynamics branch_dynamics(const TrainerConfig& config, TrainMode mode, long iteration) {
  auto modes = mode == TrainMode::kHybrid ? hybrid_mode_schedule(iteration, config.schedule, config.hybrid_window)
                                          : sde_everywhere(config.schedule);
  return Dynamics(TimeGrid::make(config.schedule.depth, config.shift), config.eta, std::move(modes));
}

Dynamics sequential_dynamics(const TrainerConfig& config) {
  BranchSchedule chain;
  chain.depth = config.sequential_steps;
  chain.split_steps.clear();
  chain.final_step_deterministic = config.schedule.final_step_deterministic;
  return Dynamics(TimeGrid::make(chain.depth, config.shift), config.eta, sde_everywhere(chain));
}

namespace {

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Rollout output of one prompt.
struct PromptWork {
  EdgeBatch edges;
  std::vector<double> rewards;
  std::uint64_t nfe_old = 0;
};

void validate(const TrainerConfig& config) {
  config.schedule.validate();
  config.world.validate();
  config.reward.validate(config.world.dim);
  config.grpo.validate();
  config.pruning.validate(config.schedule);
  if (config.sequential_steps < 1) throw ConfigError("sampling_steps", "must be positive");
  if (config.threads < 1) throw ConfigError("threads", "must be positive");
}

using PromptFn = std::function<PromptWork(const PolicyParams& old, long iteration, std::uint64_t prompt)>;
using DynamicsFn = std::function<Dynamics(long iteration)>;

RunLog run_loop(const TrainerConfig& config, PolicyParams& policy, TrainMode mode, const PromptFn& make_prompt,
                const DynamicsFn& dynamics_at) {
  validate(config);
  if (policy.shape != MlpShape{config.world.dim + 1, policy.shape.hidden1, policy.shape.hidden2, config.world.dim}) {
    throw ConfigError("hidden", "policy shape does not match world dimension");
  }
  RunLog log;
  log.mode = mode;
  AdamW optimizer(policy.values.size(), config.optimizer);
  const auto prompts = static_cast<std::size_t>(config.grpo.prompts_per_iteration());
  const int iterations = std::max(config.grpo.iterations, 0);

  for (int it = 0; it <= iterations; ++it) {
    if (it == iterations && it > 0) break;
    const auto start = std::chrono::steady_clock::now();
    const PolicyParams old = policy;  // behavior snapshot
    std::vector<PromptWork> work(prompts);
    parallel_for(prompts, config.threads, [&](std::size_t j) {
      work[j] = make_prompt(old, it, static_cast<std::uint64_t>(it) * prompts + j);
    });

    IterationRecord rec;
    rec.iteration = it;
    double sum = 0.0;
    double sq = 0.0;
    std::size_t count = 0;
    for (const auto& w : work) {
      for (double r : w.rewards) {
        sum += r;
        sq += r * r;
        ++count;
      }
      rec.nfe_old += w.nfe_old;
    }
    rec.reward_mean = sum / static_cast<double>(count);
    rec.reward_std = std::sqrt(std::max(0.0, sq / static_cast<double>(count) - rec.reward_mean * rec.reward_mean));
    if (it == 0) log.initial_reward = rec.reward_mean;
    log.samples_per_iteration = count;
    if (iterations == 0) break;

    const Dynamics dynamics = dynamics_at(it);
    std::size_t active = 0;
    for (const auto& w : work) active += w.edges.size() > 0 ? 1 : 0;
    if (active == 0) {
      std::clog << "[branchgrpo] iteration " << it << ": empty gradient edge set, update skipped\n";
    }
    for (int u = 0; u < config.grpo.updates_per_iteration && active > 0; ++u) {
      std::vector<std::vector<double>> grads(prompts);
      std::vector<double> objectives(prompts, 0.0);
      parallel_for(prompts, config.threads, [&](std::size_t j) {
        if (work[j].edges.size() == 0) return;
        grads[j].assign(policy.values.size(), 0.0);
        objectives[j] = accumulate_policy_gradient(policy.values, policy.shape, dynamics, work[j].edges,
                                                   config.grpo.clip_epsilon, 1.0 / static_cast<double>(active),
                                                   grads[j]);
      });
      double objective = 0.0;
      policy.zero_grad();
      for (std::size_t j = 0; j < prompts; ++j) {
        if (grads[j].empty()) continue;
        objective += objectives[j] / static_cast<double>(active);
        // ascent on J == descent on -J
        for (std::size_t i = 0; i < grads[j].size(); ++i) policy.grads[i] -= grads[j][i];
        rec.nfe_new += work[j].edges.size();
      }
      if (!std::isfinite(objective)) throw NumericalError("non-finite objective at iteration " + std::to_string(it));
      const double norm = optimizer_step(policy, optimizer);
      if (u == 0) {
        rec.objective = objective;
        rec.grad_norm = norm;
      }
    }
    for (double v : policy.values) {
      if (!std::isfinite(v)) throw NumericalError("non-finite parameter after iteration " + std::to_string(it));
    }
    if (config.record_wall_time) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    log.records.push_back(rec);
    if (config.grpo.checkpoint_every > 0 && (it + 1) % config.grpo.checkpoint_every == 0 && config.on_checkpoint) {
      config.on_checkpoint(it + 1, policy);
    }
  }
  return log;
}

}  // namespace

RunLog train_branch(const TrainerConfig& config, PolicyParams& policy, TrainMode mode) {
  if (mode == TrainMode::kSequential) return train_sequential_baseline(config, policy);
  const auto& schedule = config.schedule;
  const std::size_t dim = static_cast<std::size_t>(config.world.dim);

  auto make_prompt = [&](const PolicyParams& old, long it, std::uint64_t prompt) {
    const Dynamics dynamics = branch_dynamics(config, mode, it);
    const auto z0 = root_noise(config.seed, prompt, dim);
    TrajectoryTree tree = rollout_tree(old.values, old.shape, dynamics, schedule, z0, config.seed, prompt);
    PromptWork w;
    w.rewards.reserve(tree.leaf_count());
    for (const auto& leaf : leaves(tree)) w.rewards.push_back(config.reward(tree.state(leaf)));
    for (double r : w.rewards) {
      if (!std::isfinite(r)) {
        if (config.on_numerical_failure) config.on_numerical_failure(tree);
        throw NumericalError("non-finite leaf reward for prompt " + std::to_string(prompt));
      }
    }
    CreditTable credit =
        compute_credit(tree, w.rewards, config.fusion, config.grpo.norm_epsilon, config.grpo.advantage_clip);
    if (config.grpo.zero_advantages) std::fill(credit.edge_advantage.begin(), credit.edge_advantage.end(), 0.0);
    assign_edge_advantages(tree, credit);
    apply_pruning(tree, credit, config.pruning, it);
    w.edges = gradient_edges(tree);
    w.nfe_old = tree.edge_count();
    return w;
  };
  auto dynamics_at = [&](long it) { return branch_dynamics(config, mode, it); };
  return run_loop(config, policy, mode, make_prompt, dynamics_at);
}

RunLog train_sequential_baseline(const TrainerConfig& config, PolicyParams& policy) {
  const Dynamics dynamics = sequential_dynamics(config);
  const std::size_t dim = static_cast<std::size_t>(config.world.dim);
  const auto chains = static_cast<std::size_t>(config.grpo.num_generations);
  const int steps = dynamics.steps();

  auto make_prompt = [&](const PolicyParams& old, long, std::uint64_t prompt) {
    std::vector<double> z0s;
    z0s.reserve(chains * dim);
    for (std::size_t c = 0; c < chains; ++c) {
      std::vector<double> z0;
      if (config.grpo.init_same_noise) {
        z0 = root_noise(config.seed, prompt, dim);
      } else {
        NoiseStream rng({config.seed, Stream::kRoot, prompt, 1, c});
        z0.resize(dim);
        rng.fill_normal(z0);
      }
      z0s.insert(z0s.end(), z0.begin(), z0.end());
    }
    const ChainBatch batch = rollout_chains(old.values, old.shape, dynamics, z0s, dim, config.seed, prompt);
    PromptWork w;
    for (std::size_t c = 0; c < chains; ++c) w.rewards.push_back(config.reward(batch.final_state(c)));
    for (double r : w.rewards) {
      if (!std::isfinite(r)) throw NumericalError("non-finite chain reward for prompt " + std::to_string(prompt));
    }
    auto adv = group_advantages(w.rewards, config.grpo.norm_epsilon, config.grpo.advantage_clip);
    if (config.grpo.zero_advantages) std::fill(adv.begin(), adv.end(), 0.0);
    w.edges.dim = dim;
    for (std::size_t c = 0; c < chains; ++c) {
      for (int step : subsample_timesteps(steps, config.grpo.timestep_fraction, config.seed, prompt, c)) {
        if (dynamics.mode(step) != StepMode::kSde) continue;
        w.edges.add(batch.state(c, step), batch.state(c, step + 1), step, adv[c], batch.logprob(c, step));
      }
    }
    w.nfe_old = static_cast<std::uint64_t>(chains) * static_cast<std::uint64_t>(steps);
    return w;
  };
  auto dynamics_at = [&](long) { return dynamics; };
  return run_loop(config, policy, TrainMode::kSequential, make_prompt, dynamics_at);
}

RunLog train(const TrainerConfig& config, PolicyParams& policy, TrainMode mode) {
  if (mode == TrainMode::kSequential) return train_sequential_baseline(config, policy);
  return train_branch(config, policy, mode);
}

}  // namespace branchgrpo

namespace branchgrpo {

EvalReport evaluate_policy(const TrainerConfig& config, std::span<const double> params, const MlpShape& shape,
                           int samples, std::uint64_t sampler_seed, bool deterministic) {
  if (samples < 1) throw ConfigError("eval_samples", "must be positive");
  auto modes = sde_everywhere(config.schedule);
  if (deterministic) std::fill(modes.begin(), modes.end(), StepMode::kOde);
  const Dynamics dynamics(TimeGrid::make(config.schedule.depth, config.shift), config.eta, modes);
  const auto dim = static_cast<std::size_t>(config.world.dim);
  const std::size_t target_mode = config.world.nearest_mode(config.reward.target);

  std::vector<double> x(dim);
  std::vector<double> v(dim);
  std::vector<double> mean(dim);
  std::vector<double> noise(dim);
  EvalReport out;
  out.samples = static_cast<std::size_t>(samples);
  double sum = 0.0;
  double sq = 0.0;
  std::size_t on_target = 0;
  std::size_t near = 0;
  for (int i = 0; i < samples; ++i) {
    NoiseStream rng({sampler_seed, Stream::kEval, static_cast<std::uint64_t>(i), 0, 0});
    rng.fill_normal(x);
    for (int step = 0; step < dynamics.steps(); ++step) {
      forward_velocity(params, shape, x, dynamics.grid().time(step), v);
      dynamics.mean_update(x, v, step, mean);
      const double scale = dynamics.noise_scale(step);
      if (scale > 0.0) {
        rng.fill_normal(noise);
        for (std::size_t k = 0; k < dim; ++k) x[k] = mean[k] + scale * noise[k];
      } else {
        x = mean;
      }
    }
    const double r = config.reward(x);
    sum += r;
    sq += r * r;
    on_target += config.world.nearest_mode(x) == target_mode ? 1 : 0;
    near += config.world.scaled_distance_to_nearest(x) <= 3.0 ? 1 : 0;
  }
  const double n = static_cast<double>(samples);
  out.reward_mean = sum / n;
  out.reward_std = std::sqrt(std::max(0.0, sq / n - out.reward_mean * out.reward_mean));
  out.target_mode_fraction = static_cast<double>(on_target) / n;
  out.within_three_scales = static_cast<double>(near) / n;
  return out;
}

}  // namespace branchgrpo
