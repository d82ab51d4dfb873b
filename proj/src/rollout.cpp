#include "branchgrpo/rollout.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace branchgrpo {

std::vector<double> root_noise(std::uint64_t run_seed, std::uint64_t prompt, std::size_t dim) {
  NoiseStream rng({run_seed, Stream::kRoot, prompt, 0, 0});
  std::vector<double> z(dim);
  rng.fill_normal(z);
  return z;
}

TrajectoryTree rollout_tree(std::span<const double> params, const MlpShape& shape, const Dynamics& dynamics,
                            const BranchSchedule& schedule, std::span<const double> z0, std::uint64_t run_seed,
                            std::uint64_t prompt) {
  if (dynamics.steps() != schedule.depth) throw std::invalid_argument("dynamics and schedule depth differ");
  TrajectoryTree tree = build_tree_skeleton(schedule, z0);
  const std::size_t dim = tree.dim();
  const auto k = static_cast<std::size_t>(schedule.branch_factor);
  const double norm = 1.0 / std::sqrt(1.0 + schedule.correlation * schedule.correlation);
  std::vector<double> velocity(dim), mean(dim), shared(dim), eta(dim);

  for (int step = 0; step < schedule.depth; ++step) {
    const double t = dynamics.grid().time(step);
    const double scale = dynamics.noise_scale(step);
    const bool sde = dynamics.mode(step) == StepMode::kSde && scale > 0.0;
    const bool split = schedule.is_split(step);
    for (std::size_t b = 0; b < tree.width(step); ++b) {
      const NodeId node{step, b};
      forward_velocity(params, shape, tree.state(node), t, velocity);
      dynamics.mean_update(tree.state(node), velocity, step, mean);
      const NoiseKey key{run_seed, Stream::kBranch, prompt, static_cast<std::uint64_t>(step), b};
      if (split) {
        NoiseStream shared_rng(key, 0);
        shared_rng.fill_normal(shared);
      }
      for (const NodeId child : tree.children(node)) {
        auto noise = tree.noise(child);
        if (sde) {
          if (split) {
            NoiseStream innovation(key, 1 + child.index % k);
            innovation.fill_normal(eta);
            for (std::size_t i = 0; i < dim; ++i) noise[i] = (shared[i] + schedule.correlation * eta[i]) * norm;
          } else {
            NoiseStream rng(key, 0);
            rng.fill_normal(noise);
          }
        }
        auto next = dynamics.sde_step(tree.state(node), step, noise, mean);
        std::copy(next.begin(), next.end(), tree.state(child).begin());
        tree.mark_state_set(child);
        tree.set_transition(child, sde, sde ? dynamics.transition_logprob(mean, next, step) : 0.0);
      }
    }
  }
  return tree;
}

std::span<const double> ChainBatch::state(std::size_t chain, int step) const {
  const std::size_t stride = static_cast<std::size_t>(steps + 1) * dim;
  return {states.data() + chain * stride + static_cast<std::size_t>(step) * dim, dim};
}

double ChainBatch::logprob(std::size_t chain, int step) const {
  return logprobs[chain * static_cast<std::size_t>(steps) + static_cast<std::size_t>(step)];
}

ChainBatch rollout_chains(std::span<const double> params, const MlpShape& shape, const Dynamics& dynamics,
                          std::span<const double> z0s, std::size_t dim, std::uint64_t run_seed,
                          std::uint64_t prompt) {
  if (dim == 0 || z0s.size() % dim != 0) throw std::invalid_argument("rollout_chains: bad start states");
  ChainBatch batch;
  batch.steps = dynamics.steps();
  batch.dim = dim;
  batch.chains = z0s.size() / dim;
  const std::size_t stride = static_cast<std::size_t>(batch.steps + 1) * dim;
  batch.states.assign(batch.chains * stride, 0.0);
  batch.logprobs.assign(batch.chains * static_cast<std::size_t>(batch.steps),
                        std::numeric_limits<double>::quiet_NaN());
  std::vector<double> velocity(dim), mean(dim), noise(dim);
  for (std::size_t c = 0; c < batch.chains; ++c) {
    double* z = batch.states.data() + c * stride;
    std::copy(z0s.begin() + static_cast<std::ptrdiff_t>(c * dim),
              z0s.begin() + static_cast<std::ptrdiff_t>((c + 1) * dim), z);
    for (int step = 0; step < batch.steps; ++step) {
      const std::span<const double> cur(z + static_cast<std::size_t>(step) * dim, dim);
      forward_velocity(params, shape, cur, dynamics.grid().time(step), velocity);
      dynamics.mean_update(cur, velocity, step, mean);
      const double scale = dynamics.noise_scale(step);
      const bool sde = dynamics.mode(step) == StepMode::kSde && scale > 0.0;
      std::fill(noise.begin(), noise.end(), 0.0);
      if (sde) {
        NoiseStream rng({run_seed, Stream::kSequential, prompt, static_cast<std::uint64_t>(step), c});
        rng.fill_normal(noise);
      }
      auto next = dynamics.sde_step(cur, step, noise, mean);
      std::copy(next.begin(), next.end(), z + static_cast<std::size_t>(step + 1) * dim);
      if (sde) {
        batch.logprobs[c * static_cast<std::size_t>(batch.steps) + static_cast<std::size_t>(step)] =
            dynamics.transition_logprob(mean, next, step);
      }
    }
  }
  return batch;
}

}  // namespace branchgrpo
