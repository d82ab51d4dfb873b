#ifndef BRANCHGRPO_ROLLOUT_HPP
#define BRANCHGRPO_ROLLOUT_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "branchgrpo/dynamics.hpp"
#include "branchgrpo/policy.hpp"
#include "branchgrpo/rng.hpp"
#include "branchgrpo/tree.hpp"

namespace branchgrpo {

/// z_0 ~ N(0, I) for one prompt; shared by every rollout of that prompt.
std::vector<double> root_noise(std::uint64_t run_seed, std::uint64_t prompt, std::size_t dim);

/// Expands the tree under frozen `params`. Node (d, b) draws from the key
/// (run_seed, kBranch, prompt, d, b): lane 0 is xi_0 (or the plain step
/// noise), lane 1 + k is eta_k at a split. One velocity evaluation per edge.
TrajectoryTree rollout_tree(std::span<const double> params, const MlpShape& shape, const Dynamics& dynamics,
                            const BranchSchedule& schedule, std::span<const double> z0, std::uint64_t run_seed,
                            std::uint64_t prompt);

/// Independent sequential chains (the baseline's rollouts).
struct ChainBatch {
  int steps = 0;
  std::size_t dim = 0;
  std::size_t chains = 0;
  std::vector<double> states;    ///< [chain][step 0..T][dim]
  std::vector<double> logprobs;  ///< [chain][step], NaN at ODE steps

  std::span<const double> state(std::size_t chain, int step) const;
  std::span<const double> final_state(std::size_t chain) const { return state(chain, steps); }
  double logprob(std::size_t chain, int step) const;
};

/// `z0s` holds one start state per chain (chains x dim, flattened). Chain c
/// draws step noise from (run_seed, kSequential, prompt, step, c).
ChainBatch rollout_chains(std::span<const double> params, const MlpShape& shape, const Dynamics& dynamics,
                          std::span<const double> z0s, std::size_t dim, std::uint64_t run_seed, std::uint64_t prompt);

}  // namespace branchgrpo

#endif
