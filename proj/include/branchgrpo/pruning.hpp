#ifndef BRANCHGRPO_PRUNING_HPP
#define BRANCHGRPO_PRUNING_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "branchgrpo/credit.hpp"
#include "branchgrpo/dynamics.hpp"
#include "branchgrpo/tree.hpp"

namespace branchgrpo {

enum class WidthMode { kNone, kParentTop1, kExtremeB };

struct PruningConfig {
  WidthMode width_mode = WidthMode::kNone;
  int extreme_b = 1;
  SlidingWindow depth_window{};  ///< skipped depths when enabled

  void validate(const BranchSchedule& schedule) const;
};

/// Index of the largest value; the lowest index wins exact ties.
std::size_t tie_break(std::span<const double> values);

/// Leaves whose root-to-leaf path stays in the gradient set. Ranks by the
/// leaf entries of `credit.fused_value` (the raw leaf rewards).
std::vector<bool> apply_width_pruning(const TrajectoryTree& tree, const CreditTable& credit,
                                      const PruningConfig& config);

/// Pruned depth set D for `iteration`; empty when the window is disabled.
std::vector<int> apply_depth_pruning(const BranchSchedule& schedule, long iteration, const PruningConfig& config);

/// Per-node gradient flags (flat index). Starts from every stochastic edge.
using GradientMask = std::vector<std::uint8_t>;

GradientMask stochastic_edge_mask(const TrajectoryTree& tree);
/// Clears edges whose subtree holds no kept leaf.
void restrict_to_leaves(GradientMask& mask, const TrajectoryTree& tree, const std::vector<bool>& keep);
/// Clears edges whose depth (child depth - 1) is in `depths`.
void restrict_depths(GradientMask& mask, const TrajectoryTree& tree, std::span<const int> depths);

/// Width and depth pruning combined and installed on the tree.
GradientMask apply_pruning(TrajectoryTree& tree, const CreditTable& credit, const PruningConfig& config,
                           long iteration);

}  // namespace branchgrpo

#endif
