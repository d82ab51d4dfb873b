#include "branchgrpo/pruning.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "branchgrpo/errors.hpp"

namespace branchgrpo {

void PruningConfig::validate(const BranchSchedule& schedule) const {
  if (width_mode == WidthMode::kExtremeB) {
    if (extreme_b < 1) throw ConfigError("extreme_b", "must be positive");
    if (2 * static_cast<std::size_t>(extreme_b) > schedule.leaf_count()) {
      throw ConfigError("extreme_b", "2b = " + std::to_string(2 * extreme_b) + " exceeds leaf count " +
                                         std::to_string(schedule.leaf_count()));
    }
  }
  if (depth_window.enabled) depth_window.validate(schedule.depth);
}

std::size_t tie_break(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("tie_break on empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<bool> apply_width_pruning(const TrajectoryTree& tree, const CreditTable& credit,
                                      const PruningConfig& config) {
  config.validate(tree.schedule());
  const std::size_t w = tree.leaf_count();
  const std::size_t first_leaf = tree.flat_index({tree.depth(), 0});
  if (credit.fused_value.size() != tree.node_count()) throw std::invalid_argument("credit table does not match tree");
  const std::span<const double> rewards(credit.fused_value.data() + first_leaf, w);

  switch (config.width_mode) {
    case WidthMode::kNone:
      return std::vector<bool>(w, true);
    case WidthMode::kParentTop1: {
      const auto& splits = tree.schedule().split_steps;
      if (splits.empty()) return std::vector<bool>(w, true);
      // After the last split every child is a chain ending in one leaf, so
      // the K siblings of a parent are K consecutive leaves.
      const auto k = static_cast<std::size_t>(tree.schedule().branch_factor);
      std::vector<bool> keep(w, false);
      for (std::size_t parent = 0; parent < w / k; ++parent) {
        keep[parent * k + tie_break(rewards.subspan(parent * k, k))] = true;
      }
      return keep;
    }
    case WidthMode::kExtremeB: {
      const auto b = static_cast<std::size_t>(config.extreme_b);
      std::vector<std::size_t> order(w);
      std::iota(order.begin(), order.end(), std::size_t{0});
      // Descending reward; equal rewards keep the lower breadth index first.
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t c) { return rewards[a] > rewards[c]; });
      std::vector<bool> keep(w, false);
      for (std::size_t i = 0; i < b; ++i) keep[order[i]] = true;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t c) { return rewards[a] < rewards[c]; });
      for (std::size_t i = 0; i < b; ++i) keep[order[i]] = true;
      return keep;
    }
  }
  return std::vector<bool>(w, true);
}

std::vector<int> apply_depth_pruning(const BranchSchedule& schedule, long iteration, const PruningConfig& config) {
  if (!config.depth_window.enabled) return {};
  config.depth_window.validate(schedule.depth);
  return config.depth_window.steps(iteration, schedule.depth);
}

GradientMask stochastic_edge_mask(const TrajectoryTree& tree) {
  GradientMask mask(tree.node_count(), 0);
  for (std::size_t i = 1; i < tree.node_count(); ++i) mask[i] = tree.stochastic(tree.node_at(i)) ? 1 : 0;
  return mask;
}

void restrict_to_leaves(GradientMask& mask, const TrajectoryTree& tree, const std::vector<bool>& keep) {
  if (keep.size() != tree.leaf_count()) throw std::invalid_argument("leaf keep-set size mismatch");
  for (std::size_t i = 1; i < tree.node_count(); ++i) {
    const auto [first, last] = tree.leaf_range(tree.node_at(i));
    bool any = false;
    for (std::size_t l = first; l < last && !any; ++l) any = keep[l];
    if (!any) mask[i] = 0;
  }
}

void restrict_depths(GradientMask& mask, const TrajectoryTree& tree, std::span<const int> depths) {
  for (int d : depths) {
    if (d < 0 || d >= tree.depth()) continue;
    const std::size_t first = tree.flat_index({d + 1, 0});
    const std::size_t w = tree.width(d + 1);
    std::fill(mask.begin() + static_cast<std::ptrdiff_t>(first), mask.begin() + static_cast<std::ptrdiff_t>(first + w),
              std::uint8_t{0});
  }
}

GradientMask apply_pruning(TrajectoryTree& tree, const CreditTable& credit, const PruningConfig& config,
                           long iteration) {
  GradientMask mask = stochastic_edge_mask(tree);
  restrict_to_leaves(mask, tree, apply_width_pruning(tree, credit, config));
  const auto depths = apply_depth_pruning(tree.schedule(), iteration, config);
  restrict_depths(mask, tree, depths);
  tree.set_gradient_mask(mask);
  return mask;
}

}  // namespace branchgrpo
