#ifndef BRANCHGRPO_TREE_HPP
#define BRANCHGRPO_TREE_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace branchgrpo {

/// Branching layout of one rollout tree.
struct BranchSchedule {
  int depth = 20;                          ///< number of denoising steps T
  std::vector<int> split_steps{0, 3, 6, 9};
  int branch_factor = 2;                   ///< K
  double correlation = 4.0;                ///< s
  bool final_step_deterministic = true;
  std::size_t leaf_budget = 256;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  bool is_split(int step) const;
  /// Number of split steps strictly before `depth`.
  int splits_before(int depth) const;
  /// Node count at `depth` (K^splits_before(depth)).
  std::size_t width_at(int depth) const;
  /// w = K^|split_steps|.
  std::size_t leaf_count() const;
};

BranchSchedule dense_schedule();   // (0,3,6,9)
BranchSchedule mixed_schedule();   // (0,4,8,12)
BranchSchedule sparse_schedule();  // (0,5,10,15)

/// Node address: depth in [0, T] and breadth index within that depth.
struct NodeId {
  int depth = 0;
  std::size_t index = 0;

  friend bool operator==(const NodeId&, const NodeId&) = default;
};

/// Rollout tree stored as flat per-depth arrays. Node (d, b) has parent
/// (d-1, b/K) when step d-1 splits and (d-1, b) otherwise. Every non-root
/// node owns the data of its incoming edge.
class TrajectoryTree {
 public:
  TrajectoryTree(BranchSchedule schedule, std::span<const double> root_state);

  const BranchSchedule& schedule() const noexcept { return schedule_; }
  std::size_t dim() const noexcept { return dim_; }
  int depth() const noexcept { return schedule_.depth; }
  std::size_t width(int depth) const { return widths_.at(static_cast<std::size_t>(depth)); }
  std::size_t leaf_count() const noexcept { return widths_.back(); }
  std::size_t node_count() const noexcept { return offsets_.back(); }
  std::size_t edge_count() const noexcept { return node_count() - 1; }

  std::size_t flat_index(NodeId node) const;
  NodeId node_at(std::size_t flat) const;
  NodeId root() const noexcept { return {0, 0}; }
  std::optional<NodeId> parent(NodeId node) const;
  std::vector<NodeId> children(NodeId node) const;
  /// Contiguous range [first, last) of leaf breadth indices below `node`.
  std::pair<std::size_t, std::size_t> leaf_range(NodeId node) const;

  std::span<double> state(NodeId node);
  std::span<const double> state(NodeId node) const;
  bool state_set(NodeId node) const;
  void mark_state_set(NodeId node);

  // Incoming-edge data, valid for non-root nodes.
  std::span<double> noise(NodeId node);
  std::span<const double> noise(NodeId node) const;
  double behavior_logprob(NodeId node) const;
  bool stochastic(NodeId node) const;
  /// Records the SDE transition density; ODE edges keep stochastic() false.
  void set_transition(NodeId node, bool stochastic, double logprob);

  std::optional<double> advantage(NodeId node) const;
  void set_advantage(NodeId node, double value);
  bool in_gradient_set(NodeId node) const;
  bool mask_set() const noexcept { return mask_set_; }
  /// One flag per flat node index (root entry ignored).
  void set_gradient_mask(std::span<const std::uint8_t> mask);
  std::vector<std::uint8_t> gradient_mask() const { return in_gradient_; }

 private:
  void check(NodeId node) const;

  BranchSchedule schedule_;
  std::size_t dim_;
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;  // size T+2, offsets_[d] = first flat index at depth d
  std::vector<double> states_;
  std::vector<std::uint8_t> state_set_;
  std::vector<double> noises_;
  std::vector<double> logprobs_;
  std::vector<std::uint8_t> stochastic_;
  std::vector<double> advantages_;
  std::vector<std::uint8_t> has_advantage_;
  std::vector<std::uint8_t> in_gradient_;
  bool mask_set_ = false;
};

/// Allocates the branching topology; only the root state is set.
TrajectoryTree build_tree_skeleton(const BranchSchedule& schedule, std::span<const double> root_state);

std::vector<NodeId> leaves(const TrajectoryTree& tree);
std::vector<NodeId> nodes_at_depth(const TrajectoryTree& tree, int depth);
std::vector<NodeId> descendant_leaves(const TrajectoryTree& tree, NodeId node);

/// Total denoiser evaluations of one tree. One evaluation per edge: every
/// child state, including each of the K children at a split, is one
/// transition of the old policy.
std::size_t tree_evaluation_count(const BranchSchedule& schedule);

/// Evaluations per final sample: tree_evaluation_count / leaf count.
double average_per_sample_nfe(const BranchSchedule& schedule);

/// Edges in the gradient set per leaf. Throws std::logic_error when no
/// gradient mask was installed.
double gradient_edge_nfe(const TrajectoryTree& tree);

/// {schedule, nodes: [{depth, breadth_index, state, logprob, noise}],
///  edges: [{child, depth, advantage, in_gradient_set}]}
nlohmann::json tree_to_json(const TrajectoryTree& tree);
nlohmann::json schedule_to_json(const BranchSchedule& schedule);

}  // namespace branchgrpo

#endif
