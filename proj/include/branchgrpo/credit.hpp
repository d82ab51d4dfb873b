#ifndef BRANCHGRPO_CREDIT_HPP
#define BRANCHGRPO_CREDIT_HPP

#include <iosfwd>
#include <span>
#include <vector>

#include "branchgrpo/tree.hpp"

namespace branchgrpo {

enum class FusionMode {
  kSoftmaxPath,          ///< w ~ exp(beta * s_l), s_l = log p_beh(l | n)
  kUniform,              ///< plain average over descendant leaves
  kImportanceSampling,   ///< (1/|L|) sum (p/q) r, proposal supplied by caller
  kSelfNormalizedIs,     ///< sum (p/q) r / sum (p/q)
};

struct FusionConfig {
  double beta = 1.0;
  FusionMode mode = FusionMode::kSoftmaxPath;
};

/// Per-tree credit assignment. Vectors are indexed by flat node index.
struct CreditTable {
  std::vector<double> fused_value;     ///< r_bar(n)
  std::vector<double> depth_mean;      ///< mu_d, d = 0..T
  std::vector<double> depth_std;       ///< population sigma_d
  double epsilon = 1e-8;
  double advantage_clip = 5.0;         ///< A_max
  std::vector<double> raw_advantage;   ///< A_d(n) before clipping
  std::vector<double> edge_advantage;  ///< clip(A_d(child)), root entry 0

  friend bool operator==(const CreditTable&, const CreditTable&) = default;
};

/// Sum of recorded behavior log-probs on the node -> leaf path for every
/// descendant leaf of `node` (deterministic edges contribute nothing).
std::vector<double> path_logprobs(const TrajectoryTree& tree, NodeId node);

/// Fused value r_bar(n) for every node. Leaves keep their own reward.
/// `proposal_edge_logprobs` (one entry per flat node) is required by the two
/// importance-sampling modes, whose target is the recorded behavior density.
std::vector<double> fuse_rewards(const TrajectoryTree& tree, std::span<const double> leaf_rewards,
                                 const FusionConfig& config,
                                 std::span<const double> proposal_edge_logprobs = {});

struct SnisResult {
  std::vector<double> fused_value;
  std::vector<double> ess;
};

/// Self-normalized importance weights w = exp(target - proposal) along each
/// node -> leaf path, plus the effective sample size per node.
SnisResult fuse_rewards_snis(const TrajectoryTree& tree, std::span<const double> leaf_rewards,
                             std::span<const double> proposal_edge_logprobs,
                             std::span<const double> target_edge_logprobs);

/// (sum w)^2 / sum w^2; 0 for an all-zero weight vector.
double effective_sample_size(std::span<const double> weights);

/// Population statistics per depth and A_d(n) = (r_bar - mu_d) / (sigma_d + eps).
/// Depths with one node or zero spread get A = 0. Edge advantages inherit the
/// child's clipped value.
void depth_normalize(CreditTable& table, const TrajectoryTree& tree);

/// Fusion followed by depth normalization.
CreditTable compute_credit(const TrajectoryTree& tree, std::span<const double> leaf_rewards,
                           const FusionConfig& fusion, double epsilon = 1e-8, double advantage_clip = 5.0);

/// Copies the table's edge advantages onto the tree.
void assign_edge_advantages(TrajectoryTree& tree, const CreditTable& table);

/// Centred values v - mean(v). Throws std::logic_error if they fail to sum
/// to zero within floating tolerance.
std::vector<double> group_baseline_check(std::span<const double> values);

/// CSV: node_id,depth,breadth_index,fused_value,advantage
void write_credit_csv(std::ostream& out, const TrajectoryTree& tree, const CreditTable& table);

}  // namespace branchgrpo

#endif
