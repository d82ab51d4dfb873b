#include "branchgrpo/credit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>

#include "branchgrpo/errors.hpp"

namespace branchgrpo {

namespace {

void check_rewards(const TrajectoryTree& tree, std::span<const double> leaf_rewards) {
  if (leaf_rewards.size() != tree.leaf_count()) {
    throw std::invalid_argument("expected " + std::to_string(tree.leaf_count()) + " leaf rewards, got " +
                                std::to_string(leaf_rewards.size()));
  }
  for (double r : leaf_rewards) {
    if (!std::isfinite(r)) throw NumericalError("non-finite leaf reward");
  }
}

/// Cumulative root -> node sums of `edge_values` over stochastic edges.
std::vector<double> cumulative_from_root(const TrajectoryTree& tree, std::span<const double> edge_values,
                                         bool only_stochastic) {
  std::vector<double> cum(tree.node_count(), 0.0);
  for (std::size_t i = 1; i < tree.node_count(); ++i) {
    const NodeId node = tree.node_at(i);
    const std::size_t p = tree.flat_index(*tree.parent(node));
    double v = 0.0;
    if (!only_stochastic || tree.stochastic(node)) {
      v = edge_values[i];
      if (!std::isfinite(v)) {
        throw NumericalError("non-finite edge log-prob at depth " + std::to_string(node.depth) + ", index " +
                             std::to_string(node.index));
      }
    }
    cum[i] = cum[p] + v;
  }
  return cum;
}

std::vector<double> behavior_edge_logprobs(const TrajectoryTree& tree) {
  std::vector<double> lp(tree.node_count(), 0.0);
  for (std::size_t i = 1; i < tree.node_count(); ++i) {
    const NodeId node = tree.node_at(i);
    if (tree.stochastic(node)) lp[i] = tree.behavior_logprob(node);
  }
  return lp;
}

std::size_t leaf_flat(const TrajectoryTree& tree, std::size_t leaf) { return tree.flat_index({tree.depth(), leaf}); }

/// Softmax-weighted average of rewards over `scores` with max subtraction.
double softmax_average(std::span<const double> scores, std::span<const double> rewards) {
  const double top = *std::max_element(scores.begin(), scores.end());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double w = std::exp(scores[i] - top);
    num += w * rewards[i];
    den += w;
  }
  return num / den;
}

}  // namespace

std::vector<double> path_logprobs(const TrajectoryTree& tree, NodeId node) {
  const auto lp = behavior_edge_logprobs(tree);
  const auto cum = cumulative_from_root(tree, lp, true);
  const auto [first, last] = tree.leaf_range(node);
  const double base = cum[tree.flat_index(node)];
  std::vector<double> out;
  out.reserve(last - first);
  for (std::size_t l = first; l < last; ++l) out.push_back(cum[leaf_flat(tree, l)] - base);
  return out;
}

std::vector<double> fuse_rewards(const TrajectoryTree& tree, std::span<const double> leaf_rewards,
                                 const FusionConfig& config, std::span<const double> proposal_edge_logprobs) {
  check_rewards(tree, leaf_rewards);
  if (!(config.beta >= 0.0) || !std::isfinite(config.beta)) throw ConfigError("beta", "must be finite and >= 0");
  const std::size_t n = tree.node_count();
  std::vector<double> fused(n, 0.0);

  std::vector<double> cum;
  const bool importance =
      config.mode == FusionMode::kImportanceSampling || config.mode == FusionMode::kSelfNormalizedIs;
  if (importance) {
    if (proposal_edge_logprobs.size() != n) {
      throw std::invalid_argument("importance-sampling fusion needs one proposal log-prob per node");
    }
    const auto target = behavior_edge_logprobs(tree);
    std::vector<double> diff(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) diff[i] = target[i] - proposal_edge_logprobs[i];
    cum = cumulative_from_root(tree, diff, true);
  } else if (config.mode == FusionMode::kSoftmaxPath && config.beta != 0.0) {
    cum = cumulative_from_root(tree, behavior_edge_logprobs(tree), true);
  }

  std::vector<double> scores;
  for (std::size_t i = 0; i < n; ++i) {
    const NodeId node = tree.node_at(i);
    const auto [first, last] = tree.leaf_range(node);
    const std::span<const double> r = leaf_rewards.subspan(first, last - first);
    if (last - first == 1) {
      fused[i] = r[0];
      continue;
    }
    const bool uniform = config.mode == FusionMode::kUniform ||
                         (config.mode == FusionMode::kSoftmaxPath && config.beta == 0.0);
    if (uniform) {
      double sum = 0.0;
      for (double v : r) sum += v;
      fused[i] = sum / static_cast<double>(r.size());
      continue;
    }
    scores.resize(r.size());
    for (std::size_t l = first; l < last; ++l) {
      const double s = cum[leaf_flat(tree, l)] - cum[i];
      scores[l - first] = config.mode == FusionMode::kSoftmaxPath ? config.beta * s : s;
    }
    if (config.mode == FusionMode::kImportanceSampling) {
      double sum = 0.0;
      double weight_sum = 0.0;
      for (std::size_t k = 0; k < r.size(); ++k) {
        const double w = std::exp(scores[k]);
        sum += w * r[k];
        weight_sum += w;
      }
      if (!(weight_sum > 0.0) || !std::isfinite(weight_sum)) {
        throw NumericalError("importance weights degenerate (sum " + std::to_string(weight_sum) + ") at node depth " +
                             std::to_string(node.depth));
      }
      fused[i] = sum / static_cast<double>(r.size());
    } else {
      fused[i] = softmax_average(scores, r);
    }
  }
  return fused;
}

double effective_sample_size(std::span<const double> weights) {
  double sum = 0.0;
  double sq = 0.0;
  for (double w : weights) {
    sum += w;
    sq += w * w;
  }
  if (sq == 0.0) return 0.0;
  return sum * sum / sq;
}

SnisResult fuse_rewards_snis(const TrajectoryTree& tree, std::span<const double> leaf_rewards,
                             std::span<const double> proposal_edge_logprobs,
                             std::span<const double> target_edge_logprobs) {
  check_rewards(tree, leaf_rewards);
  const std::size_t n = tree.node_count();
  if (proposal_edge_logprobs.size() != n || target_edge_logprobs.size() != n) {
    throw std::invalid_argument("fuse_rewards_snis needs one log-prob per node for proposal and target");
  }
  std::vector<double> diff(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) diff[i] = target_edge_logprobs[i] - proposal_edge_logprobs[i];
  const auto cum = cumulative_from_root(tree, diff, false);

  SnisResult out;
  out.fused_value.assign(n, 0.0);
  out.ess.assign(n, 1.0);
  std::vector<double> w;
  for (std::size_t i = 0; i < n; ++i) {
    const NodeId node = tree.node_at(i);
    const auto [first, last] = tree.leaf_range(node);
    w.resize(last - first);
    for (std::size_t l = first; l < last; ++l) w[l - first] = cum[leaf_flat(tree, l)] - cum[i];
    const double top = *std::max_element(w.begin(), w.end());
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      w[k] = std::exp(w[k] - top);
      num += w[k] * leaf_rewards[first + k];
      den += w[k];
    }
    if (!(den > 0.0) || !std::isfinite(den)) {
      throw NumericalError("self-normalized importance weights are all zero at depth " + std::to_string(node.depth));
    }
    out.fused_value[i] = num / den;
    out.ess[i] = effective_sample_size(w);
  }
  return out;
}

void depth_normalize(CreditTable& table, const TrajectoryTree& tree) {
  const std::size_t n = tree.node_count();
  if (table.fused_value.size() != n) throw std::invalid_argument("credit table does not match tree");
  const auto levels = static_cast<std::size_t>(tree.depth()) + 1;
  table.depth_mean.assign(levels, 0.0);
  table.depth_std.assign(levels, 0.0);
  table.raw_advantage.assign(n, 0.0);
  table.edge_advantage.assign(n, 0.0);

  for (int d = 0; d <= tree.depth(); ++d) {
    const std::size_t w = tree.width(d);
    const std::size_t first = tree.flat_index({d, 0});
    const std::span<const double> values(table.fused_value.data() + first, w);
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(w);
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w);
    const double sd = std::sqrt(var);
    table.depth_mean[static_cast<std::size_t>(d)] = mean;
    table.depth_std[static_cast<std::size_t>(d)] = sd;
    if (w < 2 || sd == 0.0) continue;
    const double denom = sd + table.epsilon;
    for (std::size_t b = 0; b < w; ++b) {
      const double a = (values[b] - mean) / denom;
      table.raw_advantage[first + b] = a;
      table.edge_advantage[first + b] = std::clamp(a, -table.advantage_clip, table.advantage_clip);
    }
  }
  table.edge_advantage[0] = 0.0;
}

CreditTable compute_credit(const TrajectoryTree& tree, std::span<const double> leaf_rewards,
                           const FusionConfig& fusion, double epsilon, double advantage_clip) {
  if (!(epsilon >= 0.0)) throw ConfigError("norm_epsilon", "must be non-negative");
  if (!(advantage_clip > 0.0)) throw ConfigError("advantage_clip", "must be positive");
  CreditTable table;
  table.epsilon = epsilon;
  table.advantage_clip = advantage_clip;
  table.fused_value = fuse_rewards(tree, leaf_rewards, fusion);
  depth_normalize(table, tree);
  return table;
}

void assign_edge_advantages(TrajectoryTree& tree, const CreditTable& table) {
  for (std::size_t i = 1; i < tree.node_count(); ++i) tree.set_advantage(tree.node_at(i), table.edge_advantage[i]);
}

std::vector<double> group_baseline_check(std::span<const double> values) {
  if (values.empty()) return {};
  double mean = 0.0;
  double scale = 0.0;
  for (double v : values) {
    mean += v;
    scale = std::max(scale, std::abs(v));
  }
  mean /= static_cast<double>(values.size());
  std::vector<double> out(values.begin(), values.end());
  double sum = 0.0;
  for (double& v : out) {
    v -= mean;
    sum += v;
  }
  const double tol = 1e-12 * std::max(1.0, scale) * static_cast<double>(values.size());
  if (std::abs(sum) > tol) throw std::logic_error("group baseline residuals do not sum to zero");
  return out;
}

void write_credit_csv(std::ostream& out, const TrajectoryTree& tree, const CreditTable& table) {
  out << "node_id,depth,breadth_index,fused_value,advantage\n";
  const auto precision = out.precision(17);
  for (std::size_t i = 0; i < tree.node_count(); ++i) {
    const NodeId node = tree.node_at(i);
    out << i << ',' << node.depth << ',' << node.index << ',' << table.fused_value[i] << ','
        << table.edge_advantage[i] << '\n';
  }
  out.precision(precision);
}

}  // namespace branchgrpo
