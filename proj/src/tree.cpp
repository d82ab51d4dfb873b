#include "branchgrpo/tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "branchgrpo/errors.hpp"

namespace branchgrpo {

void BranchSchedule::validate() const {
  if (depth < 1) throw ConfigError("depth", "must be a positive integer");
  if (branch_factor < 2) throw ConfigError("branch_factor", "must be at least 2");
  if (!(correlation >= 0.0) || !std::isfinite(correlation)) {
    throw ConfigError("correlation", "must be finite and non-negative");
  }
  for (std::size_t i = 0; i < split_steps.size(); ++i) {
    const int step = split_steps[i];
    if (step < 0 || step >= depth) {
      throw ConfigError("split_steps", "step " + std::to_string(step) + " outside [0, " + std::to_string(depth) + ")");
    }
    if (i > 0 && split_steps[i - 1] >= step) throw ConfigError("split_steps", "must be strictly increasing");
  }
  if (final_step_deterministic && is_split(depth - 1)) {
    throw ConfigError("split_steps", "final step is deterministic and cannot split");
  }
  double leaves = 1.0;
  for (std::size_t i = 0; i < split_steps.size(); ++i) leaves *= branch_factor;
  if (leaves > static_cast<double>(leaf_budget)) {
    throw ConfigError("split_steps", "leaf count " + std::to_string(static_cast<long long>(leaves)) +
                                         " exceeds leaf budget " + std::to_string(leaf_budget));
  }
}

bool BranchSchedule::is_split(int step) const {
  return std::binary_search(split_steps.begin(), split_steps.end(), step);
}

int BranchSchedule::splits_before(int d) const {
  return static_cast<int>(std::lower_bound(split_steps.begin(), split_steps.end(), d) - split_steps.begin());
}

std::size_t BranchSchedule::width_at(int d) const {
  std::size_t w = 1;
  for (int i = splits_before(d); i > 0; --i) w *= static_cast<std::size_t>(branch_factor);
  return w;
}

std::size_t BranchSchedule::leaf_count() const { return width_at(depth + 1); }

BranchSchedule dense_schedule() { return BranchSchedule{}; }

BranchSchedule mixed_schedule() {
  BranchSchedule s;
  s.split_steps = {0, 4, 8, 12};
  return s;
}

BranchSchedule sparse_schedule() {
  BranchSchedule s;
  s.split_steps = {0, 5, 10, 15};
  return s;
}

TrajectoryTree::TrajectoryTree(BranchSchedule schedule, std::span<const double> root_state)
    : schedule_(std::move(schedule)), dim_(root_state.size()) {
  schedule_.validate();
  if (dim_ == 0) throw std::invalid_argument("root state must have positive dimension");
  const auto levels = static_cast<std::size_t>(schedule_.depth) + 1;
  widths_.resize(levels);
  offsets_.resize(levels + 1, 0);
  for (std::size_t d = 0; d < levels; ++d) {
    widths_[d] = schedule_.width_at(static_cast<int>(d));
    offsets_[d + 1] = offsets_[d] + widths_[d];
  }
  const std::size_t n = node_count();
  states_.assign(n * dim_, 0.0);
  state_set_.assign(n, 0);
  noises_.assign(n * dim_, 0.0);
  logprobs_.assign(n, std::numeric_limits<double>::quiet_NaN());
  stochastic_.assign(n, 0);
  advantages_.assign(n, 0.0);
  has_advantage_.assign(n, 0);
  in_gradient_.assign(n, 0);
  std::copy(root_state.begin(), root_state.end(), states_.begin());
  state_set_[0] = 1;
}

void TrajectoryTree::check(NodeId node) const {
  if (node.depth < 0 || node.depth > schedule_.depth || node.index >= widths_[static_cast<std::size_t>(node.depth)]) {
    throw std::out_of_range("node (" + std::to_string(node.depth) + ", " + std::to_string(node.index) +
                            ") outside tree");
  }
}

std::size_t TrajectoryTree::flat_index(NodeId node) const {
  check(node);
  return offsets_[static_cast<std::size_t>(node.depth)] + node.index;
}

NodeId TrajectoryTree::node_at(std::size_t flat) const {
  if (flat >= node_count()) throw std::out_of_range("flat node index outside tree");
  const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
  const auto d = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  return {static_cast<int>(d), flat - offsets_[d]};
}

std::optional<NodeId> TrajectoryTree::parent(NodeId node) const {
  check(node);
  if (node.depth == 0) return std::nullopt;
  const int step = node.depth - 1;
  const std::size_t k = static_cast<std::size_t>(schedule_.branch_factor);
  return NodeId{step, schedule_.is_split(step) ? node.index / k : node.index};
}

std::vector<NodeId> TrajectoryTree::children(NodeId node) const {
  check(node);
  std::vector<NodeId> out;
  if (node.depth == schedule_.depth) return out;
  if (schedule_.is_split(node.depth)) {
    const auto k = static_cast<std::size_t>(schedule_.branch_factor);
    for (std::size_t b = 0; b < k; ++b) out.push_back({node.depth + 1, node.index * k + b});
  } else {
    out.push_back({node.depth + 1, node.index});
  }
  return out;
}

std::pair<std::size_t, std::size_t> TrajectoryTree::leaf_range(NodeId node) const {
  check(node);
  const std::size_t per = leaf_count() / widths_[static_cast<std::size_t>(node.depth)];
  return {node.index * per, (node.index + 1) * per};
}

std::span<double> TrajectoryTree::state(NodeId node) {
  return {states_.data() + flat_index(node) * dim_, dim_};
}

std::span<const double> TrajectoryTree::state(NodeId node) const {
  return {states_.data() + flat_index(node) * dim_, dim_};
}

bool TrajectoryTree::state_set(NodeId node) const { return state_set_[flat_index(node)] != 0; }

void TrajectoryTree::mark_state_set(NodeId node) { state_set_[flat_index(node)] = 1; }

std::span<double> TrajectoryTree::noise(NodeId node) {
  return {noises_.data() + flat_index(node) * dim_, dim_};
}

std::span<const double> TrajectoryTree::noise(NodeId node) const {
  return {noises_.data() + flat_index(node) * dim_, dim_};
}

double TrajectoryTree::behavior_logprob(NodeId node) const { return logprobs_[flat_index(node)]; }

bool TrajectoryTree::stochastic(NodeId node) const { return stochastic_[flat_index(node)] != 0; }

void TrajectoryTree::set_transition(NodeId node, bool is_stochastic, double logprob) {
  const auto i = flat_index(node);
  if (node.depth == 0) throw std::logic_error("root has no incoming edge");
  stochastic_[i] = is_stochastic ? 1 : 0;
  logprobs_[i] = is_stochastic ? logprob : std::numeric_limits<double>::quiet_NaN();
}

std::optional<double> TrajectoryTree::advantage(NodeId node) const {
  const auto i = flat_index(node);
  if (!has_advantage_[i]) return std::nullopt;
  return advantages_[i];
}

void TrajectoryTree::set_advantage(NodeId node, double value) {
  const auto i = flat_index(node);
  advantages_[i] = value;
  has_advantage_[i] = 1;
}

bool TrajectoryTree::in_gradient_set(NodeId node) const { return in_gradient_[flat_index(node)] != 0; }

void TrajectoryTree::set_gradient_mask(std::span<const std::uint8_t> mask) {
  if (mask.size() != node_count()) throw std::invalid_argument("gradient mask size does not match node count");
  std::copy(mask.begin(), mask.end(), in_gradient_.begin());
  in_gradient_[0] = 0;
  mask_set_ = true;
}

TrajectoryTree build_tree_skeleton(const BranchSchedule& schedule, std::span<const double> root_state) {
  return TrajectoryTree(schedule, root_state);
}

std::vector<NodeId> leaves(const TrajectoryTree& tree) { return nodes_at_depth(tree, tree.depth()); }

std::vector<NodeId> nodes_at_depth(const TrajectoryTree& tree, int depth) {
  std::vector<NodeId> out;
  const std::size_t w = tree.width(depth);
  out.reserve(w);
  for (std::size_t b = 0; b < w; ++b) out.push_back({depth, b});
  return out;
}

std::vector<NodeId> descendant_leaves(const TrajectoryTree& tree, NodeId node) {
  const auto [first, last] = tree.leaf_range(node);
  std::vector<NodeId> out;
  out.reserve(last - first);
  for (std::size_t b = first; b < last; ++b) out.push_back({tree.depth(), b});
  return out;
}

std::size_t tree_evaluation_count(const BranchSchedule& schedule) {
  schedule.validate();
  std::size_t total = 0;
  for (int d = 1; d <= schedule.depth; ++d) total += schedule.width_at(d);
  return total;
}

double average_per_sample_nfe(const BranchSchedule& schedule) {
  return static_cast<double>(tree_evaluation_count(schedule)) / static_cast<double>(schedule.leaf_count());
}

double gradient_edge_nfe(const TrajectoryTree& tree) {
  if (!tree.mask_set()) throw std::logic_error("gradient mask not set");
  std::size_t count = 0;
  for (std::size_t i = 1; i < tree.node_count(); ++i) {
    if (tree.in_gradient_set(tree.node_at(i))) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(tree.leaf_count());
}

nlohmann::json schedule_to_json(const BranchSchedule& schedule) {
  return {{"depth", schedule.depth},
          {"split_steps", schedule.split_steps},
          {"branch_factor", schedule.branch_factor},
          {"correlation", schedule.correlation},
          {"final_step_deterministic", schedule.final_step_deterministic},
          {"leaf_budget", schedule.leaf_budget},
          {"leaf_count", schedule.leaf_count()}};
}

namespace {

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace

nlohmann::json tree_to_json(const TrajectoryTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t i = 0; i < tree.node_count(); ++i) {
    const NodeId node = tree.node_at(i);
    const auto st = tree.state(node);
    nlohmann::json entry = {{"depth", node.depth},
                            {"breadth_index", node.index},
                            {"state", std::vector<double>(st.begin(), st.end())}};
    if (node.depth == 0) {
      entry["logprob"] = nullptr;
      entry["noise"] = nullptr;
    } else {
      const auto nz = tree.noise(node);
      entry["logprob"] = finite_or_null(tree.behavior_logprob(node));
      entry["noise"] = std::vector<double>(nz.begin(), nz.end());
      const auto adv = tree.advantage(node);
      edges.push_back({{"child", i},
                       {"depth", node.depth - 1},
                       {"stochastic", tree.stochastic(node)},
                       {"advantage", adv ? nlohmann::json(*adv) : nlohmann::json(nullptr)},
                       {"in_gradient_set", tree.in_gradient_set(node)}});
    }
    nodes.push_back(std::move(entry));
  }
  return {{"schedule", schedule_to_json(tree.schedule())}, {"nodes", nodes}, {"edges", edges}};
}

}  // namespace branchgrpo
