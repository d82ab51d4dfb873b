#include "branchgrpo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "branchgrpo/rng.hpp"
#include "branchgrpo/rollout.hpp"
#include "branchgrpo/tree.hpp"

namespace branchgrpo {

SampleSet::SampleSet(std::size_t d, std::vector<double> values) : dim(d), data(std::move(values)) {
  if (dim == 0 || data.size() % dim != 0) throw std::invalid_argument("SampleSet: data size is not a multiple of dim");
}

void SampleSet::add(std::span<const double> x) {
  if (dim == 0) dim = x.size();
  if (x.size() != dim) throw std::invalid_argument("SampleSet::add: dimension mismatch");
  data.insert(data.end(), x.begin(), x.end());
}

Kernel Kernel::rbf(double bandwidth) {
  Kernel k;
  k.kind = Kind::kRbf;
  k.bandwidth = bandwidth;
  k.validate();
  return k;
}

Kernel Kernel::polynomial(int degree, double coef) {
  Kernel k;
  k.kind = Kind::kPolynomial;
  k.degree = degree;
  k.coef = coef;
  k.validate();
  return k;
}

void Kernel::validate() const {
  if (kind == Kind::kRbf && !(bandwidth > 0.0 && std::isfinite(bandwidth))) {
    throw std::invalid_argument("kernel bandwidth must be positive");
  }
  if (kind == Kind::kPolynomial && degree < 1) throw std::invalid_argument("polynomial degree must be positive");
}

double Kernel::operator()(std::span<const double> x, std::span<const double> y) const {
  if (kind == Kind::kRbf) {
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - y[i]) * (x[i] - y[i]);
    return std::exp(-sq / (2.0 * bandwidth * bandwidth));
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) dot += x[i] * y[i];
  return std::pow(dot / static_cast<double>(x.size()) + coef, degree);
}

std::string Kernel::describe() const {
  std::ostringstream out;
  if (kind == Kind::kRbf) {
    out << "rbf(bandwidth=" << bandwidth << ")";
  } else {
    out << "polynomial(degree=" << degree << ", coef=" << coef << ")";
  }
  return out.str();
}

namespace {

void check_pair(const SampleSet& x, const SampleSet& y) {
  if (x.size() < 2 || y.size() < 2) throw std::invalid_argument("two-sample statistic needs at least 2 points per set");
  if (x.dim != y.dim) throw std::invalid_argument("two-sample statistic: dimension mismatch");
}

double within_sum(const SampleSet& s, const Kernel& k) {
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = i + 1; j < s.size(); ++j) total += k(s.point(i), s.point(j));
  }
  return total;
}

double mmd2_from_sums(double xx, double yy, double xy, std::size_t n, std::size_t m) {
  const double dn = static_cast<double>(n);
  const double dm = static_cast<double>(m);
  return 2.0 * xx / (dn * (dn - 1.0)) + 2.0 * yy / (dm * (dm - 1.0)) - 2.0 * xy / (dn * dm);
}

/// Symmetric kernel matrix of the pooled sample with row sums (diagonal excluded).
struct PooledKernel {
  std::size_t n = 0;
  std::vector<float> k;
  std::vector<double> row_sum;
  double total = 0.0;  // sum over unordered pairs

  float at(std::size_t i, std::size_t j) const { return k[i * n + j]; }
};

PooledKernel pooled_kernel(const SampleSet& x, const SampleSet& y, const Kernel& kernel) {
  PooledKernel pk;
  pk.n = x.size() + y.size();
  pk.k.assign(pk.n * pk.n, 0.0F);
  auto point = [&](std::size_t i) { return i < x.size() ? x.point(i) : y.point(i - x.size()); };
  for (std::size_t i = 0; i < pk.n; ++i) {
    for (std::size_t j = i + 1; j < pk.n; ++j) {
      const auto v = static_cast<float>(kernel(point(i), point(j)));
      pk.k[i * pk.n + j] = v;
      pk.k[j * pk.n + i] = v;
    }
  }
  pk.row_sum.assign(pk.n, 0.0);
  for (std::size_t i = 0; i < pk.n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < pk.n; ++j) s += j == i ? 0.0 : pk.at(i, j);
    pk.row_sum[i] = s;
    pk.total += s;
  }
  pk.total *= 0.5;
  return pk;
}

/// MMD^2 for the split where `members` (sorted) form the first set.
double split_statistic(const PooledKernel& pk, const std::vector<std::size_t>& members) {
  double xx = 0.0;
  double rows = 0.0;
  for (std::size_t a = 0; a < members.size(); ++a) {
    const float* row = pk.k.data() + members[a] * pk.n;
    double s = 0.0;
    for (std::size_t b = a + 1; b < members.size(); ++b) s += row[members[b]];
    xx += s;
    rows += pk.row_sum[members[a]];
  }
  const double xy = rows - 2.0 * xx;
  const double yy = pk.total - xx - xy;
  return mmd2_from_sums(xx, yy, xy, members.size(), pk.n - members.size());
}

void shuffle(std::vector<std::size_t>& v, NoiseStream& rng) {
  for (std::size_t i = v.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.next_u64() % (i + 1));
    std::swap(v[i], v[j]);
  }
}

}  // namespace

double mmd2_unbiased(const SampleSet& x, const SampleSet& y, const Kernel& kernel) {
  check_pair(x, y);
  kernel.validate();
  double xy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) xy += kernel(x.point(i), y.point(j));
  }
  return mmd2_from_sums(within_sum(x, kernel), within_sum(y, kernel), xy, x.size(), y.size());
}

double median_heuristic_bandwidth(const SampleSet& x, const SampleSet& y, std::size_t max_points,
                                  std::uint64_t seed) {
  check_pair(x, y);
  std::vector<std::size_t> idx(x.size() + y.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (idx.size() > max_points) {
    NoiseStream rng({seed, Stream::kMetric, 0, 0, 0});
    shuffle(idx, rng);
    idx.resize(std::max<std::size_t>(max_points, 2));
  }
  auto point = [&](std::size_t i) { return i < x.size() ? x.point(i) : y.point(i - x.size()); };
  std::vector<double> dist;
  dist.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t a = 0; a < idx.size(); ++a) {
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const auto p = point(idx[a]);
      const auto q = point(idx[b]);
      double sq = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) sq += (p[i] - q[i]) * (p[i] - q[i]);
      dist.push_back(std::sqrt(sq));
    }
  }
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  const double h = *mid;
  if (!(h > 0.0)) throw std::invalid_argument("median heuristic bandwidth is degenerate (all points coincide)");
  return h;
}

TwoSampleResult permutation_test(const SampleSet& x, const SampleSet& y, const Kernel& kernel, int permutations,
                                 double alpha, std::uint64_t seed) {
  check_pair(x, y);
  kernel.validate();
  if (permutations < 1) throw std::invalid_argument("permutation_test: need at least one permutation");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("permutation_test: alpha must lie in (0, 1)");
  if (x.size() + y.size() > 20000) throw std::invalid_argument("permutation_test: pooled sample exceeds 20000 points");

  const PooledKernel pk = pooled_kernel(x, y, kernel);
  std::vector<std::size_t> first(x.size());
  std::iota(first.begin(), first.end(), std::size_t{0});

  TwoSampleResult out;
  out.kernel = kernel;
  out.n_x = x.size();
  out.n_y = y.size();
  out.permutations = permutations;
  out.alpha = alpha;
  out.statistic = split_statistic(pk, first);

  std::vector<std::size_t> order(pk.n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> null(static_cast<std::size_t>(permutations));
  NoiseStream rng({seed, Stream::kMetric, 1, 0, 0});
  for (auto& stat : null) {
    shuffle(order, rng);
    std::vector<std::size_t> members(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(x.size()));
    std::sort(members.begin(), members.end());
    stat = split_statistic(pk, members);
  }
  std::sort(null.begin(), null.end());
  const auto rank = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(permutations)));
  out.null_threshold = null[std::clamp<std::size_t>(rank, 1, null.size()) - 1];
  out.pass = out.statistic <= out.null_threshold;
  return out;
}

double kid_style_statistic(const SampleSet& x, const SampleSet& y, int degree, int subsets, std::size_t subset_size,
                           std::uint64_t seed) {
  check_pair(x, y);
  const Kernel kernel = Kernel::polynomial(degree, 1.0);
  if (x.size() <= subset_size && y.size() <= subset_size) return mmd2_unbiased(x, y, kernel);
  if (subsets < 1) throw std::invalid_argument("kid_style_statistic: need at least one subset");
  const std::size_t bx = std::min(subset_size, x.size());
  const std::size_t by = std::min(subset_size, y.size());
  std::vector<std::size_t> ix(x.size());
  std::vector<std::size_t> iy(y.size());
  double total = 0.0;
  for (int s = 0; s < subsets; ++s) {
    NoiseStream rng({seed, Stream::kMetric, 2, static_cast<std::uint64_t>(s), 0});
    std::iota(ix.begin(), ix.end(), std::size_t{0});
    std::iota(iy.begin(), iy.end(), std::size_t{0});
    shuffle(ix, rng);
    shuffle(iy, rng);
    SampleSet sx;
    SampleSet sy;
    for (std::size_t i = 0; i < bx; ++i) sx.add(x.point(ix[i]));
    for (std::size_t i = 0; i < by; ++i) sy.add(y.point(iy[i]));
    total += mmd2_unbiased(sx, sy, kernel);
  }
  return total / subsets;
}

nlohmann::json to_json(const TwoSampleResult& result) {
  return {{"statistic", result.statistic},
          {"threshold", result.null_threshold},
          {"pass", result.pass},
          {"n", result.n_x + result.n_y},
          {"n_x", result.n_x},
          {"n_y", result.n_y},
          {"permutations", result.permutations},
          {"alpha", result.alpha},
          {"kernel", result.kernel.describe()}};
}

double ks_critical_coefficient(double alpha) { return std::sqrt(-0.5 * std::log(alpha / 2.0)); }

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

KsResult ks_marginal_test(std::span<const double> samples, double alpha) {
  if (samples.size() < 1000) throw std::invalid_argument("ks_marginal_test: need at least 1000 samples");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double f = standard_normal_cdf(sorted[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  KsResult out;
  out.statistic = d;
  out.n = sorted.size();
  out.critical = ks_critical_coefficient(alpha) / std::sqrt(n);
  out.pass = d < out.critical;
  return out;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need matching sizes >= 2");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw std::invalid_argument("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw std::invalid_argument("loglog_slope: x values are all equal");
  return sxy / sxx;
}

ConcentrationResult concentration_rate_check(const MixtureWorld& world, const PolicyParams& policy,
                                             const RewardFunction& reward_fn, const ConcentrationConfig& config) {
  if (config.repetitions < 500) throw std::invalid_argument("concentration_rate_check: need at least 500 repetitions");
  if (config.leaf_counts.size() < 2) throw std::invalid_argument("concentration_rate_check: need two leaf counts");
  world.validate();
  reward_fn.validate(world.dim);
  const auto dim = static_cast<std::size_t>(world.dim);
  const auto z0 = root_noise(config.seed, 0, dim);

  ConcentrationResult out;
  for (int leaves : config.leaf_counts) {
    BranchSchedule schedule;
    schedule.depth = config.depth;
    schedule.split_steps = {0};
    schedule.branch_factor = leaves;
    schedule.correlation = config.correlation;
    schedule.final_step_deterministic = true;
    schedule.leaf_budget = static_cast<std::size_t>(std::max(leaves, 1));
    schedule.validate();
    std::vector<StepMode> modes(static_cast<std::size_t>(config.depth), StepMode::kOde);
    modes[0] = StepMode::kSde;
    const Dynamics dynamics(TimeGrid::make(config.depth, config.shift), config.eta, modes);

    std::vector<double> means(static_cast<std::size_t>(config.repetitions));
    const int workers = std::max(1, config.threads);
    std::vector<std::thread> pool;
    auto work = [&](int w) {
      for (int rep = w; rep < config.repetitions; rep += workers) {
        const std::uint64_t prompt = static_cast<std::uint64_t>(leaves) * 1000003ULL + static_cast<std::uint64_t>(rep);
        const auto tree = rollout_tree(policy.values, policy.shape, dynamics, schedule, z0, config.seed, prompt);
        double sum = 0.0;
        for (const auto& leaf : branchgrpo::leaves(tree)) sum += reward_fn(tree.state(leaf));
        means[static_cast<std::size_t>(rep)] = sum / static_cast<double>(tree.leaf_count());
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
      for (auto& t : pool) t.join();
    }
    double mean = 0.0;
    for (double m : means) mean += m;
    mean /= static_cast<double>(means.size());
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean);
    var /= static_cast<double>(means.size() - 1);
    out.leaf_counts.push_back(leaves);
    out.stds.push_back(std::sqrt(var));
  }
  std::vector<double> xs(out.leaf_counts.begin(), out.leaf_counts.end());
  // identical leaves at s = 0 can give an exactly flat profile
  bool flat = true;
  for (double s : out.stds) flat = flat && s == out.stds.front();
  out.slope = flat ? 0.0 : loglog_slope(xs, out.stds);
  return out;
}

}  // namespace branchgrpo

namespace branchgrpo {

BoundarySamples boundary_invariance_samples(const TrainerConfig& config, std::span<const double> params,
                                            const MlpShape& shape, std::size_t n, std::uint64_t seed) {
  config.schedule.validate();
  const auto dim = static_cast<std::size_t>(config.world.dim);
  const Dynamics dynamics(TimeGrid::make(config.schedule.depth, config.shift), config.eta,
                          sde_everywhere(config.schedule));
  const std::size_t width = config.schedule.leaf_count();
  BoundarySamples out;
  out.branch.dim = dim;
  out.sequential.dim = dim;
  for (std::uint64_t prompt = 0; out.branch.size() < n; ++prompt) {
    const auto z0 = root_noise(seed, prompt, dim);
    const auto tree = rollout_tree(params, shape, dynamics, config.schedule, z0, seed, prompt);
    for (const auto& leaf : leaves(tree)) {
      if (out.branch.size() < n) out.branch.add(tree.state(leaf));
    }
    std::vector<double> starts;
    for (std::size_t c = 0; c < width; ++c) starts.insert(starts.end(), z0.begin(), z0.end());
    const auto chains = rollout_chains(params, shape, dynamics, starts, dim, seed, prompt);
    for (std::size_t c = 0; c < width; ++c) {
      if (out.sequential.size() < n) out.sequential.add(chains.final_state(c));
    }
  }
  return out;
}

}  // namespace branchgrpo
