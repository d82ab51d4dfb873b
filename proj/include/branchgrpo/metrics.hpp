#ifndef BRANCHGRPO_METRICS_HPP
#define BRANCHGRPO_METRICS_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "branchgrpo/dynamics.hpp"
#include "branchgrpo/policy.hpp"
#include "branchgrpo/trainer.hpp"

namespace branchgrpo {

/// Points of equal dimension, stored row-major.
struct SampleSet {
  std::size_t dim = 0;
  std::vector<double> data;

  SampleSet() = default;
  SampleSet(std::size_t dim, std::vector<double> data);

  std::size_t size() const noexcept { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const double> point(std::size_t i) const { return {data.data() + i * dim, dim}; }
  void add(std::span<const double> x);
};

struct Kernel {
  enum class Kind { kRbf, kPolynomial };
  Kind kind = Kind::kRbf;
  double bandwidth = 1.0;  ///< rbf: exp(-|x - y|^2 / (2 h^2))
  int degree = 3;          ///< polynomial: (x.y / d + coef)^degree
  double coef = 1.0;

  static Kernel rbf(double bandwidth);
  static Kernel polynomial(int degree = 3, double coef = 1.0);

  /// Throws std::invalid_argument on a non-positive bandwidth or degree.
  void validate() const;
  double operator()(std::span<const double> x, std::span<const double> y) const;
  std::string describe() const;
};

/// Unbiased U-statistic estimate of MMD^2. Requires |X|, |Y| >= 2.
double mmd2_unbiased(const SampleSet& x, const SampleSet& y, const Kernel& kernel);

/// Median pairwise Euclidean distance over the pooled sample, computed on a
/// seeded subsample of at most `max_points` points.
double median_heuristic_bandwidth(const SampleSet& x, const SampleSet& y, std::size_t max_points = 1024,
                                  std::uint64_t seed = 0);

struct TwoSampleResult {
  double statistic = 0.0;
  Kernel kernel{};
  std::size_t n_x = 0;
  std::size_t n_y = 0;
  int permutations = 0;
  double alpha = 0.01;
  double null_threshold = 0.0;  ///< (1 - alpha) quantile of the permutation null
  bool pass = false;            ///< statistic <= null_threshold: no detected difference
};

/// Permutation-calibrated MMD^2 test. The kernel matrix of the pooled sample
/// is materialised once (float storage), so |X| + |Y| is capped at 20000.
TwoSampleResult permutation_test(const SampleSet& x, const SampleSet& y, const Kernel& kernel, int permutations = 200,
                                 double alpha = 0.01, std::uint64_t seed = 0);

/// Polynomial-kernel MMD^2 averaged over `subsets` random blocks of
/// `subset_size` points per set. Sets no larger than `subset_size` use one
/// exact block.
double kid_style_statistic(const SampleSet& x, const SampleSet& y, int degree = 3, int subsets = 100,
                           std::size_t subset_size = 1000, std::uint64_t seed = 0);

nlohmann::json to_json(const TwoSampleResult& result);

struct KsResult {
  double statistic = 0.0;
  double critical = 0.0;  ///< c(alpha) / sqrt(n)
  std::size_t n = 0;
  bool pass = false;
};

/// sqrt(-ln(alpha / 2) / 2)
double ks_critical_coefficient(double alpha);
double standard_normal_cdf(double x);

/// One-sample Kolmogorov-Smirnov test against N(0, 1). Requires n >= 1000.
KsResult ks_marginal_test(std::span<const double> samples, double alpha = 0.01);

/// Least-squares slope of log(y) on log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

struct ConcentrationConfig {
  std::vector<int> leaf_counts{2, 4, 8, 16, 32};
  int repetitions = 500;
  double correlation = 1e6;  ///< large s: effectively independent children
  int depth = 20;
  double shift = 3.0;
  double eta = 0.3;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct ConcentrationResult {
  std::vector<int> leaf_counts;
  std::vector<double> stds;
  double slope = 0.0;
};

/// For each leaf count L, builds `repetitions` trees with a single L-way
/// split at the first step from one fixed root, stochastic only at that
/// step, and measures the spread of the root's mean leaf reward across
/// trees. Returns the log-log slope of that spread against L.
ConcentrationResult concentration_rate_check(const MixtureWorld& world, const PolicyParams& policy,
                                             const RewardFunction& reward_fn, const ConcentrationConfig& config);

struct BoundarySamples {
  SampleSet branch;
  SampleSet sequential;
};

/// Matched leaf sets under a frozen policy: per prompt, the w leaves of one
/// branch rollout and w independent chains on the same time grid and step
/// modes, all starting from that prompt's z_0. Draws ceil(n / w) prompts and
/// keeps the first n points of each set.
BoundarySamples boundary_invariance_samples(const TrainerConfig& config, std::span<const double> params,
                                            const MlpShape& shape, std::size_t n, std::uint64_t seed);

}  // namespace branchgrpo

#endif
