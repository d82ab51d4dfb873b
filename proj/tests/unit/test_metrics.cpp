#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <vector>

#include "branchgrpo/metrics.hpp"
#include "branchgrpo/rng.hpp"

namespace branchgrpo {
namespace {

SampleSet gaussian(std::size_t n, std::size_t dim, double shift, std::uint64_t seed) {
  NoiseStream rng({seed, Stream::kMetric, 77, 0, 0});
  SampleSet s;
  s.dim = dim;
  for (std::size_t i = 0; i < n * dim; ++i) s.data.push_back(rng.normal() + (i % dim == 0 ? shift : 0.0));
  return s;
}

// Direct U-statistic, written out term by term.
double brute_mmd2(const SampleSet& x, const SampleSet& y, double h) {
  auto k = [h](std::span<const double> a, std::span<const double> b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-sq / (2 * h * h));
  };
  const double m = static_cast<double>(x.size());
  const double n = static_cast<double>(y.size());
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j)
      if (i != j) xx += k(x.point(i), x.point(j));
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j)
      if (i != j) yy += k(y.point(i), y.point(j));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) xy += k(x.point(i), y.point(j));
  return xx / (m * (m - 1)) + yy / (n * (n - 1)) - 2 * xy / (m * n);
}

TEST(Mmd, MatchesBruteForce) {
  const auto x = gaussian(40, 2, 0.0, 1);
  const auto y = gaussian(30, 2, 0.7, 2);
  EXPECT_NEAR(mmd2_unbiased(x, y, Kernel::rbf(1.3)), brute_mmd2(x, y, 1.3), 1e-12);
}

TEST(Mmd, Symmetric) {
  const auto x = gaussian(50, 3, 0.0, 3);
  const auto y = gaussian(60, 3, 0.2, 4);
  const Kernel k = Kernel::rbf(1.0);
  EXPECT_NEAR(mmd2_unbiased(x, y, k), mmd2_unbiased(y, x, k), 1e-12);
}

TEST(Mmd, UnbiasedUnderNull) {
  double sum = 0.0, sq = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    const double v = mmd2_unbiased(gaussian(30, 2, 0.0, 100 + 2 * r), gaussian(30, 2, 0.0, 101 + 2 * r),
                                   Kernel::rbf(1.0));
    sum += v;
    sq += v * v;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sq / reps - mean * mean) / reps);
  EXPECT_LT(std::abs(mean), 3.0 * se);
}

TEST(Mmd, RejectsBadInput) {
  SampleSet one(2, {0.0, 0.0});
  EXPECT_THROW(mmd2_unbiased(one, gaussian(5, 2, 0, 1), Kernel::rbf(1.0)), std::invalid_argument);
  EXPECT_THROW(mmd2_unbiased(gaussian(5, 3, 0, 1), gaussian(5, 2, 0, 1), Kernel::rbf(1.0)), std::invalid_argument);
  EXPECT_THROW(Kernel::rbf(0.0).validate(), std::invalid_argument);
}

TEST(Bandwidth, MedianOfPairwiseDistances) {
  SampleSet x(1, {0.0, 1.0});
  SampleSet y(1, {2.0, 3.0});
  // distances 1,1,1,2,2,3
  EXPECT_DOUBLE_EQ(median_heuristic_bandwidth(x, y), 2.0);
  SampleSet same(1, {1.0, 1.0});
  EXPECT_THROW(median_heuristic_bandwidth(same, same), std::invalid_argument);
}

TEST(PermutationTest, DetectsShift) {
  const auto x = gaussian(200, 2, 0.0, 5);
  const auto y = gaussian(200, 2, 5.0, 6);
  const auto res = permutation_test(x, y, Kernel::rbf(median_heuristic_bandwidth(x, y)), 100, 0.01, 1);
  EXPECT_FALSE(res.pass);
  EXPECT_GT(res.statistic, res.null_threshold);
}

TEST(PermutationTest, AcceptsSameDistribution) {
  const auto x = gaussian(300, 2, 0.0, 7);
  const auto y = gaussian(300, 2, 0.0, 8);
  const auto res = permutation_test(x, y, Kernel::rbf(median_heuristic_bandwidth(x, y)), 200, 0.01, 2);
  EXPECT_TRUE(res.pass);
  EXPECT_EQ(res.n_x, 300u);
  EXPECT_EQ(res.permutations, 200);
  const auto j = to_json(res);
  EXPECT_EQ(j.at("pass").get<bool>(), true);
  EXPECT_TRUE(j.contains("threshold"));
}

TEST(PermutationTest, NullRejectionRate) {
  const double alpha = 0.05;
  const int reps = 200;
  int rejected = 0;
  for (int r = 0; r < reps; ++r) {
    const auto x = gaussian(40, 2, 0.0, 1000 + 2 * r);
    const auto y = gaussian(40, 2, 0.0, 1001 + 2 * r);
    rejected += permutation_test(x, y, Kernel::rbf(1.0), 100, alpha, r).pass ? 0 : 1;
  }
  EXPECT_LE(rejected, static_cast<int>(1.5 * alpha * reps));
}

TEST(PermutationTest, Deterministic) {
  const auto x = gaussian(50, 2, 0.0, 9);
  const auto y = gaussian(50, 2, 0.3, 10);
  const auto a = permutation_test(x, y, Kernel::rbf(1.0), 50, 0.01, 3);
  const auto b = permutation_test(x, y, Kernel::rbf(1.0), 50, 0.01, 3);
  EXPECT_EQ(a.null_threshold, b.null_threshold);
  EXPECT_EQ(a.statistic, b.statistic);
}

TEST(Kid, RotationInvariant) {
  const auto x = gaussian(80, 2, 0.5, 11);
  const auto y = gaussian(90, 2, 0.0, 12);
  const double c = std::cos(0.7), s = std::sin(0.7);
  auto rotate = [&](const SampleSet& in) {
    SampleSet out = in;
    for (std::size_t i = 0; i < in.size(); ++i) {
      out.data[2 * i] = c * in.data[2 * i] - s * in.data[2 * i + 1];
      out.data[2 * i + 1] = s * in.data[2 * i] + c * in.data[2 * i + 1];
    }
    return out;
  };
  EXPECT_NEAR(kid_style_statistic(x, y), kid_style_statistic(rotate(x), rotate(y)), 1e-10);
}

TEST(Kid, OrderInvariantForSingleBlock) {
  const auto x = gaussian(60, 3, 0.0, 13);
  const auto y = gaussian(70, 3, 0.4, 14);
  SampleSet reversed;
  reversed.dim = 3;
  for (std::size_t i = x.size(); i-- > 0;) reversed.add(x.point(i));
  EXPECT_NEAR(kid_style_statistic(x, y), kid_style_statistic(reversed, y), 1e-10);
  EXPECT_NEAR(kid_style_statistic(x, y), mmd2_unbiased(x, y, Kernel::polynomial(3, 1.0)), 1e-10);
}

TEST(Kid, SeparatesShiftedSets) {
  const auto x = gaussian(500, 2, 0.0, 15);
  EXPECT_GT(kid_style_statistic(x, gaussian(500, 2, 2.0, 16), 3, 20, 200, 1),
            10 * std::abs(kid_style_statistic(x, gaussian(500, 2, 0.0, 17), 3, 20, 200, 1)));
}

TEST(Ks, CriticalCoefficient) {
  EXPECT_NEAR(ks_critical_coefficient(0.05), 1.3581, 1e-4);
  EXPECT_NEAR(ks_critical_coefficient(0.01), 1.6276, 1e-4);
  EXPECT_NEAR(standard_normal_cdf(0.0), 0.5, 1e-15);
  EXPECT_NEAR(standard_normal_cdf(1.959963984540054), 0.975, 1e-12);
}

TEST(Ks, ConstantSamplesFail) {
  const std::vector<double> zeros(1000, 0.0);
  const auto res = ks_marginal_test(zeros);
  EXPECT_NEAR(res.statistic, 0.5, 1e-12);
  EXPECT_FALSE(res.pass);
}

TEST(Ks, NormalSamplesPassShiftedFail) {
  NoiseStream rng({21, Stream::kMetric, 0, 0, 0});
  std::vector<double> v(4000);
  for (double& x : v) x = rng.normal();
  EXPECT_TRUE(ks_marginal_test(v).pass);
  for (double& x : v) x += 0.3;
  EXPECT_FALSE(ks_marginal_test(v).pass);
  EXPECT_THROW(ks_marginal_test(std::vector<double>(999, 0.0)), std::invalid_argument);
}

TEST(LogLog, PowerLaw) {
  const std::vector<double> x{2, 4, 8, 16, 32};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 / std::sqrt(v));
  EXPECT_NEAR(loglog_slope(x, y), -0.5, 1e-12);
  EXPECT_THROW(loglog_slope(std::vector<double>{1, 2}, std::vector<double>{1, 0}), std::invalid_argument);
}

}  // namespace
}  // namespace branchgrpo
