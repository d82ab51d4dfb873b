#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "branchgrpo/errors.hpp"
#include "branchgrpo/policy.hpp"
#include "branchgrpo/rng.hpp"

namespace branchgrpo {
namespace {

// Scalar re-implementation of the documented layout:
// W1 [h1 x in], b1, W2 [h2 x h1], b2, W3 [out x h2], b3.
std::vector<double> reference_forward(const std::vector<double>& p, const MlpShape& s, const std::vector<double>& z,
                                      double t) {
  std::vector<double> x = z;
  x.push_back(t);
  std::size_t off = 0;
  auto layer = [&](const std::vector<double>& in, int rows, bool act) {
    const std::size_t cols = in.size();
    std::vector<double> out(static_cast<std::size_t>(rows));
    const std::size_t bias = off + static_cast<std::size_t>(rows) * cols;
    for (int r = 0; r < rows; ++r) {
      double acc = p[bias + static_cast<std::size_t>(r)];
      for (std::size_t c = 0; c < cols; ++c) acc += p[off + static_cast<std::size_t>(r) * cols + c] * in[c];
      out[static_cast<std::size_t>(r)] = act ? std::tanh(acc) : acc;
    }
    off = bias + static_cast<std::size_t>(rows);
    return out;
  };
  const auto h1 = layer(x, s.hidden1, true);
  const auto h2 = layer(h1, s.hidden2, true);
  return layer(h2, s.output, false);
}

TEST(Forward, ZeroWeightsGiveZero) {
  const auto p = PolicyParams::zeros(MlpShape::for_dim(2));
  const auto v = forward_velocity(p, std::vector<double>{0.3, -2.0}, 0.4);
  EXPECT_EQ(v, (std::vector<double>{0.0, 0.0}));
}

TEST(Forward, MatchesScalarReimplementation) {
  const MlpShape shape{4, 5, 6, 3};
  auto p = PolicyParams::init(shape, 9);
  NoiseStream rng({9, Stream::kMetric, 0, 0, 0});
  for (double& v : p.values) v += 0.1 * rng.normal();  // non-zero biases too
  const std::vector<double> z{0.1, -0.7, 1.3};
  const auto got = forward_velocity(p, z, 0.37);
  const auto want = reference_forward(p.values, shape, z, 0.37);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-14);
}

TEST(Forward, HiddenUnitPermutationSymmetry) {
  const MlpShape shape{3, 4, 4, 2};
  auto p = PolicyParams::init(shape, 3);
  NoiseStream rng({3, Stream::kMetric, 0, 0, 0});
  for (double& v : p.values) v += 0.1 * rng.normal();
  auto q = p;
  // swap hidden1 units 0 and 2: rows of W1, entries of b1, columns of W2
  const std::size_t w1 = 0, b1 = 12, w2 = 16;
  for (int c = 0; c < 3; ++c) std::swap(q.values[w1 + 0 * 3 + c], q.values[w1 + 2 * 3 + c]);
  std::swap(q.values[b1 + 0], q.values[b1 + 2]);
  for (int r = 0; r < 4; ++r) std::swap(q.values[w2 + r * 4 + 0], q.values[w2 + r * 4 + 2]);
  const std::vector<double> z{0.5, -0.25};
  const auto a = forward_velocity(p, z, 0.6);
  const auto b = forward_velocity(q, z, 0.6);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(Forward, NonFiniteNamesLayer) {
  auto p = PolicyParams::init(MlpShape::for_dim(2, 8), 1);
  p.values[0] = NAN;
  try {
    forward_velocity(p, std::vector<double>{0.1, 0.2}, 0.5);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("hidden1"), std::string::npos);
  }
}

double directional_output(const std::vector<double>& params, const MlpShape& shape, const std::vector<double>& z,
                          double t, const std::vector<double>& u) {
  std::vector<double> v(static_cast<std::size_t>(shape.output));
  forward_velocity(params, shape, z, t, v);
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += u[i] * v[i];
  return s;
}

TEST(Backward, MatchesCentralDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const MlpShape shape{3, 6 + static_cast<int>(seed), 5, 2};
    auto p = PolicyParams::init(shape, seed);
    NoiseStream rng({seed, Stream::kMetric, 1, 0, 0});
    for (double& v : p.values) v += 0.2 * rng.normal();
    const std::vector<double> z{rng.normal(), rng.normal()};
    const double t = rng.uniform();
    const std::vector<double> u{rng.normal(), rng.normal()};
    ForwardRecord rec;
    forward_velocity(p, z, t, &rec);
    p.zero_grad();
    backward(p, rec, u);
    const double h = 1e-5;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      auto plus = p.values;
      auto minus = p.values;
      plus[i] += h;
      minus[i] -= h;
      const double fd = (directional_output(plus, shape, z, t, u) - directional_output(minus, shape, z, t, u)) / (2 * h);
      const double denom = std::max(std::abs(fd), 1e-6);
      EXPECT_LE(std::abs(p.grads[i] - fd) / denom, 1e-4) << "seed " << seed << " param " << i;
    }
  }
}

TEST(Backward, ConstantOutputHasNoHiddenGradient) {
  const MlpShape shape{3, 4, 4, 2};
  auto p = PolicyParams::init(shape, 2);
  const std::size_t w3 = static_cast<std::size_t>(4 * 3 + 4 + 4 * 4 + 4);
  for (std::size_t i = w3; i < w3 + 8; ++i) p.values[i] = 0.0;  // output weights off
  ForwardRecord rec;
  forward_velocity(p, std::vector<double>{0.2, 0.1}, 0.3, &rec);
  p.zero_grad();
  backward(p, rec, std::vector<double>{1.0, -1.0});
  for (std::size_t i = 0; i < w3; ++i) EXPECT_EQ(p.grads[i], 0.0);
}

TEST(Backward, RequiresRecordedForward) {
  auto p = PolicyParams::init(MlpShape::for_dim(2, 4), 2);
  ForwardRecord rec;
  EXPECT_THROW(backward(p, rec, std::vector<double>{1.0, 1.0}), std::logic_error);
}

TEST(Ema, GeometricConvergence) {
  auto p = PolicyParams::zeros(MlpShape::for_dim(2, 4));
  std::fill(p.values.begin(), p.values.end(), 1.0);
  for (int k = 1; k <= 50; ++k) {
    p.update_ema();
    EXPECT_NEAR(1.0 - p.ema[0], std::pow(0.995, k), 1e-12);
  }
}

TEST(Reward, ClosedForms) {
  RewardFunction r;
  r.target = {2.0, 0.0};
  r.temperature = 0.5;
  EXPECT_DOUBLE_EQ(r(std::vector<double>{2.0, 0.0}), 1.0);
  const double d = 0.5 * std::sqrt(2.0);
  EXPECT_NEAR(r(std::vector<double>{2.0 + d, 0.0}), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(r(std::vector<double>{2.0, d}), r(std::vector<double>{2.0 - d, 0.0}), 1e-15);
  RewardFunction neg{RewardKind::kNegativeDistance, {0.0, 0.0}, 2.0};
  EXPECT_DOUBLE_EQ(neg(std::vector<double>{3.0, 4.0}), -2.5);
  RewardFunction smooth{RewardKind::kCustomSmooth, {0.0, 0.0}, 1.0};
  EXPECT_DOUBLE_EQ(smooth(std::vector<double>{1.0, 0.0}), 0.5);
  EXPECT_THROW(RewardFunction({RewardKind::kModePreference, {1.0}, 1.0}).validate(2), ConfigError);
}

TEST(Reward, LipschitzBound) {
  RewardFunction r;
  r.temperature = 0.7;
  NoiseStream rng({5, Stream::kMetric, 0, 0, 0});
  for (int i = 0; i < 10000; ++i) {
    const std::vector<double> x{2.0 + rng.normal(), rng.normal()};
    const std::vector<double> y{2.0 + rng.normal(), rng.normal()};
    const double dist = std::hypot(x[0] - y[0], x[1] - y[1]);
    EXPECT_LE(std::abs(r(x) - r(y)), r.lipschitz() * dist + 1e-15);
  }
  EXPECT_NEAR(r.lipschitz(), 1.0 / (0.7 * std::sqrt(std::exp(1.0))), 1e-15);
}

TEST(Pretrain, ZeroStepsLeaveParamsUnchanged) {
  auto p = PolicyParams::init(MlpShape::for_dim(2, 8), 4);
  const auto before = p.values;
  PretrainConfig cfg;
  cfg.steps = 0;
  pretrain_flow_matching(MixtureWorld::two_modes(), p, cfg);
  EXPECT_EQ(p.values, before);
}

TEST(Pretrain, SingleLocationVelocityPointsInward) {
  MixtureWorld world;
  world.dim = 2;
  world.modes = {{{0.0, 0.0}, 0.5, 0.3}, {{0.0, 0.0}, 0.5, 0.3}};
  auto p = PolicyParams::init(MlpShape::for_dim(2, 16), 1);
  PretrainConfig cfg;
  cfg.steps = 400;
  cfg.batch = 64;
  pretrain_flow_matching(world, p, cfg);
  NoiseStream rng({6, Stream::kMetric, 0, 0, 0});
  double inner = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const double t = 0.1 + 0.9 * rng.uniform();
    const std::vector<double> z{t * rng.normal(), t * rng.normal()};
    const auto v = forward_velocity(p, z, t);
    inner += -(v[0] * z[0] + v[1] * z[1]);
  }
  EXPECT_GT(inner / 2000, 0.0);
}

TEST(Pretrain, DivergenceAborts) {
  auto p = PolicyParams::init(MlpShape::for_dim(2, 16), 1);
  PretrainConfig cfg;
  cfg.steps = 100;
  cfg.batch = 16;
  cfg.lr = 5.0;
  EXPECT_THROW(pretrain_flow_matching(MixtureWorld::two_modes(), p, cfg), NumericalError);
}

}  // namespace
}  // namespace branchgrpo
