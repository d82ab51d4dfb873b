#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "branchgrpo/dynamics.hpp"
#include "branchgrpo/errors.hpp"
#include "branchgrpo/rng.hpp"

namespace branchgrpo {
namespace {

TEST(TimeGrid, WarpedAndDecreasing) {
  const auto grid = TimeGrid::make(20, 3.0);
  ASSERT_EQ(grid.steps(), 20);
  EXPECT_EQ(grid.time(0), 1.0);
  EXPECT_EQ(grid.times.back(), 0.0);
  double total = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double t = 1.0 - i / 20.0;
    EXPECT_NEAR(grid.time(i), 3.0 * t / (1.0 + 2.0 * t), 1e-15);
    EXPECT_GT(grid.step_size(i), 0.0);
    total += grid.step_size(i);
  }
  EXPECT_NEAR(total, 1.0, 1e-15);
  const auto plain = TimeGrid::make(4, 1.0);
  EXPECT_NEAR(plain.time(1), 0.75, 1e-15);
}

Dynamics unit_dynamics(int steps, double eta = 1.0) {
  std::vector<StepMode> modes(static_cast<std::size_t>(steps), StepMode::kSde);
  return Dynamics(TimeGrid::make(steps, 3.0), eta, modes);
}

TEST(SdeStep, ZeroNoiseReturnsMean) {
  const auto dyn = unit_dynamics(20);
  const std::vector<double> z{0.3, -0.1};
  const std::vector<double> mean{1.0, 2.0};
  const std::vector<double> noise{0.0, 0.0};
  EXPECT_EQ(dyn.sde_step(z, 4, noise, mean), mean);
}

TEST(SdeStep, OdeStepIgnoresNoise) {
  std::vector<StepMode> modes(20, StepMode::kSde);
  modes[5] = StepMode::kOde;
  const Dynamics dyn(TimeGrid::make(20, 3.0), 0.3, modes);
  const std::vector<double> z{0.3, -0.1};
  const std::vector<double> mean{1.0, 2.0};
  const std::vector<double> noise{5.0, -7.0};
  EXPECT_EQ(dyn.sde_step(z, 5, noise, mean), mean);
  EXPECT_EQ(dyn.noise_scale(5), 0.0);
  EXPECT_THROW(dyn.transition_logprob(mean, mean, 5), std::logic_error);
}

TEST(SdeStep, UnitCoefficientsAtFirstStep) {
  // t_0 = 1 so g(t_0) = 1; with eta = 1 the scale is sqrt(h_0)
  const auto dyn = unit_dynamics(20, 1.0);
  NoiseStream rng({11, Stream::kMetric, 0, 0, 0});
  std::vector<double> noise(2);
  rng.fill_normal(noise);
  const std::vector<double> z{0.0, 0.0};
  const std::vector<double> mean{0.5, -0.25};
  const double h = dyn.grid().time(0) - dyn.grid().time(1);
  const auto next = dyn.sde_step(z, 0, noise, mean);
  EXPECT_DOUBLE_EQ(next[0], 0.5 + std::sqrt(h) * noise[0]);
  EXPECT_DOUBLE_EQ(next[1], -0.25 + std::sqrt(h) * noise[1]);
}

TEST(SdeStep, NonFiniteInputAborts) {
  const auto dyn = unit_dynamics(4);
  const std::vector<double> z{NAN};
  const std::vector<double> ok{0.0};
  EXPECT_THROW(dyn.sde_step(z, 0, ok, ok), NumericalError);
  EXPECT_THROW(dyn.sde_step(ok, 0, std::vector<double>{INFINITY}, ok), NumericalError);
}

TEST(TransitionLogprob, ClosedForms) {
  const double sigma = 0.7;
  const std::vector<double> m1{0.2};
  EXPECT_NEAR(gaussian_logpdf(m1, m1, sigma), -0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma), 1e-14);
  const std::vector<double> m2{0.0, 0.0};
  const std::vector<double> x2{1.0, 0.0};
  EXPECT_NEAR(gaussian_logpdf(m2, x2, 1.0), -std::log(2.0 * std::numbers::pi) - 0.5, 1e-14);
}

TEST(TransitionLogprob, IntegratesToOne) {
  const auto dyn = unit_dynamics(20, 0.3);
  const int step = 2;
  const double sigma = dyn.noise_scale(step);
  const std::vector<double> mean{0.4};
  const double lo = 0.4 - 10 * sigma;
  const double hi = 0.4 + 10 * sigma;
  const int n = 20000;
  const double dx = (hi - lo) / n;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const std::vector<double> x{lo + (i + 0.5) * dx};
    total += std::exp(dyn.transition_logprob(mean, x, step)) * dx;
  }
  EXPECT_NEAR(total, 1.0, 1e-3);
}

TEST(BranchNoises, ZeroCorrelationCollapses) {
  const std::vector<double> shared{0.3, -1.2};
  const std::vector<std::vector<double>> eta{{1.0, 2.0}, {-0.5, 0.1}, {3.0, 3.0}};
  for (const auto& xi : branch_noises(shared, eta, 0.0)) EXPECT_EQ(xi, shared);
  EXPECT_THROW(branch_noises(shared, eta, -1.0), ConfigError);
  EXPECT_THROW(branch_noises(shared, {{1.0, 2.0}}, 1.0), std::invalid_argument);
}

double pair_correlation(double s, int n, std::uint64_t seed) {
  NoiseStream rng({seed, Stream::kMetric, 0, 0, 0});
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (int i = 0; i < n; ++i) {
    const std::vector<double> shared{rng.normal()};
    const std::vector<std::vector<double>> eta{{rng.normal()}, {rng.normal()}};
    const auto xi = branch_noises(shared, eta, s);
    sab += xi[0][0] * xi[1][0];
    saa += xi[0][0] * xi[0][0];
    sbb += xi[1][0] * xi[1][0];
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(BranchNoises, CorrelationLaw) {
  EXPECT_NEAR(pair_correlation(4.0, 100000, 1), 1.0 / 17.0, 0.02);
  EXPECT_NEAR(pair_correlation(1.0, 100000, 2), 0.5, 0.02);
}

TEST(SlidingWindow, PositionsAndClamp) {
  SlidingWindow w{true, 4, 30, 9, 15};
  EXPECT_EQ(w.steps(0, 20), (std::vector<int>{9, 10, 11, 12}));
  EXPECT_EQ(w.steps(30, 20), (std::vector<int>{10, 11, 12, 13}));
  EXPECT_EQ(w.steps(59, 20), (std::vector<int>{10, 11, 12, 13}));
  EXPECT_EQ(w.position(6 * 30), 15);
  EXPECT_EQ(w.position(100000), 15);
  EXPECT_EQ(w.steps(100000, 20), (std::vector<int>{15, 16, 17, 18}));
  SlidingWindow late{true, 4, 30, 9, 18};
  EXPECT_EQ(late.steps(100000, 20), (std::vector<int>{18, 19}));
  for (long it = 1; it < 400; ++it) EXPECT_GE(w.position(it), w.position(it - 1));
  EXPECT_THROW((SlidingWindow{true, 4, 30, 9, 25}.validate(20)), ConfigError);
}

TEST(HybridSchedule, SplitsAndWindowAreSde) {
  const auto sched = dense_schedule();
  const SlidingWindow w{true, 4, 30, 9, 15};
  const auto modes = hybrid_mode_schedule(0, sched, w);
  for (int i = 0; i < 20; ++i) {
    const bool sde = i == 0 || i == 3 || i == 6 || (i >= 9 && i <= 12);
    EXPECT_EQ(modes[static_cast<std::size_t>(i)] == StepMode::kSde, sde) << "step " << i;
  }
  const auto later = hybrid_mode_schedule(30, sched, w);
  for (int i = 10; i <= 13; ++i) EXPECT_EQ(later[static_cast<std::size_t>(i)], StepMode::kSde);
  EXPECT_EQ(later[9], StepMode::kSde);  // split step
  EXPECT_EQ(later[14], StepMode::kOde);
}

TEST(SdeEverywhere, FinalStepFollowsSchedule) {
  auto sched = dense_schedule();
  EXPECT_EQ(sde_everywhere(sched).back(), StepMode::kOde);
  sched.final_step_deterministic = false;
  EXPECT_EQ(sde_everywhere(sched).back(), StepMode::kSde);
}

}  // namespace
}  // namespace branchgrpo
