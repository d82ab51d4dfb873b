#ifndef BRANCHGRPO_DYNAMICS_HPP
#define BRANCHGRPO_DYNAMICS_HPP

#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "branchgrpo/tree.hpp"

namespace branchgrpo {

/// Reverse-time grid t_0 = 1 > t_1 > ... > t_T = 0. Steps are evaluated at
/// t_0..t_{T-1}, all inside (0, 1].
struct TimeGrid {
  std::vector<double> times;
  double shift = 3.0;

  /// Uniform grid warped by t' = shift * t / (1 + (shift - 1) * t).
  static TimeGrid make(int steps, double shift);

  int steps() const noexcept { return static_cast<int>(times.size()) - 1; }
  double time(int step) const { return times.at(static_cast<std::size_t>(step)); }
  /// h_i = t_i - t_{i+1}
  double step_size(int step) const;
};

enum class StepMode { kSde, kOde };

/// Sliding window of consecutive steps. Position after `iteration` is
/// min(start + iteration / shift_interval, stop); members past the last step
/// are dropped.
struct SlidingWindow {
  bool enabled = false;
  int size = 4;
  int shift_interval = 30;
  int start = 9;
  int stop = 15;

  void validate(int depth) const;
  int position(long iteration) const;
  std::vector<int> steps(long iteration, int depth) const;
};

/// SDE at every step; the final step is ODE when the schedule marks it
/// deterministic.
std::vector<StepMode> sde_everywhere(const BranchSchedule& schedule);

/// Hybrid ODE-SDE profile: SDE at split steps and inside the current window
/// position, ODE elsewhere.
std::vector<StepMode> hybrid_mode_schedule(long iteration, const BranchSchedule& schedule, const SlidingWindow& window);

/// Euler-Maruyama discretisation of the reverse SDE with mean
/// z + h * v(z, t) and noise scale eps_t * g(t) * sqrt(h), g(t) = t.
class Dynamics {
 public:
  Dynamics(TimeGrid grid, double eta, std::vector<StepMode> modes);

  const TimeGrid& grid() const noexcept { return grid_; }
  double eta() const noexcept { return eta_; }
  int steps() const noexcept { return grid_.steps(); }
  StepMode mode(int step) const { return modes_.at(static_cast<std::size_t>(step)); }
  const std::vector<StepMode>& modes() const noexcept { return modes_; }

  double diffusion(double t) const noexcept { return t; }
  double stochasticity(int step) const { return mode(step) == StepMode::kSde ? eta_ : 0.0; }
  /// eps_{t_i} * g(t_i) * sqrt(h_i); zero at ODE steps.
  double noise_scale(int step) const;

  /// z + h * velocity, written into `mean`.
  void mean_update(std::span<const double> state, std::span<const double> velocity, int step,
                   std::span<double> mean) const;

  /// policy_mean + noise_scale(step) * noise. Throws NumericalError on
  /// non-finite input.
  std::vector<double> sde_step(std::span<const double> state, int step, std::span<const double> noise,
                               std::span<const double> policy_mean) const;

  /// Isotropic Gaussian log-density of `next_state`. Only defined at SDE steps.
  double transition_logprob(std::span<const double> policy_mean, std::span<const double> next_state,
                            int step) const;

 private:
  TimeGrid grid_;
  double eta_;
  std::vector<StepMode> modes_;
};

/// Correlated children noises xi_b = (xi_0 + s * eta_b) / sqrt(1 + s^2).
std::vector<std::vector<double>> branch_noises(std::span<const double> shared,
                                               const std::vector<std::vector<double>>& innovations,
                                               double correlation);

double gaussian_logpdf(std::span<const double> mean, std::span<const double> x, double sigma);

nlohmann::json dynamics_to_json(const Dynamics& dynamics);

}  // namespace branchgrpo

#endif
