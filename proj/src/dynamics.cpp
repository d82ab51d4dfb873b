#include "branchgrpo/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "branchgrpo/errors.hpp"

namespace branchgrpo {

TimeGrid TimeGrid::make(int steps, double shift) {
  if (steps < 1) throw ConfigError("depth", "time grid needs at least one step");
  if (!(shift > 0.0)) throw ConfigError("shift", "must be positive");
  TimeGrid grid;
  grid.shift = shift;
  grid.times.resize(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) / steps;
    grid.times[static_cast<std::size_t>(i)] = shift * t / (1.0 + (shift - 1.0) * t);
  }
  grid.times.front() = 1.0;
  grid.times.back() = 0.0;
  return grid;
}

double TimeGrid::step_size(int step) const {
  return times.at(static_cast<std::size_t>(step)) - times.at(static_cast<std::size_t>(step) + 1);
}

void SlidingWindow::validate(int depth) const {
  if (size < 1) throw ConfigError("window_size", "must be positive");
  if (shift_interval < 1) throw ConfigError("shift_interval", "must be positive");
  if (start < 0) throw ConfigError("window_start", "must be non-negative");
  if (stop < start) throw ConfigError("window_stop", "must not precede window_start");
  if (stop > depth - 1) throw ConfigError("window_stop", "must be at most depth - 1");
}

int SlidingWindow::position(long iteration) const {
  const long moved = std::max(0L, iteration) / shift_interval;
  return static_cast<int>(std::min<long>(start + moved, stop));
}

std::vector<int> SlidingWindow::steps(long iteration, int depth) const {
  const int p = position(iteration);
  std::vector<int> out;
  for (int i = 0; i < size; ++i) {
    if (p + i > depth - 1) {
      std::clog << "[branchgrpo] window clamped at step " << depth - 1 << " (position " << p << ", size " << size
                << ")\n";
      break;
    }
    out.push_back(p + i);
  }
  return out;
}

std::vector<StepMode> sde_everywhere(const BranchSchedule& schedule) {
  std::vector<StepMode> modes(static_cast<std::size_t>(schedule.depth), StepMode::kSde);
  if (schedule.final_step_deterministic) modes.back() = StepMode::kOde;
  return modes;
}

std::vector<StepMode> hybrid_mode_schedule(long iteration, const BranchSchedule& schedule,
                                           const SlidingWindow& window) {
  window.validate(schedule.depth);
  std::vector<StepMode> modes(static_cast<std::size_t>(schedule.depth), StepMode::kOde);
  for (int step : window.steps(iteration, schedule.depth)) modes[static_cast<std::size_t>(step)] = StepMode::kSde;
  if (schedule.final_step_deterministic) modes.back() = StepMode::kOde;
  for (int step : schedule.split_steps) modes[static_cast<std::size_t>(step)] = StepMode::kSde;
  return modes;
}

Dynamics::Dynamics(TimeGrid grid, double eta, std::vector<StepMode> modes)
    : grid_(std::move(grid)), eta_(eta), modes_(std::move(modes)) {
  if (!(eta_ >= 0.0) || !std::isfinite(eta_)) throw ConfigError("eta", "must be finite and non-negative");
  if (static_cast<int>(modes_.size()) != grid_.steps()) {
    throw std::invalid_argument("step mode count does not match time grid");
  }
  for (int i = 0; i < grid_.steps(); ++i) {
    if (!(grid_.step_size(i) > 0.0)) throw std::invalid_argument("time grid must be strictly decreasing");
  }
}

double Dynamics::noise_scale(int step) const {
  const double t = grid_.time(step);
  return stochasticity(step) * diffusion(t) * std::sqrt(grid_.step_size(step));
}

void Dynamics::mean_update(std::span<const double> state, std::span<const double> velocity, int step,
                           std::span<double> mean) const {
  const double h = grid_.step_size(step);
  for (std::size_t i = 0; i < state.size(); ++i) mean[i] = state[i] + h * velocity[i];
}

namespace {

void require_finite(std::span<const double> v, const char* what, int step) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericalError(std::string("non-finite ") + what + " at step " + std::to_string(step));
    }
  }
}

}  // namespace

std::vector<double> Dynamics::sde_step(std::span<const double> state, int step, std::span<const double> noise,
                                       std::span<const double> policy_mean) const {
  if (step < 0 || step >= steps()) throw std::out_of_range("step outside time grid");
  if (noise.size() != state.size() || policy_mean.size() != state.size()) {
    throw std::invalid_argument("sde_step: dimension mismatch");
  }
  require_finite(state, "state", step);
  require_finite(noise, "noise", step);
  require_finite(policy_mean, "policy mean", step);
  const double scale = noise_scale(step);
  std::vector<double> next(policy_mean.begin(), policy_mean.end());
  if (scale > 0.0) {
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += scale * noise[i];
  }
  return next;
}

double gaussian_logpdf(std::span<const double> mean, std::span<const double> x, double sigma) {
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    sq += d * d;
  }
  const double n = static_cast<double>(x.size());
  return -0.5 * sq / (sigma * sigma) - n * std::log(sigma) - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

double Dynamics::transition_logprob(std::span<const double> policy_mean, std::span<const double> next_state,
                                    int step) const {
  const double scale = noise_scale(step);
  if (mode(step) != StepMode::kSde || !(scale > 0.0)) {
    throw std::logic_error("transition log-density requested at deterministic step " + std::to_string(step));
  }
  if (policy_mean.size() != next_state.size()) throw std::invalid_argument("transition_logprob: dimension mismatch");
  return gaussian_logpdf(policy_mean, next_state, scale);
}

std::vector<std::vector<double>> branch_noises(std::span<const double> shared,
                                               const std::vector<std::vector<double>>& innovations,
                                               double correlation) {
  if (!(correlation >= 0.0)) throw ConfigError("correlation", "must be non-negative");
  if (innovations.size() < 2) throw std::invalid_argument("branch_noises needs at least two innovations");
  const double norm = 1.0 / std::sqrt(1.0 + correlation * correlation);
  std::vector<std::vector<double>> out;
  out.reserve(innovations.size());
  for (const auto& eta : innovations) {
    if (eta.size() != shared.size()) throw std::invalid_argument("branch_noises: dimension mismatch");
    std::vector<double> xi(shared.size());
    for (std::size_t i = 0; i < xi.size(); ++i) xi[i] = (shared[i] + correlation * eta[i]) * norm;
    out.push_back(std::move(xi));
  }
  return out;
}

nlohmann::json dynamics_to_json(const Dynamics& dynamics) {
  nlohmann::json modes = nlohmann::json::array();
  nlohmann::json scales = nlohmann::json::array();
  for (int i = 0; i < dynamics.steps(); ++i) {
    modes.push_back(dynamics.mode(i) == StepMode::kSde ? "sde" : "ode");
    scales.push_back(dynamics.noise_scale(i));
  }
  return {{"times", dynamics.grid().times},
          {"shift", dynamics.grid().shift},
          {"eta", dynamics.eta()},
          {"modes", modes},
          {"noise_scales", scales}};
}

}  // namespace branchgrpo
