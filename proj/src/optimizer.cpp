#include "branchgrpo/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "branchgrpo/errors.hpp"

namespace branchgrpo {

double global_norm(std::span<const double> grads) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  return std::sqrt(sq);
}

AdamW::AdamW(std::size_t size, OptimizerConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {
  if (!(config_.lr >= 0.0)) throw ConfigError("learning_rate", "must be non-negative");
  if (!(config_.weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be non-negative");
  if (config_.warmup_steps < 0) throw ConfigError("warmup_steps", "must be non-negative");
}

double AdamW::lr_at(long t) const noexcept {
  if (config_.warmup_steps <= 0 || t >= config_.warmup_steps) return config_.lr;
  return config_.lr * static_cast<double>(t) / static_cast<double>(config_.warmup_steps);
}

double AdamW::step(std::span<double> params, std::span<double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("AdamW::step: size mismatch");
  }
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (config_.max_grad_norm > 0.0 && norm > config_.max_grad_norm) {
    const double scale = config_.max_grad_norm / norm;
    for (double& g : grads) g *= scale;
  }
  ++t_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = lr_at(t_);
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] = params[i] * decay - lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
  return norm;
}

}  // namespace branchgrpo
