#ifndef BRANCHGRPO_OPTIMIZER_HPP
#define BRANCHGRPO_OPTIMIZER_HPP

#include <cstddef>
#include <span>
#include <vector>

namespace branchgrpo {

struct OptimizerConfig {
  double lr = 1e-5;
  double weight_decay = 1e-4;
  double max_grad_norm = 0.01;  ///< <= 0 disables clipping
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 0;  ///< linear ramp of lr over the first steps
};

double global_norm(std::span<const double> grads);

/// Adaptive moments with decoupled weight decay and bias correction.
class AdamW {
 public:
  AdamW(std::size_t size, OptimizerConfig config);

  /// Clips `grads` in place to max_grad_norm, then updates `params`
  /// (descent on `grads`). Returns the pre-clip global norm. Throws
  /// NumericalError on non-finite gradients.
  double step(std::span<double> params, std::span<double> grads);

  const OptimizerConfig& config() const noexcept { return config_; }
  void set_lr(double lr) noexcept { config_.lr = lr; }
  long steps_taken() const noexcept { return t_; }
  /// Learning rate applied at update number `t` (1-based).
  double lr_at(long t) const noexcept;

 private:
  OptimizerConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

}  // namespace branchgrpo

#endif
