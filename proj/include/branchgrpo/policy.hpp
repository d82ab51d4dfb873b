#ifndef BRANCHGRPO_POLICY_HPP
#define BRANCHGRPO_POLICY_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "branchgrpo/dynamics.hpp"
#include "branchgrpo/rng.hpp"

namespace branchgrpo {

struct MixtureMode {
  std::vector<double> mean;
  double weight = 0.5;
  double scale = 0.5;
};

/// Isotropic Gaussian mixture standing in for the data distribution.
struct MixtureWorld {
  int dim = 2;
  std::vector<MixtureMode> modes;

  /// Two equal modes at (+-2, 0) with scale 0.5.
  static MixtureWorld two_modes();

  void validate() const;
  std::vector<double> sample(NoiseStream& rng) const;
  std::size_t nearest_mode(std::span<const double> x) const;
  /// Distance to the nearest mode in units of that mode's scale.
  double scaled_distance_to_nearest(std::span<const double> x) const;
};

/// (z, t) -> hidden -> hidden -> velocity, tanh activations.
struct MlpShape {
  int input = 3;
  int hidden1 = 64;
  int hidden2 = 64;
  int output = 2;

  static MlpShape for_dim(int dim, int hidden = 64) { return {dim + 1, hidden, hidden, dim}; }
  std::size_t param_count() const;

  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

/// Network weights with a paired gradient accumulator and an EMA shadow.
/// Layout: W1 [h1 x in], b1, W2 [h2 x h1], b2, W3 [out x h2], b3.
struct PolicyParams {
  MlpShape shape;
  std::vector<double> values;
  std::vector<double> grads;
  std::vector<double> ema;
  double ema_decay = 0.995;

  /// Scaled-uniform init, deterministic in `seed`.
  static PolicyParams init(const MlpShape& shape, std::uint64_t seed);
  static PolicyParams zeros(const MlpShape& shape);

  void zero_grad();
  /// shadow <- decay * shadow + (1 - decay) * values
  void update_ema();
  void reset_ema();
};

/// Activations kept for the reverse pass.
struct ForwardRecord {
  std::vector<double> input;
  std::vector<double> hidden1;
  std::vector<double> hidden2;
  bool valid = false;
};

/// Velocity v(z, t). Writes `out` (size = output). When `record` is given
/// the activations are stored for backward(). Throws NumericalError with the
/// layer name on non-finite activations.
void forward_velocity(std::span<const double> params, const MlpShape& shape, std::span<const double> state,
                      double t, std::span<double> out, ForwardRecord* record = nullptr);
std::vector<double> forward_velocity(const PolicyParams& params, std::span<const double> state, double t,
                                     ForwardRecord* record = nullptr);

/// Accumulates d<upstream, v>/d(params) into `grad` for the recorded forward
/// pass. Throws std::logic_error if `record` holds no forward pass.
void backward(std::span<const double> params, const MlpShape& shape, const ForwardRecord& record,
              std::span<const double> upstream, std::span<double> grad);
void backward(PolicyParams& params, const ForwardRecord& record, std::span<const double> upstream);

enum class RewardKind { kModePreference, kNegativeDistance, kCustomSmooth };

/// Terminal reward on a leaf state.
///  - mode-preference: exp(-|z - m|^2 / (2 tau^2)), range (0, 1]
///  - negative-distance: -|z - m| / tau
///  - custom-smooth: 1 / (1 + |z - m|^2 / tau^2), range (0, 1]
struct RewardFunction {
  RewardKind kind = RewardKind::kModePreference;
  std::vector<double> target{2.0, 0.0};
  double temperature = 1.0;

  void validate(int dim) const;
  double operator()(std::span<const double> leaf_state) const;
  /// Global Lipschitz constant in the Euclidean norm.
  double lipschitz() const;
};

double reward(const RewardFunction& fn, std::span<const double> leaf_state);

struct PretrainConfig {
  int steps = 3000;
  int batch = 256;
  double lr = 2e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 42;
  bool lr_decay = true;  ///< linear decay to zero over the budget
};

struct PretrainReport {
  std::vector<double> losses;
};

/// Flow matching on the mixture: z_t = (1 - t) x + t e, target x - e.
/// Throws NumericalError when the running loss at 20% of the budget exceeds
/// the initial loss.
PretrainReport pretrain_flow_matching(const MixtureWorld& world, PolicyParams& params, const PretrainConfig& config);

/// Deterministic Euler sampling through every step of `dynamics` (noise is
/// applied only at SDE steps, drawn from `rng`).
std::vector<double> sample_trajectory(const PolicyParams& params, const Dynamics& dynamics,
                                      std::span<const double> z0, NoiseStream* rng = nullptr);

}  // namespace branchgrpo

#endif
