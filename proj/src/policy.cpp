#include "branchgrpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "branchgrpo/errors.hpp"
#include "branchgrpo/optimizer.hpp"

namespace branchgrpo {

MixtureWorld MixtureWorld::two_modes() {
  MixtureWorld world;
  world.dim = 2;
  world.modes = {{{-2.0, 0.0}, 0.5, 0.5}, {{2.0, 0.0}, 0.5, 0.5}};
  return world;
}

void MixtureWorld::validate() const {
  if (dim < 1) throw ConfigError("dim", "must be positive");
  if (modes.size() < 2) throw ConfigError("modes", "need at least two modes");
  double total = 0.0;
  for (const auto& m : modes) {
    if (static_cast<int>(m.mean.size()) != dim) throw ConfigError("modes", "mode mean dimension mismatch");
    if (!(m.weight > 0.0 && m.weight <= 1.0)) throw ConfigError("modes", "weights must lie in (0, 1]");
    if (!(m.scale > 0.0)) throw ConfigError("modes", "scales must be positive");
    total += m.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("modes", "weights must sum to 1");
}

std::vector<double> MixtureWorld::sample(NoiseStream& rng) const {
  double u = rng.uniform();
  std::size_t k = 0;
  for (; k + 1 < modes.size(); ++k) {
    if (u < modes[k].weight) break;
    u -= modes[k].weight;
  }
  std::vector<double> x(static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = modes[k].mean[i] + modes[k].scale * rng.normal();
  return x;
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sq += d * d;
  }
  return sq;
}

}  // namespace

std::size_t MixtureWorld::nearest_mode(std::span<const double> x) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const double d = squared_distance(x, modes[k].mean);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

double MixtureWorld::scaled_distance_to_nearest(std::span<const double> x) const {
  const auto k = nearest_mode(x);
  return std::sqrt(squared_distance(x, modes[k].mean)) / modes[k].scale;
}

std::size_t MlpShape::param_count() const {
  const auto in = static_cast<std::size_t>(input);
  const auto a = static_cast<std::size_t>(hidden1);
  const auto b = static_cast<std::size_t>(hidden2);
  const auto out = static_cast<std::size_t>(output);
  return a * in + a + b * a + b + out * b + out;
}

PolicyParams PolicyParams::zeros(const MlpShape& shape) {
  PolicyParams p;
  p.shape = shape;
  p.values.assign(shape.param_count(), 0.0);
  p.grads.assign(shape.param_count(), 0.0);
  p.ema = p.values;
  return p;
}

PolicyParams PolicyParams::init(const MlpShape& shape, std::uint64_t seed) {
  PolicyParams p = zeros(shape);
  NoiseStream rng({seed, Stream::kInit, 0, 0, 0});
  std::size_t off = 0;
  auto fill_layer = [&](int rows, int cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    const auto n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    for (std::size_t i = 0; i < n; ++i) p.values[off + i] = bound * (2.0 * rng.uniform() - 1.0);
    off += n + static_cast<std::size_t>(rows);  // biases start at zero
  };
  fill_layer(shape.hidden1, shape.input);
  fill_layer(shape.hidden2, shape.hidden1);
  fill_layer(shape.output, shape.hidden2);
  p.ema = p.values;
  return p;
}

void PolicyParams::zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }

void PolicyParams::update_ema() {
  for (std::size_t i = 0; i < values.size(); ++i) ema[i] = ema_decay * ema[i] + (1.0 - ema_decay) * values[i];
}

void PolicyParams::reset_ema() { ema = values; }

namespace {

struct Layout {
  std::size_t w1, b1, w2, b2, w3, b3;
};

Layout layout_of(const MlpShape& s) {
  Layout l{};
  l.w1 = 0;
  l.b1 = l.w1 + static_cast<std::size_t>(s.hidden1 * s.input);
  l.w2 = l.b1 + static_cast<std::size_t>(s.hidden1);
  l.b2 = l.w2 + static_cast<std::size_t>(s.hidden2 * s.hidden1);
  l.w3 = l.b2 + static_cast<std::size_t>(s.hidden2);
  l.b3 = l.w3 + static_cast<std::size_t>(s.output * s.hidden2);
  return l;
}

void dense_tanh(const double* w, const double* b, const double* x, int rows, int cols, double* y) {
  for (int r = 0; r < rows; ++r) {
    const double* row = w + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols);
    double acc = b[r];
    for (int c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = std::tanh(acc);
  }
}

void check_layer(const double* v, int n, const char* layer) {
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericalError(std::string("non-finite activation in layer ") + layer + " (unit " + std::to_string(i) +
                           ")");
    }
  }
}

}  // namespace

void forward_velocity(std::span<const double> params, const MlpShape& shape, std::span<const double> state,
                      double t, std::span<double> out, ForwardRecord* record) {
  if (static_cast<int>(state.size()) + 1 != shape.input || static_cast<int>(out.size()) != shape.output) {
    throw std::invalid_argument("forward_velocity: dimension mismatch");
  }
  const Layout l = layout_of(shape);
  const double* p = params.data();
  double input[64];
  std::vector<double> big_input;
  double* x = input;
  if (shape.input > 64) {
    big_input.resize(static_cast<std::size_t>(shape.input));
    x = big_input.data();
  }
  std::copy(state.begin(), state.end(), x);
  x[shape.input - 1] = t;
  check_layer(x, shape.input, "input");

  thread_local ForwardRecord scratch;
  ForwardRecord& rec = record ? *record : scratch;
  rec.input.assign(x, x + shape.input);
  rec.hidden1.resize(static_cast<std::size_t>(shape.hidden1));
  rec.hidden2.resize(static_cast<std::size_t>(shape.hidden2));
  dense_tanh(p + l.w1, p + l.b1, x, shape.hidden1, shape.input, rec.hidden1.data());
  check_layer(rec.hidden1.data(), shape.hidden1, "hidden1");
  dense_tanh(p + l.w2, p + l.b2, rec.hidden1.data(), shape.hidden2, shape.hidden1, rec.hidden2.data());
  check_layer(rec.hidden2.data(), shape.hidden2, "hidden2");
  for (int r = 0; r < shape.output; ++r) {
    const double* row = p + l.w3 + static_cast<std::size_t>(r) * static_cast<std::size_t>(shape.hidden2);
    double acc = p[l.b3 + static_cast<std::size_t>(r)];
    for (int c = 0; c < shape.hidden2; ++c) acc += row[c] * rec.hidden2[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(r)] = acc;
  }
  check_layer(out.data(), shape.output, "output");
  rec.valid = true;
}

std::vector<double> forward_velocity(const PolicyParams& params, std::span<const double> state, double t,
                                     ForwardRecord* record) {
  std::vector<double> out(static_cast<std::size_t>(params.shape.output));
  forward_velocity(params.values, params.shape, state, t, out, record);
  return out;
}

void backward(std::span<const double> params, const MlpShape& shape, const ForwardRecord& record,
              std::span<const double> upstream, std::span<double> grad) {
  if (!record.valid) throw std::logic_error("backward called without a recorded forward pass");
  if (static_cast<int>(upstream.size()) != shape.output || grad.size() != shape.param_count()) {
    throw std::invalid_argument("backward: dimension mismatch");
  }
  const Layout l = layout_of(shape);
  const double* p = params.data();
  double* g = grad.data();
  const int h1 = shape.hidden1;
  const int h2 = shape.hidden2;

  std::vector<double> d2(static_cast<std::size_t>(h2), 0.0);
  for (int r = 0; r < shape.output; ++r) {
    const double u = upstream[static_cast<std::size_t>(r)];
    g[l.b3 + static_cast<std::size_t>(r)] += u;
    double* gw = g + l.w3 + static_cast<std::size_t>(r) * static_cast<std::size_t>(h2);
    const double* w = p + l.w3 + static_cast<std::size_t>(r) * static_cast<std::size_t>(h2);
    for (int c = 0; c < h2; ++c) {
      gw[c] += u * record.hidden2[static_cast<std::size_t>(c)];
      d2[static_cast<std::size_t>(c)] += u * w[c];
    }
  }
  std::vector<double> d1(static_cast<std::size_t>(h1), 0.0);
  for (int r = 0; r < h2; ++r) {
    const double a = record.hidden2[static_cast<std::size_t>(r)];
    const double u = d2[static_cast<std::size_t>(r)] * (1.0 - a * a);
    g[l.b2 + static_cast<std::size_t>(r)] += u;
    double* gw = g + l.w2 + static_cast<std::size_t>(r) * static_cast<std::size_t>(h1);
    const double* w = p + l.w2 + static_cast<std::size_t>(r) * static_cast<std::size_t>(h1);
    for (int c = 0; c < h1; ++c) {
      gw[c] += u * record.hidden1[static_cast<std::size_t>(c)];
      d1[static_cast<std::size_t>(c)] += u * w[c];
    }
  }
  for (int r = 0; r < h1; ++r) {
    const double a = record.hidden1[static_cast<std::size_t>(r)];
    const double u = d1[static_cast<std::size_t>(r)] * (1.0 - a * a);
    g[l.b1 + static_cast<std::size_t>(r)] += u;
    double* gw = g + l.w1 + static_cast<std::size_t>(r) * static_cast<std::size_t>(shape.input);
    for (int c = 0; c < shape.input; ++c) gw[c] += u * record.input[static_cast<std::size_t>(c)];
  }
}

void backward(PolicyParams& params, const ForwardRecord& record, std::span<const double> upstream) {
  backward(params.values, params.shape, record, upstream, params.grads);
}

void RewardFunction::validate(int dim) const {
  if (static_cast<int>(target.size()) != dim) throw ConfigError("target", "dimension does not match world");
  if (!(temperature > 0.0)) throw ConfigError("temperature", "must be positive");
}

double RewardFunction::operator()(std::span<const double> leaf_state) const {
  const double sq = squared_distance(leaf_state, target);
  const double tau2 = temperature * temperature;
  switch (kind) {
    case RewardKind::kModePreference:
      return std::exp(-sq / (2.0 * tau2));
    case RewardKind::kNegativeDistance:
      return -std::sqrt(sq) / temperature;
    case RewardKind::kCustomSmooth:
      return 1.0 / (1.0 + sq / tau2);
  }
  return 0.0;
}

double RewardFunction::lipschitz() const {
  switch (kind) {
    case RewardKind::kModePreference:
      return 1.0 / (temperature * std::sqrt(std::exp(1.0)));
    case RewardKind::kNegativeDistance:
      return 1.0 / temperature;
    case RewardKind::kCustomSmooth:
      return 3.0 * std::sqrt(3.0) / (8.0 * temperature);
  }
  return 0.0;
}

double reward(const RewardFunction& fn, std::span<const double> leaf_state) { return fn(leaf_state); }

PretrainReport pretrain_flow_matching(const MixtureWorld& world, PolicyParams& params, const PretrainConfig& config) {
  world.validate();
  if (params.shape != MlpShape{world.dim + 1, params.shape.hidden1, params.shape.hidden2, world.dim}) {
    throw ConfigError("hidden", "network shape does not match world dimension");
  }
  if (config.steps < 0 || config.batch < 1) throw ConfigError("pretrain_steps", "invalid pretraining budget");
  PretrainReport report;
  if (config.steps == 0) return report;

  OptimizerConfig opt_cfg;
  opt_cfg.lr = config.lr;
  opt_cfg.weight_decay = config.weight_decay;
  opt_cfg.max_grad_norm = 0.0;
  AdamW opt(params.values.size(), opt_cfg);

  const auto dim = static_cast<std::size_t>(world.dim);
  std::vector<double> z(dim), target(dim), v(dim), upstream(dim);
  ForwardRecord rec;
  const int window = std::max(1, std::min(10, config.steps / 10));
  const int check_at = std::max(window, config.steps / 5);
  double initial = 0.0;

  for (int step = 0; step < config.steps; ++step) {
    NoiseStream rng({config.seed, Stream::kPretrain, static_cast<std::uint64_t>(step), 0, 0});
    params.zero_grad();
    double loss = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      const auto x = world.sample(rng);
      const double t = rng.uniform();
      for (std::size_t i = 0; i < dim; ++i) {
        const double e = rng.normal();
        z[i] = (1.0 - t) * x[i] + t * e;
        target[i] = x[i] - e;
      }
      forward_velocity(params.values, params.shape, z, t, v, &rec);
      for (std::size_t i = 0; i < dim; ++i) {
        const double r = v[i] - target[i];
        loss += r * r;
        upstream[i] = 2.0 * r / config.batch;
      }
      backward(params, rec, upstream);
    }
    loss /= config.batch;
    if (!std::isfinite(loss)) throw NumericalError("pretraining loss became non-finite at step " + std::to_string(step));
    report.losses.push_back(loss);
    if (config.lr_decay) opt.set_lr(config.lr * (1.0 - static_cast<double>(step) / config.steps));
    opt.step(params.values, params.grads);

    if (step == 0) initial = loss;
    if (step + 1 == check_at && check_at < config.steps) {
      const double recent =
          std::accumulate(report.losses.end() - window, report.losses.end(), 0.0) / window;
      if (recent > initial) {
        throw NumericalError("pretraining diverged: loss " + std::to_string(recent) + " after " +
                             std::to_string(check_at) + " steps exceeds initial " + std::to_string(initial));
      }
    }
  }
  params.zero_grad();
  params.reset_ema();
  return report;
}

std::vector<double> sample_trajectory(const PolicyParams& params, const Dynamics& dynamics,
                                      std::span<const double> z0, NoiseStream* rng) {
  std::vector<double> z(z0.begin(), z0.end());
  std::vector<double> v(z.size()), mean(z.size()), noise(z.size(), 0.0);
  for (int step = 0; step < dynamics.steps(); ++step) {
    forward_velocity(params.values, params.shape, z, dynamics.grid().time(step), v);
    dynamics.mean_update(z, v, step, mean);
    const double scale = dynamics.noise_scale(step);
    if (scale > 0.0 && rng != nullptr) {
      rng->fill_normal(noise);
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = mean[i] + scale * noise[i];
    } else {
      z = mean;
    }
  }
  return z;
}

}  // namespace branchgrpo
