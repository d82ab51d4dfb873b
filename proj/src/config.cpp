#include "branchgrpo/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

#include "branchgrpo/errors.hpp"

namespace branchgrpo {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  T out{};
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size() || value.empty()) {
    throw ConfigError(key, "cannot parse '" + value + "' as a number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
  if (v == "false" || v == "no" || v == "0" || v == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + v + "'");
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

/// "(a,b,c)" or "a,b,c"
std::vector<double> parse_list(const std::string& key, const std::string& raw) {
  std::string v = trim(raw);
  if (!v.empty() && v.front() == '(') {
    if (v.back() != ')') throw ConfigError(key, "unbalanced parentheses in '" + v + "'");
    v = v.substr(1, v.size() - 2);
  }
  std::vector<double> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, item));
  return out;
}

std::string fmt_list(const std::vector<double>& values) {
  std::string out = "(";
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + fmt(values[i]);
  return out + ")";
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;

  std::string name() const { return section + "." + key; }
};

#define BG_NUM(SEC, KEY, TYPE, EXPR)                                                                    \
  Field {                                                                                               \
    SEC, KEY, [](const RunConfig& c) {                                                                  \
      if constexpr (std::is_floating_point_v<TYPE>) return fmt(c.EXPR); else return std::to_string(c.EXPR); \
    },                                                                                                  \
        [](RunConfig& c, const std::string& v) { c.EXPR = parse_number<TYPE>(std::string(SEC) + "." KEY, v); } \
  }
#define BG_BOOL(SEC, KEY, EXPR)                                         \
  Field {                                                               \
    SEC, KEY, [](const RunConfig& c) { return fmt_bool(c.EXPR); },      \
        [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(std::string(SEC) + "." KEY, v); } \
  }

const char* reward_name(RewardKind k) {
  switch (k) {
    case RewardKind::kModePreference:
      return "mode_preference";
    case RewardKind::kNegativeDistance:
      return "negative_distance";
    case RewardKind::kCustomSmooth:
      return "custom_smooth";
  }
  return "mode_preference";
}

const char* width_name(WidthMode m) {
  switch (m) {
    case WidthMode::kNone:
      return "none";
    case WidthMode::kParentTop1:
      return "parent_top1";
    case WidthMode::kExtremeB:
      return "extreme_b";
  }
  return "none";
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      BG_NUM("run", "seed", std::uint64_t, trainer.seed),
      Field{"run", "mode", [](const RunConfig& c) { return std::string(to_string(c.mode)); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.mode = train_mode_from_string(trim(v));
              } catch (const ConfigError& e) {
                throw ConfigError("run.mode", e.reason());
              }
            }},
      BG_NUM("run", "threads", int, trainer.threads),
      Field{"run", "output_dir", [](const RunConfig& c) { return c.output_dir; },
            [](RunConfig& c, const std::string& v) { c.output_dir = trim(v); }},
      BG_BOOL("run", "record_wall_time", trainer.record_wall_time),
      BG_NUM("run", "sampler_seed", std::uint64_t, sampler_seed),
      BG_NUM("run", "eval_samples", int, eval_samples),
      BG_NUM("run", "reward_threshold", double, reward_threshold),

      BG_NUM("schedule", "depth", int, trainer.schedule.depth),
      Field{"schedule", "split_steps",
            [](const RunConfig& c) { return format_split_steps(c.trainer.schedule.split_steps); },
            [](RunConfig& c, const std::string& v) {
              try {
                c.trainer.schedule.split_steps = parse_split_steps(v);
              } catch (const ConfigError& e) {
                throw ConfigError("schedule.split_steps", e.reason());
              }
            }},
      BG_NUM("schedule", "branch_factor", int, trainer.schedule.branch_factor),
      BG_NUM("schedule", "correlation", double, trainer.schedule.correlation),
      BG_BOOL("schedule", "ignore_last_step", trainer.schedule.final_step_deterministic),
      BG_NUM("schedule", "leaf_budget", std::size_t, trainer.schedule.leaf_budget),

      BG_NUM("dynamics", "shift", double, trainer.shift),
      BG_NUM("dynamics", "eta", double, trainer.eta),
      BG_NUM("dynamics", "sampling_steps", int, trainer.sequential_steps),

      Field{"world", "modes",
            [](const RunConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.trainer.world.modes.size(); ++i) {
                out += (i ? ";" : "") + fmt_list(c.trainer.world.modes[i].mean);
              }
              return out;
            },
            [](RunConfig& c, const std::string& v) {
              auto& world = c.trainer.world;
              std::vector<MixtureMode> modes;
              std::stringstream ss(v);
              std::string item;
              while (std::getline(ss, item, ';')) {
                MixtureMode m;
                m.mean = parse_list("world.modes", item);
                modes.push_back(m);
              }
              if (modes.empty() || modes.front().mean.empty()) throw ConfigError("world.modes", "no modes given");
              const double w = 1.0 / static_cast<double>(modes.size());
              for (auto& m : modes) m.weight = w;
              for (std::size_t i = 0; i < modes.size() && i < world.modes.size(); ++i) {
                modes[i].scale = world.modes[i].scale;
              }
              world.modes = std::move(modes);
              world.dim = static_cast<int>(world.modes.front().mean.size());
            }},
      Field{"world", "weights",
            [](const RunConfig& c) {
              std::vector<double> w;
              for (const auto& m : c.trainer.world.modes) w.push_back(m.weight);
              return fmt_list(w);
            },
            [](RunConfig& c, const std::string& v) {
              const auto w = parse_list("world.weights", v);
              if (w.size() != c.trainer.world.modes.size()) {
                throw ConfigError("world.weights", "need one weight per mode (set world.modes first)");
              }
              for (std::size_t i = 0; i < w.size(); ++i) c.trainer.world.modes[i].weight = w[i];
            }},
      Field{"world", "scales",
            [](const RunConfig& c) {
              std::vector<double> s;
              for (const auto& m : c.trainer.world.modes) s.push_back(m.scale);
              return fmt_list(s);
            },
            [](RunConfig& c, const std::string& v) {
              const auto s = parse_list("world.scales", v);
              if (s.size() != c.trainer.world.modes.size()) {
                throw ConfigError("world.scales", "need one scale per mode (set world.modes first)");
              }
              for (std::size_t i = 0; i < s.size(); ++i) c.trainer.world.modes[i].scale = s[i];
            }},

      Field{"reward", "kind", [](const RunConfig& c) { return std::string(reward_name(c.trainer.reward.kind)); },
            [](RunConfig& c, const std::string& raw) {
              const auto v = trim(raw);
              if (v == "mode_preference") {
                c.trainer.reward.kind = RewardKind::kModePreference;
              } else if (v == "negative_distance") {
                c.trainer.reward.kind = RewardKind::kNegativeDistance;
              } else if (v == "custom_smooth") {
                c.trainer.reward.kind = RewardKind::kCustomSmooth;
              } else {
                throw ConfigError("reward.kind", "unknown reward '" + v + "'");
              }
            }},
      Field{"reward", "target", [](const RunConfig& c) { return fmt_list(c.trainer.reward.target); },
            [](RunConfig& c, const std::string& v) { c.trainer.reward.target = parse_list("reward.target", v); }},
      BG_NUM("reward", "temperature", double, trainer.reward.temperature),

      BG_NUM("policy", "hidden", int, hidden),
      BG_BOOL("policy", "use_ema", use_ema),
      BG_NUM("policy", "ema_decay", double, ema_decay),

      BG_NUM("pretrain", "steps", int, pretrain.steps),
      BG_NUM("pretrain", "batch", int, pretrain.batch),
      BG_NUM("pretrain", "learning_rate", double, pretrain.lr),
      BG_NUM("pretrain", "weight_decay", double, pretrain.weight_decay),
      BG_NUM("pretrain", "seed", std::uint64_t, pretrain.seed),
      BG_BOOL("pretrain", "lr_decay", pretrain.lr_decay),

      Field{"fusion", "mode",
            [](const RunConfig& c) {
              return std::string(c.trainer.fusion.mode == FusionMode::kUniform ? "uniform" : "softmax");
            },
            [](RunConfig& c, const std::string& raw) {
              const auto v = trim(raw);
              if (v == "softmax") {
                c.trainer.fusion.mode = FusionMode::kSoftmaxPath;
              } else if (v == "uniform") {
                c.trainer.fusion.mode = FusionMode::kUniform;
              } else {
                throw ConfigError("fusion.mode", "expected softmax or uniform, got '" + v + "'");
              }
            }},
      BG_NUM("fusion", "beta", double, trainer.fusion.beta),

      Field{"pruning", "width_mode",
            [](const RunConfig& c) { return std::string(width_name(c.trainer.pruning.width_mode)); },
            [](RunConfig& c, const std::string& raw) {
              const auto v = trim(raw);
              if (v == "none") {
                c.trainer.pruning.width_mode = WidthMode::kNone;
              } else if (v == "parent_top1") {
                c.trainer.pruning.width_mode = WidthMode::kParentTop1;
              } else if (v == "extreme_b") {
                c.trainer.pruning.width_mode = WidthMode::kExtremeB;
              } else {
                throw ConfigError("pruning.width_mode", "unknown width mode '" + v + "'");
              }
            }},
      BG_NUM("pruning", "extreme_b", int, trainer.pruning.extreme_b),
      BG_BOOL("pruning", "depth_window", trainer.pruning.depth_window.enabled),
      BG_NUM("pruning", "window_size", int, trainer.pruning.depth_window.size),
      BG_NUM("pruning", "shift_interval", int, trainer.pruning.depth_window.shift_interval),
      BG_NUM("pruning", "window_start", int, trainer.pruning.depth_window.start),
      BG_NUM("pruning", "window_stop", int, trainer.pruning.depth_window.stop),

      BG_NUM("hybrid", "window_size", int, trainer.hybrid_window.size),
      BG_NUM("hybrid", "shift_interval", int, trainer.hybrid_window.shift_interval),
      BG_NUM("hybrid", "window_start", int, trainer.hybrid_window.start),
      BG_NUM("hybrid", "window_stop", int, trainer.hybrid_window.stop),

      BG_NUM("grpo", "clip_range", double, trainer.grpo.clip_epsilon),
      BG_NUM("grpo", "num_generations", int, trainer.grpo.num_generations),
      BG_NUM("grpo", "train_batch_size", int, trainer.grpo.train_batch_size),
      BG_NUM("grpo", "grad_accum_steps", int, trainer.grpo.grad_accum_steps),
      BG_NUM("grpo", "iterations", int, trainer.grpo.iterations),
      BG_BOOL("grpo", "init_same_noise", trainer.grpo.init_same_noise),
      BG_NUM("grpo", "timestep_fraction", double, trainer.grpo.timestep_fraction),
      BG_NUM("grpo", "adv_clip_max", double, trainer.grpo.advantage_clip),
      BG_NUM("grpo", "norm_epsilon", double, trainer.grpo.norm_epsilon),
      BG_NUM("grpo", "updates_per_iteration", int, trainer.grpo.updates_per_iteration),
      BG_NUM("grpo", "checkpoint_steps", int, trainer.grpo.checkpoint_every),

      BG_NUM("optimizer", "learning_rate", double, trainer.optimizer.lr),
      BG_NUM("optimizer", "weight_decay", double, trainer.optimizer.weight_decay),
      BG_NUM("optimizer", "max_grad_norm", double, trainer.optimizer.max_grad_norm),
      BG_NUM("optimizer", "beta1", double, trainer.optimizer.beta1),
      BG_NUM("optimizer", "beta2", double, trainer.optimizer.beta2),
      BG_NUM("optimizer", "eps", double, trainer.optimizer.eps),
      BG_NUM("optimizer", "warmup_steps", int, trainer.optimizer.warmup_steps),
  };
  return table;
}

#undef BG_NUM
#undef BG_BOOL

const Field& find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  throw ConfigError(section + "." + key, "unknown configuration key");
}

/// Rethrows a ConfigError from a component validator under its section.
template <class Fn>
void qualified(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    const std::string key = e.key().find('.') == std::string::npos ? section + "." + e.key() : e.key();
    throw ConfigError(key, e.reason());
  }
}

}  // namespace

std::vector<int> parse_split_steps(const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "dense") return dense_schedule().split_steps;
  if (v == "mixed") return mixed_schedule().split_steps;
  if (v == "sparse") return sparse_schedule().split_steps;
  std::vector<int> out;
  for (double d : parse_list("split_steps", v)) {
    if (d != static_cast<int>(d)) throw ConfigError("split_steps", "steps must be integers");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

std::string format_split_steps(const std::vector<int>& steps) {
  std::string out = "(";
  for (std::size_t i = 0; i < steps.size(); ++i) out += (i ? "," : "") + std::to_string(steps[i]);
  return out + ")";
}

void RunConfig::validate() const {
  qualified("schedule", [&] { trainer.schedule.validate(); });
  qualified("world", [&] { trainer.world.validate(); });
  qualified("reward", [&] { trainer.reward.validate(trainer.world.dim); });
  qualified("grpo", [&] { trainer.grpo.validate(); });
  qualified("pruning", [&] { trainer.pruning.validate(trainer.schedule); });
  qualified("hybrid", [&] { trainer.hybrid_window.validate(trainer.schedule.depth); });
  if (!(trainer.shift > 0.0)) throw ConfigError("dynamics.shift", "must be positive");
  if (!(trainer.eta >= 0.0)) throw ConfigError("dynamics.eta", "must be non-negative");
  if (trainer.sequential_steps < 1) throw ConfigError("dynamics.sampling_steps", "must be positive");
  if (trainer.threads < 1) throw ConfigError("run.threads", "must be positive");
  if (eval_samples < 1) throw ConfigError("run.eval_samples", "must be positive");
  if (hidden < 1) throw ConfigError("policy.hidden", "must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("policy.ema_decay", "must lie in [0, 1)");
  if (pretrain.steps < 0) throw ConfigError("pretrain.steps", "must be non-negative");
  if (pretrain.batch < 1) throw ConfigError("pretrain.batch", "must be positive");
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.learning_rate", "must be positive");
  if (!(trainer.optimizer.lr >= 0.0)) throw ConfigError("optimizer.learning_rate", "must be non-negative");
  if (!(trainer.optimizer.weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay", "must be non-negative");
  if (!(trainer.optimizer.beta1 >= 0.0 && trainer.optimizer.beta1 < 1.0)) {
    throw ConfigError("optimizer.beta1", "must lie in [0, 1)");
  }
  if (!(trainer.optimizer.beta2 >= 0.0 && trainer.optimizer.beta2 < 1.0)) {
    throw ConfigError("optimizer.beta2", "must lie in [0, 1)");
  }
  if (!(trainer.optimizer.eps > 0.0)) throw ConfigError("optimizer.eps", "must be positive");
  if (trainer.optimizer.warmup_steps < 0) throw ConfigError("optimizer.warmup_steps", "must be non-negative");
  if (trainer.fusion.mode != FusionMode::kSoftmaxPath && trainer.fusion.mode != FusionMode::kUniform) {
    throw ConfigError("fusion.mode", "training supports softmax or uniform fusion");
  }
  if (!std::isfinite(trainer.fusion.beta)) throw ConfigError("fusion.beta", "must be finite");
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::set<std::string> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // ';' also separates world modes, so it only starts a comment at line start
    std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty() || body.front() == ';') continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError("line " + std::to_string(lineno), "malformed section header");
      section = trim(body.substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const Field& field = find_field(section, key);
    if (!seen.insert(field.name()).second) throw ConfigError(field.name(), "duplicate key");
    field.set(config, value);
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string emit_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : emit_config(config)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string run_id(const RunConfig& config) {
  std::ostringstream out;
  out << config.trainer.seed << "-" << std::hex << std::setw(16) << std::setfill('0') << config_hash(config);
  return out.str();
}

void apply_env_overrides(RunConfig& config) {
  if (const char* dir = std::getenv("BRANCHGRPO_OUTPUT_DIR"); dir != nullptr && *dir != '\0') {
    config.output_dir = dir;
  }
  if (const char* threads = std::getenv("BRANCHGRPO_THREADS"); threads != nullptr && *threads != '\0') {
    config.trainer.threads = parse_number<int>("BRANCHGRPO_THREADS", threads);
    if (config.trainer.threads < 1) throw ConfigError("BRANCHGRPO_THREADS", "must be positive");
  }
}

void set_config_value(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "expected section.key=value");
  const std::string name = trim(assignment.substr(0, eq));
  const auto dot = name.find('.');
  if (dot == std::string::npos) throw ConfigError(name, "expected section.key");
  find_field(name.substr(0, dot), name.substr(dot + 1)).set(config, assignment.substr(eq + 1));
}

}  // namespace branchgrpo
