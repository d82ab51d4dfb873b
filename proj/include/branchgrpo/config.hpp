#ifndef BRANCHGRPO_CONFIG_HPP
#define BRANCHGRPO_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "branchgrpo/policy.hpp"
#include "branchgrpo/trainer.hpp"

namespace branchgrpo {

/// Every knob of a run. Defaults: Dense schedule, s = 4, beta = 1, eta 0.3,
/// AdamW lr 1e-5, weight decay 1e-4, grad-norm cap 0.01.
struct RunConfig {
  TrainerConfig trainer{};
  TrainMode mode = TrainMode::kBranch;
  PretrainConfig pretrain{};
  int hidden = 64;
  double ema_decay = 0.995;
  bool use_ema = true;
  std::uint64_t sampler_seed = 1223627;  ///< evaluation sampling
  int eval_samples = 1024;
  double reward_threshold = 0.9;  ///< for iterations_to_threshold
  std::string output_dir = "runs";

  /// Cross-field checks; throws ConfigError naming the key.
  void validate() const;
};

/// Parses INI-like text: `[section]` headers, `key = value` lines, `#` or
/// `;` comments. Unknown keys, type mismatches and invariant violations
/// throw ConfigError with the offending `section.key`.
RunConfig parse_config(const std::string& text);
/// Reads and parses a file; IoError if it cannot be read.
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value; parse_config(emit_config(c)) == c.
std::string emit_config(const RunConfig& config);

/// FNV-1a of the emitted config.
std::uint64_t config_hash(const RunConfig& config);
/// "<seed>-<16 hex digits of config_hash>"
std::string run_id(const RunConfig& config);

/// Applies BRANCHGRPO_OUTPUT_DIR and BRANCHGRPO_THREADS when set.
void apply_env_overrides(RunConfig& config);

/// Reads one `section.key = value` assignment (as passed with --set).
void set_config_value(RunConfig& config, const std::string& assignment);

/// "dense", "mixed", "sparse" or an explicit list such as "(0,5,10,15)".
std::vector<int> parse_split_steps(const std::string& value);
std::string format_split_steps(const std::vector<int>& steps);

}  // namespace branchgrpo

#endif
