#ifndef BRANCHGRPO_IO_HPP
#define BRANCHGRPO_IO_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "branchgrpo/config.hpp"
#include "branchgrpo/policy.hpp"
#include "branchgrpo/trainer.hpp"

namespace branchgrpo {

/// Writes to a sibling temporary file and renames it into place.
/// Throws IoError naming the path.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

struct Checkpoint {
  PolicyParams params;
  std::uint64_t seed = 0;
  int iteration = 0;
};

/// "BGCK", u32 header length, JSON header {shape, seed, iteration, count,
/// ema_decay}, then `count` doubles of weights followed by `count` of EMA.
void write_checkpoint(const std::filesystem::path& path, const PolicyParams& params, std::uint64_t seed,
                      int iteration);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct RunManifest {
  std::string run_id;
  std::string version;
  std::uint64_t seed = 0;
  std::string mode;
  std::string config_text;  ///< resolved config, verbatim
  std::string started_at;
  std::string finished_at;
  std::string status = "running";
  std::vector<std::string> checkpoints;
  std::vector<std::string> metric_files;
  nlohmann::json dynamics;  ///< grid and step modes
};

nlohmann::json manifest_to_json(const RunManifest& manifest);
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);
RunManifest make_manifest(const RunConfig& config);
/// UTC ISO-8601 timestamp.
std::string utc_timestamp();
std::string version_string();

/// Header plus one row per iteration.
std::string runlog_csv(const RunLog& log);

struct RunSummary {
  double final_reward = 0.0;
  double peak_reward = 0.0;
  std::optional<int> iterations_to_threshold;  ///< first iteration with reward_mean >= threshold
  std::uint64_t total_nfe_old = 0;
  std::uint64_t total_nfe_new = 0;
};

RunSummary summarize(const RunLog& log, double threshold);
nlohmann::json summary_to_json(const RunSummary& summary);

struct CurveFiles {
  std::filesystem::path csv;
  std::filesystem::path summary;
};

/// <dir>/<stem>.csv and <dir>/<stem>_summary.json
CurveFiles emit_curves(const RunLog& log, const std::filesystem::path& dir, const std::string& stem,
                       double threshold);

enum class SweepAxis { kCorrelation, kBranchFactor, kSplitSteps, kFusionBeta, kPruning };

SweepAxis sweep_axis_from_string(const std::string& name);
const char* to_string(SweepAxis axis);

/// Applies one axis value to a copy of `base`. Pruning values: none,
/// parent_top1, extreme_b[:b], depth, or width+depth (e.g. parent_top1+depth).
RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, const std::string& value);

struct SweepRun {
  std::string label;
  bool ok = false;
  std::string error;
  std::size_t leaf_count = 0;
  RunLog log;
  RunSummary summary;
};

struct SweepReport {
  SweepAxis axis = SweepAxis::kCorrelation;
  std::vector<SweepRun> runs;
};

/// Child runs from the same initial policy and seed. A failing child is
/// recorded and the sweep continues. `threads` > 1 runs children
/// concurrently; each child stays single-threaded and deterministic.
SweepReport sweep(const RunConfig& base, SweepAxis axis, const std::vector<std::string>& values,
                  const PolicyParams& init, int threads = 1);

/// comparison.csv (iteration, one reward column per run) and
/// sweep_summary.csv (one row per run).
void write_sweep(const SweepReport& report, const std::filesystem::path& dir);

}  // namespace branchgrpo

#endif
