#include "branchgrpo/io.hpp"

#include <charconv>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include "branchgrpo/dynamics.hpp"
#include "branchgrpo/errors.hpp"

#ifndef BRANCHGRPO_VERSION
#define BRANCHGRPO_VERSION "0.1.0"
#endif

namespace branchgrpo {

namespace {

constexpr char kMagic[4] = {'B', 'G', 'C', 'K'};

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_checkpoint(const std::filesystem::path& path, const PolicyParams& params, std::uint64_t seed,
                      int iteration) {
  const nlohmann::json header = {
      {"shape",
       {{"input", params.shape.input},
        {"hidden1", params.shape.hidden1},
        {"hidden2", params.shape.hidden2},
        {"output", params.shape.output}}},
      {"seed", seed},
      {"iteration", iteration},
      {"count", params.values.size()},
      {"ema_decay", params.ema_decay}};
  const std::string text = header.dump();
  std::string blob(kMagic, sizeof(kMagic));
  const auto len = static_cast<std::uint32_t>(text.size());
  blob.append(reinterpret_cast<const char*>(&len), sizeof(len));
  blob += text;
  const auto append = [&](const std::vector<double>& v) {
    blob.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  };
  append(params.values);
  append(params.ema.size() == params.values.size() ? params.ema : params.values);
  write_file_atomic(path, blob);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string blob = read_file(path);
  const auto fail = [&](const std::string& why) { return IoError("corrupt checkpoint " + path.string() + ": " + why); };
  if (blob.size() < 8 || std::memcmp(blob.data(), kMagic, 4) != 0) throw fail("bad magic");
  std::uint32_t len = 0;
  std::memcpy(&len, blob.data() + 4, sizeof(len));
  if (blob.size() < 8 + static_cast<std::size_t>(len)) throw fail("truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(8, len));
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  Checkpoint out;
  try {
    const auto& s = header.at("shape");
    const MlpShape shape{s.at("input").get<int>(), s.at("hidden1").get<int>(), s.at("hidden2").get<int>(),
                         s.at("output").get<int>()};
    const auto count = header.at("count").get<std::size_t>();
    if (count != shape.param_count()) throw fail("parameter count does not match shape");
    if (blob.size() != 8 + static_cast<std::size_t>(len) + 2 * count * sizeof(double)) throw fail("payload size");
    out.params = PolicyParams::zeros(shape);
    out.params.ema_decay = header.value("ema_decay", 0.995);
    const char* payload = blob.data() + 8 + len;
    std::memcpy(out.params.values.data(), payload, count * sizeof(double));
    std::memcpy(out.params.ema.data(), payload + count * sizeof(double), count * sizeof(double));
    out.seed = header.at("seed").get<std::uint64_t>();
    out.iteration = header.at("iteration").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string version_string() { return BRANCHGRPO_VERSION; }

RunManifest make_manifest(const RunConfig& config) {
  RunManifest m;
  m.run_id = run_id(config);
  m.version = version_string();
  m.seed = config.trainer.seed;
  m.mode = to_string(config.mode);
  m.config_text = emit_config(config);
  m.started_at = utc_timestamp();
  if (config.mode == TrainMode::kSequential) {
    m.dynamics = dynamics_to_json(sequential_dynamics(config.trainer));
  } else {
    m.dynamics = dynamics_to_json(branch_dynamics(config.trainer, config.mode, 0));
    if (config.mode == TrainMode::kHybrid) m.dynamics["step_modes_vary_with_iteration"] = true;
  }
  return m;
}

nlohmann::json manifest_to_json(const RunManifest& m) {
  return {{"run_id", m.run_id},       {"version", m.version},         {"seed", m.seed},
          {"mode", m.mode},           {"config", m.config_text},      {"started_at", m.started_at},
          {"finished_at", m.finished_at}, {"status", m.status},       {"checkpoints", m.checkpoints},
          {"metric_files", m.metric_files}, {"dynamics", m.dynamics}};
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  write_file_atomic(path, manifest_to_json(manifest).dump(2) + "\n");
}

std::string runlog_csv(const RunLog& log) {
  std::string out = "iteration,reward_mean,reward_std,objective,grad_norm,nfe_old,nfe_new,wall_ms\n";
  for (const auto& r : log.records) {
    out += std::to_string(r.iteration) + "," + fmt(r.reward_mean) + "," + fmt(r.reward_std) + "," +
           fmt(r.objective) + "," + fmt(r.grad_norm) + "," + std::to_string(r.nfe_old) + "," +
           std::to_string(r.nfe_new) + "," + fmt(r.wall_ms) + "\n";
  }
  return out;
}

RunSummary summarize(const RunLog& log, double threshold) {
  RunSummary s;
  s.total_nfe_old = log.total_nfe_old();
  s.total_nfe_new = log.total_nfe_new();
  if (log.records.empty()) {
    s.final_reward = s.peak_reward = log.initial_reward;
    return s;
  }
  s.final_reward = log.records.back().reward_mean;
  s.peak_reward = log.records.front().reward_mean;
  for (const auto& r : log.records) {
    s.peak_reward = std::max(s.peak_reward, r.reward_mean);
    if (!s.iterations_to_threshold && r.reward_mean >= threshold) s.iterations_to_threshold = r.iteration;
  }
  return s;
}

nlohmann::json summary_to_json(const RunSummary& s) {
  nlohmann::json j = {{"final_reward", s.final_reward},
                      {"peak_reward", s.peak_reward},
                      {"iterations_to_threshold", nullptr},
                      {"total_nfe_old", s.total_nfe_old},
                      {"total_nfe_new", s.total_nfe_new}};
  if (s.iterations_to_threshold) j["iterations_to_threshold"] = *s.iterations_to_threshold;
  return j;
}

CurveFiles emit_curves(const RunLog& log, const std::filesystem::path& dir, const std::string& stem,
                       double threshold) {
  CurveFiles files{dir / (stem + ".csv"), dir / (stem + "_summary.json")};
  write_file_atomic(files.csv, runlog_csv(log));
  write_file_atomic(files.summary, summary_to_json(summarize(log, threshold)).dump(2) + "\n");
  return files;
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "s" || name == "correlation") return SweepAxis::kCorrelation;
  if (name == "K" || name == "branch_factor") return SweepAxis::kBranchFactor;
  if (name == "split_steps") return SweepAxis::kSplitSteps;
  if (name == "fusion_beta" || name == "beta") return SweepAxis::kFusionBeta;
  if (name == "pruning") return SweepAxis::kPruning;
  throw ConfigError("axis", "unknown sweep axis '" + name + "'");
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kCorrelation:
      return "s";
    case SweepAxis::kBranchFactor:
      return "K";
    case SweepAxis::kSplitSteps:
      return "split_steps";
    case SweepAxis::kFusionBeta:
      return "fusion_beta";
    case SweepAxis::kPruning:
      return "pruning";
  }
  return "s";
}

RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, const std::string& value) {
  RunConfig c = base;
  switch (axis) {
    case SweepAxis::kCorrelation:
      set_config_value(c, "schedule.correlation=" + value);
      break;
    case SweepAxis::kBranchFactor:
      set_config_value(c, "schedule.branch_factor=" + value);
      break;
    case SweepAxis::kSplitSteps:
      set_config_value(c, "schedule.split_steps=" + value);
      break;
    case SweepAxis::kFusionBeta:
      set_config_value(c, "fusion.beta=" + value);
      break;
    case SweepAxis::kPruning: {
      std::string width = value;
      bool depth = false;
      if (const auto plus = value.find('+'); plus != std::string::npos) {
        if (value.substr(plus + 1) != "depth") throw ConfigError("pruning", "unknown pruning value '" + value + "'");
        width = value.substr(0, plus);
        depth = true;
      }
      if (width == "depth") {
        width = "none";
        depth = true;
      }
      if (const auto colon = width.find(':'); colon != std::string::npos) {
        set_config_value(c, "pruning.extreme_b=" + width.substr(colon + 1));
        width = width.substr(0, colon);
      }
      set_config_value(c, "pruning.width_mode=" + width);
      c.trainer.pruning.depth_window.enabled = depth;
      break;
    }
  }
  c.validate();
  return c;
}

SweepReport sweep(const RunConfig& base, SweepAxis axis, const std::vector<std::string>& values,
                  const PolicyParams& init, int threads) {
  SweepReport report;
  report.axis = axis;
  report.runs.resize(values.size());
  auto run_one = [&](std::size_t i) {
    SweepRun& run = report.runs[i];
    run.label = std::string(to_string(axis)) + "=" + values[i];
    try {
      RunConfig child = apply_sweep_value(base, axis, values[i]);
      child.trainer.threads = 1;
      child.trainer.on_checkpoint = nullptr;
      run.leaf_count = child.mode == TrainMode::kSequential
                           ? static_cast<std::size_t>(child.trainer.grpo.num_generations)
                           : child.trainer.schedule.leaf_count();
      PolicyParams policy = init;
      policy.ema_decay = child.ema_decay;
      run.log = train(child.trainer, policy, child.mode);
      run.summary = summarize(run.log, child.reward_threshold);
      run.ok = true;
    } catch (const std::exception& e) {
      run.ok = false;
      run.error = e.what();
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1) {
    for (std::size_t i = 0; i < values.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < values.size(); i += workers) run_one(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  return report;
}

void write_sweep(const SweepReport& report, const std::filesystem::path& dir) {
  std::string comparison = "iteration";
  std::size_t rows = 0;
  for (const auto& run : report.runs) {
    comparison += "," + run.label;
    rows = std::max(rows, run.log.records.size());
  }
  comparison += "\n";
  for (std::size_t r = 0; r < rows; ++r) {
    comparison += std::to_string(r);
    for (const auto& run : report.runs) {
      comparison += ",";
      if (r < run.log.records.size()) comparison += fmt(run.log.records[r].reward_mean);
    }
    comparison += "\n";
  }
  std::string summary =
      "label,status,leaf_count,final_reward,peak_reward,iterations_to_threshold,total_nfe_old,total_nfe_new,error\n";
  for (const auto& run : report.runs) {
    std::string error = run.error;
    for (char& ch : error) {
      if (ch == ',' || ch == '\n') ch = ' ';
    }
    summary += run.label + "," + (run.ok ? "ok" : "failed") + "," + std::to_string(run.leaf_count) + "," +
               (run.ok ? fmt(run.summary.final_reward) : "") + "," + (run.ok ? fmt(run.summary.peak_reward) : "") +
               "," +
               (run.ok && run.summary.iterations_to_threshold ? std::to_string(*run.summary.iterations_to_threshold)
                                                              : "") +
               "," + (run.ok ? std::to_string(run.summary.total_nfe_old) : "") + "," +
               (run.ok ? std::to_string(run.summary.total_nfe_new) : "") + "," + error + "\n";
  }
  write_file_atomic(dir / "comparison.csv", comparison);
  write_file_atomic(dir / "sweep_summary.csv", summary);
}

}  // namespace branchgrpo
