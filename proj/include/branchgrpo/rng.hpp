#ifndef BRANCHGRPO_RNG_HPP
#define BRANCHGRPO_RNG_HPP

#include <cstdint>
#include <span>

namespace branchgrpo {

/// Independent random streams drawn from one run seed.
enum class Stream : std::uint64_t {
  kRoot = 1,        // initial noise z_0 of a prompt
  kBranch = 2,      // per-node transition noise inside a rollout tree
  kSequential = 3,  // per-chain transition noise of the sequential baseline
  kTimestep = 4,    // timestep subsampling of the baseline
  kPretrain = 5,
  kInit = 6,
  kEval = 7,
  kMetric = 8,
};

/// Counter-based key: every draw is a pure function of
/// (run_seed, stream, prompt, depth, breadth, lane, counter), so rollouts
/// reproduce regardless of evaluation order.
struct NoiseKey {
  std::uint64_t run_seed = 0;
  Stream stream = Stream::kBranch;
  std::uint64_t prompt = 0;
  std::uint64_t depth = 0;
  std::uint64_t breadth = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

class NoiseStream {
 public:
  explicit NoiseStream(const NoiseKey& key, std::uint64_t lane = 0) noexcept;

  /// Raw 64 random bits.
  std::uint64_t next_u64() noexcept;
  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;
  /// Standard normal (Box-Muller).
  double normal() noexcept;
  void fill_normal(std::span<double> out) noexcept;

 private:
  std::uint64_t base_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace branchgrpo

#endif
