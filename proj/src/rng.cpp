#include "branchgrpo/rng.hpp"

#include <cmath>
#include <numbers>

namespace branchgrpo {

std::uint64_t mix64(std::uint64_t x) noexcept {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

NoiseStream::NoiseStream(const NoiseKey& key, std::uint64_t lane) noexcept {
  std::uint64_t h = mix64(key.run_seed);
  h = mix64(h ^ static_cast<std::uint64_t>(key.stream));
  h = mix64(h ^ key.prompt);
  h = mix64(h ^ key.depth);
  h = mix64(h ^ key.breadth);
  base_ = mix64(h ^ lane);
}

std::uint64_t NoiseStream::next_u64() noexcept {
  return mix64(base_ + 0x632be59bd9b4e019ULL * ++counter_);
}

double NoiseStream::uniform() noexcept {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double NoiseStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double radius = std::sqrt(-2.0 * std::log(uniform()));
  const double angle = 2.0 * std::numbers::pi * uniform();
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

void NoiseStream::fill_normal(std::span<double> out) noexcept {
  for (auto& v : out) v = normal();
}

}  // namespace branchgrpo
