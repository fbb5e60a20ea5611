#pragma once

#include <cstdint>
#include <random>

namespace gibbsdiag {

/// SplitMix64 finalizer; used to derive decorrelated child seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Random source owned by exactly one chain (or one worker). Copying an Rng
/// copies its full state, so two copies produce identical draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Child stream for chain/worker `index`: seed XOR hash(index).
  Rng split(std::uint64_t index) const { return Rng(seed_ ^ mix_seed(index)); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return std::generate_canonical<double, 53>(engine_); }

  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }

  double exponential(double rate) {
    return std::exponential_distribution<double>(rate)(engine_);
  }

  double chi_squared(double dof) {
    return std::chi_squared_distribution<double>(dof)(engine_);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace gibbsdiag
