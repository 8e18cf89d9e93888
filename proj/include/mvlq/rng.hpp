/**
 * @file rng.hpp
 * @brief Counter-based Gaussian noise (Philox4x32-10 + Box-Muller).
 *
 * Every normal is a pure function of (seed, channel, path, step, index), so
 * any subset of increments can be regenerated without replaying a stream.
 */

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mvlq {

/// Noise channels keyed into the counter.
enum class NoiseChannel : std::uint32_t {
  kIdiosyncratic = 0,
  kCommon = 1,
  kInitial = 2,
  /// Draws of test inputs (random times, clouds, perturbations).
  kAuxiliary = 3,
};

class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block generate(Block ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;
};

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  /// Two independent standard normals for one counter block.
  std::array<double, 2> normal_pair(NoiseChannel channel, std::uint32_t path, std::uint32_t step,
                                    std::uint32_t block) const {
    const auto r = Philox4x32::generate({block, step, path, static_cast<std::uint32_t>(channel)}, key_);
    // u1 in (0, 1], u2 in [0, 1), 53 bits each.
    const double u1 = static_cast<double>((combine(r[0], r[1]) >> 11) + 1) * 0x1.0p-53;
    const double u2 = static_cast<double>(combine(r[2], r[3]) >> 11) * 0x1.0p-53;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  /// Uniform on [0, 1) for one counter block.
  double uniform(NoiseChannel channel, std::uint32_t path, std::uint32_t step, std::uint32_t block) const {
    const auto r = Philox4x32::generate({block, step, path, static_cast<std::uint32_t>(channel)}, key_);
    return static_cast<double>(combine(r[0], r[1]) >> 11) * 0x1.0p-53;
  }

  /// Element `index` of the normal sequence for (channel, path, step).
  double normal(NoiseChannel channel, std::uint32_t path, std::uint32_t step, std::uint64_t index) const {
    const auto pair = normal_pair(channel, path, step, static_cast<std::uint32_t>(index >> 1));
    return pair[index & 1u];
  }

 private:
  static std::uint64_t combine(std::uint32_t hi, std::uint32_t lo) {
    return (static_cast<std::uint64_t>(hi) << 32) | lo;
  }

  Philox4x32::Key key_;
};

/// Sequential draws on the auxiliary channel, for random test inputs.
class AuxStream {
 public:
  AuxStream(std::uint64_t seed, std::uint32_t stream) noexcept : rng_(seed), stream_(stream) {}

  double normal() { return rng_.normal(NoiseChannel::kAuxiliary, stream_, 0, normals_++); }
  double uniform() { return rng_.uniform(NoiseChannel::kAuxiliary, stream_, 1, uniforms_++); }
  /// Integer in [lo, hi].
  int integer(int lo, int hi) {
    return lo + static_cast<int>(uniform() * static_cast<double>(hi - lo + 1));
  }

 private:
  CounterRng rng_;
  std::uint32_t stream_;
  std::uint64_t normals_ = 0;
  std::uint32_t uniforms_ = 0;
};

}  // namespace mvlq
