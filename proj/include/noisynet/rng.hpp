#pragma once

// Counter-based random streams.
//
// Generator: Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy
// as 1, 2, 3", SC 2011). The 64-bit seed is the key; the 128-bit counter is
// (counter_lo, counter_hi, stream_lo, stream_hi). Every block is a pure
// function of (seed, stream_id, counter), so streams with distinct ids can
// never overlap and any position can be replayed.
//
// Normal sampling: Box-Muller on two 32-bit uniforms, evaluated in double.
// One block yields four normals. Both choices are frozen for results-format
// version 1.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

#include "noisynet/errors.hpp"
#include "noisynet/tensor.hpp"

namespace noisynet {

using PhiloxBlock = std::array<std::uint32_t, 4>;

inline PhiloxBlock philox4x32_10(PhiloxBlock ctr, std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
  }
  return ctr;
}

/// A position in one Philox stream. Copying a stream forks an identical replay.
struct RngStream {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::uint64_t counter = 0;

  RngStream() = default;
  RngStream(std::uint64_t seed_, std::uint64_t stream_id_, std::uint64_t counter_ = 0)
      : seed(seed_), stream_id(stream_id_), counter(counter_) {}

  PhiloxBlock block_at(std::uint64_t index) const {
    return philox4x32_10({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                          static_cast<std::uint32_t>(stream_id),
                          static_cast<std::uint32_t>(stream_id >> 32)},
                         {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  }

  PhiloxBlock next_block() { return block_at(counter++); }

  std::uint64_t next_u64() {
    const PhiloxBlock b = next_block();
    return (std::uint64_t{b[0]} << 32) | b[1];
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound) by rejection (no modulo bias).
  std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    for (;;) {
      const std::uint64_t x = next_u64();
      if (x < limit) return x % bound;
    }
  }

  friend bool operator==(const RngStream&, const RngStream&) = default;
};

/// Fills `out` with N(mean, stddev^2) samples; consumes ceil(n/4) blocks.
template <class T>
void fill_gaussian(RngStream& rng, std::span<T> out, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw ConfigError("gaussian: standard deviation must be >= 0");
  if (stddev == 0.0) {
    for (T& v : out) v = static_cast<T>(mean);
    return;
  }
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::size_t i = 0;
  while (i < out.size()) {
    const PhiloxBlock b = rng.next_block();
    for (int pair = 0; pair < 2 && i < out.size(); ++pair) {
      const double u1 = (static_cast<double>(b[2 * pair]) + 1.0) * 0x1.0p-32;  // (0, 1]
      const double u2 = static_cast<double>(b[2 * pair + 1]) * 0x1.0p-32;      // [0, 1)
      const double r = std::sqrt(-2.0 * std::log(u1));
      const double theta = kTwoPi * u2;
      out[i++] = static_cast<T>(mean + stddev * r * std::cos(theta));
      if (i < out.size()) out[i++] = static_cast<T>(mean + stddev * r * std::sin(theta));
    }
  }
}

template <class T = float>
Tensor<T> gaussian(RngStream& rng, Shape shape, double mean, double stddev) {
  if (!(stddev >= 0.0)) throw ConfigError("gaussian: standard deviation must be >= 0");
  Tensor<T> out(std::move(shape));
  fill_gaussian(rng, out.data(), mean, stddev);
  return out;
}

/// SplitMix64 finalizer; used to derive seeds, never as a stream generator.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace noisynet
