// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_RNG_HPP
#define NFBEAM_RNG_HPP

#include <array>
#include <complex>
#include <cstdint>

namespace nfbeam {

/// Stable stream kinds. A stream id is (kind << 32) | sub_id so that every
/// consumer of randomness owns a disjoint, order-independent substream of the
/// master seed. Adding consumers never perturbs existing streams.
enum class StreamKind : std::uint32_t {
  kTrajectory = 1,
  kGpsNoise = 2,
  kPilotNoise = 3,
  kSensor = 4,
  kParamInit = 5,
  kShuffle = 6,
  kEpisode = 7,
  kScene = 8,
};

inline std::uint64_t stream_id(StreamKind kind, std::uint64_t sub = 0) {
  return (static_cast<std::uint64_t>(kind) << 32) | (sub & 0xffffffffull);
}

/// Philox4x32-10 block function: 128 random bits from (seed, stream, index).
/// Counter-based, so any draw is addressable without sequencing state.
std::array<std::uint32_t, 4> philox4x32(std::uint64_t seed,
                                        std::uint64_t stream,
                                        std::uint64_t index);

/// Derives an independent child seed, e.g. one per dataset episode. Children
/// of distinct (kind, index) pairs never collide in practice and remain
/// stable when unrelated consumers are added.
std::uint64_t derive_seed(std::uint64_t seed, StreamKind kind,
                          std::uint64_t index);

/// Sequential view over one Philox stream. Cheap to construct; all state is
/// (seed, stream, block index, word cursor), so identical construction yields
/// an identical draw sequence on any platform.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream) {}

  RandomStream(std::uint64_t seed, StreamKind kind, std::uint64_t sub = 0)
      : RandomStream(seed, stream_id(kind, sub)) {}

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random mantissa bits.
  double uniform();
  /// Uniform in (0, 1]; safe as a log() argument.
  double uniform_pos();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n), unbiased via rejection. Requires n > 0.
  std::uint32_t uniform_index(std::uint32_t n);
  /// Standard normal via Box-Muller (second value of each pair is cached).
  double normal();
  double normal(double mean, double stddev);
  /// Circularly-symmetric complex normal with E|x|^2 = variance.
  std::complex<double> complex_normal(double variance);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int cursor_ = 4;  // empty
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace nfbeam

#endif  // NFBEAM_RNG_HPP
