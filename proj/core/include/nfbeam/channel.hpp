// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_CHANNEL_HPP
#define NFBEAM_CHANNEL_HPP

#include <optional>
#include <vector>

#include "nfbeam/rng.hpp"
#include "nfbeam/sysgeo.hpp"

namespace nfbeam {

enum class PathKind { kLineOfSight = 0, kSingleBounce = 1 };

/// One propagation path resolved against the full array. Per-antenna lengths
/// carry the exact spherical-wavefront geometry; `gain` is the common complex
/// amplitude (free-space loss at the array reference, times the reflection
/// coefficient for bounce paths).
struct PathComponent {
  PathKind kind = PathKind::kLineOfSight;
  Eigen::VectorXd per_antenna_length;  ///< meters, one entry per element
  Complex gain{0.0, 0.0};
  std::optional<Vec3> bounce_point;  ///< specular point for the array center
};

/// Frozen channel for one time slot.
struct ChannelSnapshot {
  Eigen::VectorXcd h;                 ///< per-element response
  std::vector<PathComponent> paths;   ///< components that formed `h`
  bool los_blocked = false;           ///< a blocker cut the direct path
  bool outage() const { return paths.empty(); }
};

/// Resolves the direct path plus one single-bounce path per visible reflector.
/// A path survives only if its segments clear every blocker box; bounce paths
/// additionally require the specular point (for the array reference) to land
/// on the facet. Throws InvalidArgument if `uav` coincides with the array.
std::vector<PathComponent> trace_paths(const SceneConfig& scene,
                                       const Vec3& uav,
                                       const ArrayGeometry& geom,
                                       const SystemConfig& cfg);

/// Sums path phasors element-wise: h_m = sum_l gain_l * exp(-j 2 pi d_lm / lambda).
/// An empty path list yields an all-zero response (outage).
ChannelSnapshot synthesize_channel(std::vector<PathComponent> paths,
                                   const SystemConfig& cfg);

/// Noiseless combiner output sqrt(P) * w^H h for a unit-norm codeword.
Complex pilot_signal(const Eigen::VectorXcd& w, const ChannelSnapshot& snap,
                     const SystemConfig& cfg);

/// One pilot measurement: sqrt(P) * w^H h + w^H n with n ~ CN(0, sigma^2 I).
/// Since codewords have unit norm the combined noise is CN(0, sigma^2), so a
/// single draw from `noise` is statistically exact and keeps sweeps cheap.
Complex received_pilot(const Eigen::VectorXcd& w, const ChannelSnapshot& snap,
                       const SystemConfig& cfg, RandomStream& noise);

}  // namespace nfbeam

#endif  // NFBEAM_CHANNEL_HPP
