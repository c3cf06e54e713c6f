// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_SYSGEO_HPP
#define NFBEAM_SYSGEO_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nfbeam/common.hpp"

namespace nfbeam {

/// Radio front-end and antenna panel parameters. The panel is a uniform
/// planar array in the y-z plane centered on `array_center`, broadside +x.
struct SystemConfig {
  double carrier_frequency_hz = 7.0e9;
  int antenna_rows = 16;  ///< vertical element count (z direction)
  int antenna_cols = 16;  ///< horizontal element count (y direction)
  double element_spacing_wavelengths = 0.5;
  double tx_power_watts = 1.0;
  double noise_variance = 1e-9;  ///< complex noise power at the combiner input
  Vec3 array_center = Vec3::Zero();

  double wavelength() const { return kSpeedOfLight / carrier_frequency_hz; }
  double element_spacing_m() const {
    return element_spacing_wavelengths * wavelength();
  }
  int num_elements() const { return antenna_rows * antenna_cols; }
  /// Largest panel dimension (diagonal), used for near-field range limits.
  double aperture_m() const;
  void validate() const;
};

/// Per-element positions, one column per antenna. Element (col c, row r)
/// maps to column index c * antenna_rows + r (columns vary slowest).
struct ArrayGeometry {
  Eigen::Matrix3Xd positions;
  int num_elements() const { return static_cast<int>(positions.cols()); }
};

ArrayGeometry antenna_positions(const SystemConfig& cfg);

/// Axis-aligned region the user terminal may occupy.
struct Bounds {
  Vec3 min = Vec3(3.0, -5.0, -2.0);
  Vec3 max = Vec3(9.4, 5.0, 2.0);
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  Vec3 clamp(const Vec3& p) const {
    return p.cwiseMax(min).cwiseMin(max);
  }
};

/// Planar rectangular reflecting surface. Corners must be coplanar and listed
/// in perimeter order; `reflection` is the complex amplitude coefficient with
/// 0 < |reflection| <= 1.
struct Facet {
  std::array<Vec3, 4> corners;
  Complex reflection{0.7, 0.0};

  Vec3 normal() const;    ///< unit normal (right-hand rule over corners)
  Vec3 centroid() const;
  double area() const;
  /// True when `p` lies on the facet plane region (p is assumed on-plane).
  bool contains_on_plane(const Vec3& p, double tol = 1e-9) const;
  void validate() const;
};

/// Axis-aligned opaque box that blocks any path segment passing through it.
struct BlockerBox {
  Vec3 min, max;
  void validate() const;
};

/// True if the open segment (a, b) passes through the box interior.
bool segment_intersects_box(const Vec3& a, const Vec3& b, const BlockerBox& box);

struct SceneConfig {
  int scene_id = 0;
  std::vector<Facet> reflectors;
  std::vector<BlockerBox> blockers;
  Bounds bounds;
  void validate() const;
};

/// Deterministically synthesizes a scene: 1-2 side-wall reflectors and 0-2
/// blocker boxes, all placed from (seed, scene_id) alone.
SceneConfig make_scene(std::uint64_t seed, int scene_id,
                       const Bounds& bounds = Bounds{});

std::string scene_to_json(const SceneConfig& scene);
SceneConfig scene_from_json(const std::string& json_text);

/// Motion archetypes for terminal trajectories. Ids are stable and are
/// serialized into datasets; never renumber.
enum class TrajectoryMode : int {
  kStraight = 0,     ///< constant velocity
  kZigzag = 1,       ///< alternating +-45 degree legs
  kStreetPatrol = 2, ///< straight legs with random 90 degree turns
  kHover = 3,        ///< stationary
  kArcTurn = 4,      ///< constant-speed circular arc
};

inline constexpr int kNumTrajectoryModes = 5;
const char* trajectory_mode_name(TrajectoryMode mode);

struct ModeParams {
  double speed_mps = 5.0;
  double leg_length_m = 2.0;   ///< zigzag / street-patrol leg before a turn
  double arc_radius_m = 5.0;   ///< arc-turn radius
  /// Initial heading in the x-y plane (radians). Unset => drawn from seed.
  std::optional<double> heading_rad;

  static ModeParams defaults(TrajectoryMode mode);
};

/// Generates `n_slots` positions sampled every `dt` seconds, starting at
/// `start` (slot 0). The path is clamped to `bounds`; `start` must lie inside.
std::vector<Vec3> generate_trajectory(TrajectoryMode mode,
                                      const ModeParams& params,
                                      const Vec3& start, int n_slots,
                                      double dt, std::uint64_t seed,
                                      const Bounds& bounds);

struct GpsNoiseModel {
  double sigma_m = 0.5;  ///< per-axis standard deviation
};

/// Adds i.i.d. Gaussian position error to every slot. Same length out as in.
std::vector<Vec3> apply_gps_noise(const std::vector<Vec3>& positions,
                                  const GpsNoiseModel& model,
                                  std::uint64_t seed, std::uint64_t stream_sub);

std::string system_config_to_json(const SystemConfig& cfg);
SystemConfig system_config_from_json(const std::string& json_text);

}  // namespace nfbeam

#endif  // NFBEAM_SYSGEO_HPP
