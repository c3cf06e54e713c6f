// SPDX-License-Identifier: Apache-2.0
#include "nfbeam/sysgeo.hpp"

#include <algorithm>
#include <cmath>

#include "json_util.hpp"
#include "nfbeam/rng.hpp"

namespace nfbeam {

double SystemConfig::aperture_m() const {
  const double d = element_spacing_m();
  const double w = (antenna_cols - 1) * d;
  const double h = (antenna_rows - 1) * d;
  return std::sqrt(w * w + h * h);
}

void SystemConfig::validate() const {
  if (carrier_frequency_hz <= 0)
    throw InvalidArgument("SystemConfig: carrier frequency must be positive");
  if (antenna_rows < 1 || antenna_cols < 1)
    throw InvalidArgument("SystemConfig: antenna counts must be >= 1");
  if (element_spacing_wavelengths <= 0)
    throw InvalidArgument("SystemConfig: element spacing must be positive");
  if (tx_power_watts <= 0)
    throw InvalidArgument("SystemConfig: tx power must be positive");
  if (noise_variance <= 0)
    throw InvalidArgument("SystemConfig: noise variance must be positive");
}

ArrayGeometry antenna_positions(const SystemConfig& cfg) {
  cfg.validate();
  const int my = cfg.antenna_cols;  // horizontal (y)
  const int mz = cfg.antenna_rows;  // vertical (z)
  const double d = cfg.element_spacing_m();
  ArrayGeometry geom;
  geom.positions.resize(3, static_cast<Eigen::Index>(my) * mz);
  for (int cy = 0; cy < my; ++cy) {
    const double y = (cy - (my - 1) / 2.0) * d;
    for (int rz = 0; rz < mz; ++rz) {
      // Row index grows downward: element row 0 sits at the panel top.
      const double z = ((mz - 1) / 2.0 - rz) * d;
      geom.positions.col(static_cast<Eigen::Index>(cy) * mz + rz) =
          cfg.array_center + Vec3(0.0, y, z);
    }
  }
  return geom;
}

Vec3 Facet::normal() const {
  const Vec3 n = (corners[1] - corners[0]).cross(corners[3] - corners[0]);
  const double len = n.norm();
  if (len <= 0) throw InvalidArgument("Facet: degenerate corner layout");
  return n / len;
}

Vec3 Facet::centroid() const {
  return 0.25 * (corners[0] + corners[1] + corners[2] + corners[3]);
}

double Facet::area() const {
  const Vec3 a = corners[1] - corners[0];
  const Vec3 b = corners[2] - corners[0];
  const Vec3 c = corners[3] - corners[0];
  return 0.5 * (a.cross(b).norm() + b.cross(c).norm());
}

bool Facet::contains_on_plane(const Vec3& p, double tol) const {
  // Convex-polygon test: p must be on the same side of every directed edge.
  const Vec3 n = normal();
  double sign = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec3& a = corners[static_cast<std::size_t>(i)];
    const Vec3& b = corners[static_cast<std::size_t>((i + 1) % 4)];
    const double s = (b - a).cross(p - a).dot(n);
    if (std::abs(s) <= tol) continue;  // on an edge counts as inside
    if (sign == 0.0) {
      sign = s;
    } else if (s * sign < 0.0) {
      return false;
    }
  }
  return true;
}

void Facet::validate() const {
  const Vec3 n = normal();
  const double scale = std::max(1.0, (corners[2] - corners[0]).norm());
  if (std::abs((corners[2] - corners[0]).dot(n)) > 1e-6 * scale)
    throw InvalidArgument("Facet: corners are not coplanar");
  const double mag = std::abs(reflection);
  if (mag <= 0.0 || mag > 1.0)
    throw InvalidArgument("Facet: |reflection| must lie in (0, 1]");
}

void BlockerBox::validate() const {
  if (!(min.array() < max.array()).all())
    throw InvalidArgument("BlockerBox: min must be strictly below max");
}

bool segment_intersects_box(const Vec3& a, const Vec3& b,
                            const BlockerBox& box) {
  // Slab clipping of the parametric segment a + t (b - a), t in [0, 1].
  double t0 = 0.0, t1 = 1.0;
  const Vec3 d = b - a;
  for (int ax = 0; ax < 3; ++ax) {
    if (std::abs(d[ax]) < 1e-15) {
      if (a[ax] < box.min[ax] || a[ax] > box.max[ax]) return false;
      continue;
    }
    double ta = (box.min[ax] - a[ax]) / d[ax];
    double tb = (box.max[ax] - a[ax]) / d[ax];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 >= t1) return false;
  }
  return true;
}

void SceneConfig::validate() const {
  for (const auto& f : reflectors) f.validate();
  for (const auto& b : blockers) b.validate();
  if (!(bounds.min.array() < bounds.max.array()).all())
    throw InvalidArgument("SceneConfig: bounds min must be below max");
}

SceneConfig make_scene(std::uint64_t seed, int scene_id, const Bounds& bounds) {
  RandomStream rs(seed, StreamKind::kScene, static_cast<std::uint64_t>(scene_id));
  SceneConfig scene;
  scene.scene_id = scene_id;
  scene.bounds = bounds;

  const int n_walls = 1 + static_cast<int>(rs.uniform_index(2));
  int first_side = rs.uniform() < 0.5 ? 1 : -1;
  for (int w = 0; w < n_walls; ++w) {
    const int side = (w == 0) ? first_side : -first_side;
    const double y = side * (bounds.max.y() + 0.5 + rs.uniform());
    const double x0 = bounds.min.x() - 1.0;
    const double x1 = bounds.max.x() + 1.0;
    const double z0 = bounds.min.z() - 0.5;
    const double z1 = bounds.max.z() + 0.5;
    Facet f;
    if (side > 0) {
      f.corners = {Vec3(x0, y, z0), Vec3(x1, y, z0), Vec3(x1, y, z1),
                   Vec3(x0, y, z1)};
    } else {
      // Reversed winding keeps the normal pointing into the service area.
      f.corners = {Vec3(x0, y, z1), Vec3(x1, y, z1), Vec3(x1, y, z0),
                   Vec3(x0, y, z0)};
    }
    const double mag = 0.5 + 0.4 * rs.uniform();
    const double phase = rs.uniform(0.0, 2.0 * kPi);
    f.reflection = std::polar(mag, phase);
    scene.reflectors.push_back(f);
  }

  const int n_blockers = static_cast<int>(rs.uniform_index(3));
  for (int b = 0; b < n_blockers; ++b) {
    const Vec3 center(rs.uniform(4.5, 8.0), rs.uniform(-3.5, 3.5),
                      rs.uniform(-1.0, 1.0));
    const Vec3 half(rs.uniform(0.15, 0.5), rs.uniform(0.15, 0.5),
                    rs.uniform(0.15, 0.5));
    scene.blockers.push_back(BlockerBox{center - half, center + half});
  }
  scene.validate();
  return scene;
}

const char* trajectory_mode_name(TrajectoryMode mode) {
  switch (mode) {
    case TrajectoryMode::kStraight: return "straight";
    case TrajectoryMode::kZigzag: return "zigzag";
    case TrajectoryMode::kStreetPatrol: return "street_patrol";
    case TrajectoryMode::kHover: return "hover";
    case TrajectoryMode::kArcTurn: return "arc_turn";
  }
  throw InvalidArgument("trajectory_mode_name: unknown mode");
}

ModeParams ModeParams::defaults(TrajectoryMode mode) {
  ModeParams p;
  switch (mode) {
    case TrajectoryMode::kStraight: p.speed_mps = 5.0; break;
    case TrajectoryMode::kZigzag: p.speed_mps = 4.0; p.leg_length_m = 2.0; break;
    case TrajectoryMode::kStreetPatrol:
      p.speed_mps = 3.0;
      p.leg_length_m = 5.0;
      break;
    case TrajectoryMode::kHover: p.speed_mps = 0.0; break;
    case TrajectoryMode::kArcTurn: p.speed_mps = 3.0; p.arc_radius_m = 5.0; break;
  }
  return p;
}

std::vector<Vec3> generate_trajectory(TrajectoryMode mode,
                                      const ModeParams& params,
                                      const Vec3& start, int n_slots,
                                      double dt, std::uint64_t seed,
                                      const Bounds& bounds) {
  if (n_slots < 1) throw InvalidArgument("generate_trajectory: n_slots >= 1");
  if (dt <= 0) throw InvalidArgument("generate_trajectory: dt must be positive");
  if (params.speed_mps < 0)
    throw InvalidArgument("generate_trajectory: speed must be non-negative");
  if (!bounds.contains(start))
    throw InvalidArgument("generate_trajectory: start lies outside bounds");

  RandomStream rs(seed, StreamKind::kTrajectory);
  double heading =
      params.heading_rad ? *params.heading_rad : rs.uniform(0.0, 2.0 * kPi);
  const double arc_sign = rs.uniform() < 0.5 ? 1.0 : -1.0;
  const int leg_slots = std::max(
      1, static_cast<int>(std::lround(
             params.leg_length_m / std::max(params.speed_mps * dt, 1e-9))));

  std::vector<Vec3> out;
  out.reserve(static_cast<std::size_t>(n_slots));
  out.push_back(start);
  int zig_phase = 0;
  for (int t = 1; t < n_slots; ++t) {
    double step_heading = heading;
    switch (mode) {
      case TrajectoryMode::kStraight:
      case TrajectoryMode::kHover:
        break;
      case TrajectoryMode::kZigzag:
        if (t > 1 && (t - 1) % leg_slots == 0) zig_phase ^= 1;
        step_heading = heading + (zig_phase == 0 ? kPi / 4.0 : -kPi / 4.0);
        break;
      case TrajectoryMode::kStreetPatrol:
        if (t > 1 && (t - 1) % leg_slots == 0)
          heading += (rs.uniform() < 0.5 ? 1.0 : -1.0) * kPi / 2.0;
        step_heading = heading;
        break;
      case TrajectoryMode::kArcTurn:
        heading += arc_sign * (params.speed_mps / params.arc_radius_m) * dt;
        step_heading = heading;
        break;
    }
    const double v = mode == TrajectoryMode::kHover ? 0.0 : params.speed_mps;
    const Vec3 step(v * dt * std::cos(step_heading),
                    v * dt * std::sin(step_heading), 0.0);
    out.push_back(bounds.clamp(out.back() + step));
  }
  return out;
}

std::vector<Vec3> apply_gps_noise(const std::vector<Vec3>& positions,
                                  const GpsNoiseModel& model,
                                  std::uint64_t seed,
                                  std::uint64_t stream_sub) {
  if (model.sigma_m < 0)
    throw InvalidArgument("apply_gps_noise: sigma must be non-negative");
  RandomStream rs(seed, StreamKind::kGpsNoise, stream_sub);
  std::vector<Vec3> out;
  out.reserve(positions.size());
  for (const Vec3& p : positions) {
    Vec3 n(rs.normal(), rs.normal(), rs.normal());
    out.push_back(p + model.sigma_m * n);
  }
  return out;
}

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3)
    throw IoError("expected a 3-element array for a vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

std::string scene_to_json(const SceneConfig& scene) {
  json j;
  j["scene_id"] = scene.scene_id;
  j["bounds"] = {{"min", vec3_to_json(scene.bounds.min)},
                 {"max", vec3_to_json(scene.bounds.max)}};
  j["reflectors"] = json::array();
  for (const auto& f : scene.reflectors) {
    json corners = json::array();
    for (const auto& c : f.corners) corners.push_back(vec3_to_json(c));
    j["reflectors"].push_back(
        {{"corners", corners},
         {"reflection", json::array({f.reflection.real(), f.reflection.imag()})}});
  }
  j["blockers"] = json::array();
  for (const auto& b : scene.blockers)
    j["blockers"].push_back(
        {{"min", vec3_to_json(b.min)}, {"max", vec3_to_json(b.max)}});
  return j.dump(2);
}

SceneConfig scene_from_json(const std::string& json_text) {
  const json j = parse_json(json_text, "scene");
  SceneConfig scene;
  scene.scene_id = j.at("scene_id").get<int>();
  scene.bounds.min = vec3_from_json(j.at("bounds").at("min"));
  scene.bounds.max = vec3_from_json(j.at("bounds").at("max"));
  for (const auto& jf : j.at("reflectors")) {
    Facet f;
    const auto& corners = jf.at("corners");
    if (corners.size() != 4) throw IoError("facet must have 4 corners");
    for (std::size_t i = 0; i < 4; ++i)
      f.corners[i] = vec3_from_json(corners[i]);
    f.reflection = Complex(jf.at("reflection")[0].get<double>(),
                           jf.at("reflection")[1].get<double>());
    scene.reflectors.push_back(f);
  }
  for (const auto& jb : j.at("blockers"))
    scene.blockers.push_back(
        BlockerBox{vec3_from_json(jb.at("min")), vec3_from_json(jb.at("max"))});
  scene.validate();
  return scene;
}

std::string system_config_to_json(const SystemConfig& cfg) {
  json j;
  j["carrier_frequency_hz"] = cfg.carrier_frequency_hz;
  j["antenna_rows"] = cfg.antenna_rows;
  j["antenna_cols"] = cfg.antenna_cols;
  j["element_spacing_wavelengths"] = cfg.element_spacing_wavelengths;
  j["tx_power_watts"] = cfg.tx_power_watts;
  j["noise_variance"] = cfg.noise_variance;
  j["array_center"] = vec3_to_json(cfg.array_center);
  return j.dump(2);
}

SystemConfig system_config_from_json(const std::string& json_text) {
  const json j = parse_json(json_text, "system config");
  SystemConfig cfg;
  cfg.carrier_frequency_hz =
      j.value("carrier_frequency_hz", cfg.carrier_frequency_hz);
  cfg.antenna_rows = j.value("antenna_rows", cfg.antenna_rows);
  cfg.antenna_cols = j.value("antenna_cols", cfg.antenna_cols);
  cfg.element_spacing_wavelengths =
      j.value("element_spacing_wavelengths", cfg.element_spacing_wavelengths);
  cfg.tx_power_watts = j.value("tx_power_watts", cfg.tx_power_watts);
  cfg.noise_variance = j.value("noise_variance", cfg.noise_variance);
  if (j.contains("array_center"))
    cfg.array_center = vec3_from_json(j.at("array_center"));
  cfg.validate();
  return cfg;
}

}  // namespace nfbeam
