// SPDX-License-Identifier: Apache-2.0
#include "nfbeam/channel.hpp"

#include <cmath>

namespace nfbeam {

namespace {

bool segment_blocked(const Vec3& a, const Vec3& b, const SceneConfig& scene) {
  for (const auto& box : scene.blockers)
    if (segment_intersects_box(a, b, box)) return true;
  return false;
}

Eigen::VectorXd distances_to(const ArrayGeometry& geom, const Vec3& p) {
  return (geom.positions.colwise() - p).colwise().norm().transpose();
}

}  // namespace

std::vector<PathComponent> trace_paths(const SceneConfig& scene,
                                       const Vec3& uav,
                                       const ArrayGeometry& geom,
                                       const SystemConfig& cfg) {
  const Vec3 center = cfg.array_center;
  const double lambda = cfg.wavelength();
  const double range = (uav - center).norm();
  if (range < 1e-6)
    throw InvalidArgument("trace_paths: terminal coincides with the array");

  std::vector<PathComponent> paths;

  if (!segment_blocked(uav, center, scene)) {
    PathComponent los;
    los.kind = PathKind::kLineOfSight;
    los.per_antenna_length = distances_to(geom, uav);
    los.gain = Complex(lambda / (4.0 * kPi * range), 0.0);
    paths.push_back(std::move(los));
  }

  for (const auto& facet : scene.reflectors) {
    const Vec3 n = facet.normal();
    const Vec3& c0 = facet.corners[0];
    const double side_uav = (uav - c0).dot(n);
    const double side_bs = (center - c0).dot(n);
    // Specular reflection needs both endpoints on the same facet side.
    if (side_uav * side_bs <= 0) continue;

    const Vec3 mirror = uav - 2.0 * side_uav * n;  // image of the terminal
    const Vec3 dir = center - mirror;
    const double denom = dir.dot(n);
    if (std::abs(denom) < 1e-12) continue;
    const double t = (c0 - mirror).dot(n) / denom;
    if (t <= 0.0 || t >= 1.0) continue;
    const Vec3 spec = mirror + t * dir;
    if (!facet.contains_on_plane(spec, 1e-9)) continue;
    if (segment_blocked(uav, spec, scene) || segment_blocked(spec, center, scene))
      continue;

    PathComponent bounce;
    bounce.kind = PathKind::kSingleBounce;
    // The image point preserves each element's exact reflected path length.
    bounce.per_antenna_length = distances_to(geom, mirror);
    const double total = (mirror - center).norm();
    bounce.gain = facet.reflection * (lambda / (4.0 * kPi * total));
    bounce.bounce_point = spec;
    paths.push_back(std::move(bounce));
  }
  return paths;
}

ChannelSnapshot synthesize_channel(std::vector<PathComponent> paths,
                                   const SystemConfig& cfg) {
  const int m = cfg.num_elements();
  ChannelSnapshot snap;
  snap.h = Eigen::VectorXcd::Zero(m);
  const double two_pi_over_lambda = 2.0 * kPi / cfg.wavelength();
  bool has_los = false;
  for (const auto& p : paths) {
    if (p.per_antenna_length.size() != m)
      throw InvalidArgument("synthesize_channel: path length vector mismatch");
    for (int i = 0; i < m; ++i) {
      const double phase = -two_pi_over_lambda * p.per_antenna_length[i];
      snap.h[i] += p.gain * Complex(std::cos(phase), std::sin(phase));
    }
    has_los = has_los || p.kind == PathKind::kLineOfSight;
  }
  snap.los_blocked = !has_los;
  snap.paths = std::move(paths);
  return snap;
}

Complex pilot_signal(const Eigen::VectorXcd& w, const ChannelSnapshot& snap,
                     const SystemConfig& cfg) {
  if (w.size() != snap.h.size())
    throw InvalidArgument("pilot_signal: codeword/channel size mismatch");
  return std::sqrt(cfg.tx_power_watts) * w.dot(snap.h);
}

Complex received_pilot(const Eigen::VectorXcd& w, const ChannelSnapshot& snap,
                       const SystemConfig& cfg, RandomStream& noise) {
  return pilot_signal(w, snap, cfg) + noise.complex_normal(cfg.noise_variance);
}

}  // namespace nfbeam
