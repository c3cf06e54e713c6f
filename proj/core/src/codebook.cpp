// SPDX-License-Identifier: Apache-2.0
#include "nfbeam/codebook.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"

namespace nfbeam {

namespace {

constexpr char kCacheMagic[] = "NFBCBK01";

double grid_value(int idx0, int n, double lo, double hi) {
  return n == 1 ? 0.5 * (lo + hi) : lo + idx0 * (hi - lo) / (n - 1);
}

/// Distance rings are uniform in 1/r, matching how focusing resolution decays
/// with range; ring 1 is the closest.
double ring_value(int idx0, int n, double r_min, double r_max) {
  const double inv =
      grid_value(idx0, n, 1.0 / r_min, 1.0 / r_max);
  return 1.0 / inv;
}

double resolve_r_max(const CodebookLayout& layout, const SystemConfig& cfg) {
  return layout.r_max_m > 0 ? layout.r_max_m : 0.9 * rayleigh_distance(cfg);
}

std::uint64_t hash_build_inputs(const SystemConfig& cfg,
                                const CodebookLayout& layout,
                                double r_max_resolved) {
  std::ostringstream os;
  os << "nfbeam-codebook-v1";
  bio::put_f64(os, cfg.carrier_frequency_hz);
  bio::put_i32(os, cfg.antenna_rows);
  bio::put_i32(os, cfg.antenna_cols);
  bio::put_f64(os, cfg.element_spacing_wavelengths);
  for (int i = 0; i < 3; ++i) bio::put_f64(os, cfg.array_center[i]);
  bio::put_i32(os, layout.n_azimuth);
  bio::put_i32(os, layout.n_elevation);
  bio::put_i32(os, layout.n_distance);
  bio::put_f64(os, layout.azimuth_min_rad);
  bio::put_f64(os, layout.azimuth_max_rad);
  bio::put_f64(os, layout.elevation_min_rad);
  bio::put_f64(os, layout.elevation_max_rad);
  bio::put_f64(os, layout.r_min_m);
  bio::put_f64(os, r_max_resolved);
  const std::string s = os.str();
  return fnv1a64(s.data(), s.size());
}

}  // namespace

void CodebookLayout::validate() const {
  if (n_azimuth < 1 || n_elevation < 1 || n_distance < 1)
    throw InvalidArgument("CodebookLayout: grid sizes must be >= 1");
  if (azimuth_min_rad > azimuth_max_rad ||
      elevation_min_rad > elevation_max_rad)
    throw InvalidArgument("CodebookLayout: angle ranges must be ordered");
  if (r_min_m <= 0)
    throw InvalidArgument("CodebookLayout: r_min must be positive");
  if (r_max_m > 0 && r_max_m <= r_min_m)
    throw InvalidArgument("CodebookLayout: r_max must exceed r_min");
}

double rayleigh_distance(const SystemConfig& cfg) {
  const double d = cfg.aperture_m();
  return 2.0 * d * d / cfg.wavelength();
}

int triplet_to_global(const BeamTriplet& t, const CodebookLayout& layout) {
  if (t.azimuth < 1 || t.azimuth > layout.n_azimuth ||
      t.elevation < 1 || t.elevation > layout.n_elevation ||
      t.distance < 1 || t.distance > layout.n_distance)
    throw InvalidArgument("triplet_to_global: index out of range");
  return (t.azimuth - 1) * layout.n_elevation * layout.n_distance +
         (t.elevation - 1) * layout.n_distance + t.distance;
}

BeamTriplet global_to_triplet(int k, const CodebookLayout& layout) {
  if (k < 1 || k > layout.size())
    throw InvalidArgument("global_to_triplet: index out of range");
  const int k0 = k - 1;
  const int per_az = layout.n_elevation * layout.n_distance;
  BeamTriplet t;
  t.azimuth = k0 / per_az + 1;
  t.elevation = (k0 % per_az) / layout.n_distance + 1;
  t.distance = k0 % layout.n_distance + 1;
  return t;
}

Vec3 PolarCodebook::sample_point(const BeamTriplet& t) const {
  const double az = azimuth_grid_[t.azimuth - 1];
  const double el = elevation_grid_[t.elevation - 1];
  const double r = distance_grid_[t.distance - 1];
  return array_center_ + r * Vec3(std::cos(el) * std::cos(az),
                                  std::cos(el) * std::sin(az), std::sin(el));
}

Vec3 PolarCodebook::sample_point(int k) const {
  return sample_point(global_to_triplet(k, layout_));
}

Eigen::VectorXcd PolarCodebook::codeword(int k) const {
  if (k < 1 || k > size())
    throw InvalidArgument("PolarCodebook::codeword: index out of range");
  return steering_conj_.row(k - 1).adjoint();
}

double PolarCodebook::gain(int k, const Eigen::VectorXcd& h) const {
  if (k < 1 || k > size())
    throw InvalidArgument("PolarCodebook::gain: index out of range");
  if (h.size() != steering_conj_.cols())
    throw InvalidArgument("PolarCodebook::gain: channel size mismatch");
  return std::norm((steering_conj_.row(k - 1) * h).value());
}

Eigen::VectorXcd PolarCodebook::signal_sweep(const Eigen::VectorXcd& h) const {
  if (h.size() != steering_conj_.cols())
    throw InvalidArgument("PolarCodebook::signal_sweep: channel size mismatch");
  return steering_conj_ * h;
}

Eigen::VectorXd PolarCodebook::gain_sweep(const Eigen::VectorXcd& h) const {
  return signal_sweep(h).cwiseAbs2();
}

PolarCodebook build_codebook(const SystemConfig& cfg,
                             const CodebookLayout& layout) {
  cfg.validate();
  layout.validate();

  PolarCodebook cb;
  cb.layout_ = layout;
  cb.layout_.r_max_m = resolve_r_max(layout, cfg);
  cb.array_center_ = cfg.array_center;
  cb.wavelength_ = cfg.wavelength();
  cb.content_hash_ = hash_build_inputs(cfg, layout, cb.layout_.r_max_m);

  cb.azimuth_grid_.resize(layout.n_azimuth);
  for (int i = 0; i < layout.n_azimuth; ++i)
    cb.azimuth_grid_[i] = grid_value(i, layout.n_azimuth,
                                     layout.azimuth_min_rad,
                                     layout.azimuth_max_rad);
  cb.elevation_grid_.resize(layout.n_elevation);
  for (int j = 0; j < layout.n_elevation; ++j)
    cb.elevation_grid_[j] = grid_value(j, layout.n_elevation,
                                       layout.elevation_min_rad,
                                       layout.elevation_max_rad);
  cb.distance_grid_.resize(layout.n_distance);
  for (int q = 0; q < layout.n_distance; ++q)
    cb.distance_grid_[q] =
        ring_value(q, layout.n_distance, layout.r_min_m, cb.layout_.r_max_m);

  const ArrayGeometry geom = antenna_positions(cfg);
  const int m = cfg.num_elements();
  const int k_total = layout.size();
  const double two_pi_over_lambda = 2.0 * kPi / cb.wavelength_;
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));

  cb.steering_conj_.resize(k_total, m);
  // Rows are independent, so the build parallelizes without affecting the
  // bytes produced.
  parallel_for(static_cast<std::size_t>(k_total), [&](std::size_t k0) {
    const Vec3 p = cb.sample_point(static_cast<int>(k0) + 1);
    // Row k holds w_k^H: conjugating the focus phases aligns all elements.
    const Eigen::ArrayXd dist =
        (geom.positions.colwise() - p).colwise().norm().transpose();
    const Eigen::ArrayXd phase = two_pi_over_lambda * dist;
    cb.steering_conj_.row(static_cast<Eigen::Index>(k0)) =
        (inv_sqrt_m * (phase.cos() + Complex(0, 1) * phase.sin())).matrix();
  });
  return cb;
}

std::uint64_t codebook_content_hash(const SystemConfig& cfg,
                                    const CodebookLayout& layout) {
  cfg.validate();
  layout.validate();
  return hash_build_inputs(cfg, layout, resolve_r_max(layout, cfg));
}

double beam_gain(const Eigen::VectorXcd& w, const Eigen::VectorXcd& h) {
  if (w.size() != h.size())
    throw InvalidArgument("beam_gain: codeword/channel size mismatch");
  return std::norm(w.dot(h));
}

double achievable_rate(double gain, const SystemConfig& cfg) {
  return std::log2(1.0 + cfg.tx_power_watts * gain / cfg.noise_variance);
}

double achievable_rate(const Eigen::VectorXcd& w, const ChannelSnapshot& snap,
                       const SystemConfig& cfg) {
  return achievable_rate(beam_gain(w, snap.h), cfg);
}

OracleResult oracle_optimal(const PolarCodebook& cb,
                            const ChannelSnapshot& snap) {
  const Eigen::VectorXd gains = cb.gain_sweep(snap.h);
  int best = 0;
  for (int k = 1; k < gains.size(); ++k) {
    // Keep the earlier index unless the newcomer is meaningfully larger, so
    // exact ties (and sub-ulp noise) resolve to the smallest global index.
    if (gains[k] > gains[best] * (1.0 + 1e-12)) best = k;
  }
  OracleResult res;
  res.global_index = best + 1;
  res.triplet = global_to_triplet(best + 1, cb.layout());
  res.gain = gains[best];
  res.outage = snap.outage() || gains[best] <= 0.0;
  return res;
}

void save_codebook(const PolarCodebook& cb, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_codebook: cannot open " + path);
  os.write(kCacheMagic, 8);
  bio::put_u64(os, cb.content_hash_);
  bio::put_i32(os, cb.layout_.n_azimuth);
  bio::put_i32(os, cb.layout_.n_elevation);
  bio::put_i32(os, cb.layout_.n_distance);
  bio::put_f64(os, cb.layout_.azimuth_min_rad);
  bio::put_f64(os, cb.layout_.azimuth_max_rad);
  bio::put_f64(os, cb.layout_.elevation_min_rad);
  bio::put_f64(os, cb.layout_.elevation_max_rad);
  bio::put_f64(os, cb.layout_.r_min_m);
  bio::put_f64(os, cb.layout_.r_max_m);
  for (int i = 0; i < 3; ++i) bio::put_f64(os, cb.array_center_[i]);
  bio::put_f64(os, cb.wavelength_);
  bio::put_u64(os, static_cast<std::uint64_t>(cb.steering_conj_.rows()));
  bio::put_u64(os, static_cast<std::uint64_t>(cb.steering_conj_.cols()));
  const std::size_t bytes = static_cast<std::size_t>(cb.steering_conj_.size()) *
                            sizeof(Complex);
  bio::put_u64(os, fnv1a64(cb.steering_conj_.data(), bytes));
  bio::put_bytes(os, cb.steering_conj_.data(), bytes);
  for (int i = 0; i < cb.azimuth_grid_.size(); ++i)
    bio::put_f64(os, cb.azimuth_grid_[i]);
  for (int i = 0; i < cb.elevation_grid_.size(); ++i)
    bio::put_f64(os, cb.elevation_grid_[i]);
  for (int i = 0; i < cb.distance_grid_.size(); ++i)
    bio::put_f64(os, cb.distance_grid_[i]);
  if (!os) throw IoError("save_codebook: write failed for " + path);
}

PolarCodebook load_codebook(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_codebook: cannot open " + path);
  bio::expect_magic(is, kCacheMagic, "codebook cache");
  PolarCodebook cb;
  cb.content_hash_ = bio::get_u64(is, "codebook hash");
  cb.layout_.n_azimuth = bio::get_i32(is, "codebook layout");
  cb.layout_.n_elevation = bio::get_i32(is, "codebook layout");
  cb.layout_.n_distance = bio::get_i32(is, "codebook layout");
  cb.layout_.azimuth_min_rad = bio::get_f64(is, "codebook layout");
  cb.layout_.azimuth_max_rad = bio::get_f64(is, "codebook layout");
  cb.layout_.elevation_min_rad = bio::get_f64(is, "codebook layout");
  cb.layout_.elevation_max_rad = bio::get_f64(is, "codebook layout");
  cb.layout_.r_min_m = bio::get_f64(is, "codebook layout");
  cb.layout_.r_max_m = bio::get_f64(is, "codebook layout");
  for (int i = 0; i < 3; ++i)
    cb.array_center_[i] = bio::get_f64(is, "codebook layout");
  cb.wavelength_ = bio::get_f64(is, "codebook layout");
  const auto rows = bio::get_u64(is, "codebook dims");
  const auto cols = bio::get_u64(is, "codebook dims");
  if (rows != static_cast<std::uint64_t>(cb.layout_.size()) || cols == 0 ||
      rows > (1u << 24) || cols > (1u << 20))
    throw IoError("load_codebook: inconsistent dimensions in " + path);
  const std::uint64_t payload_hash = bio::get_u64(is, "codebook payload hash");
  cb.steering_conj_.resize(static_cast<Eigen::Index>(rows),
                           static_cast<Eigen::Index>(cols));
  const std::size_t bytes =
      static_cast<std::size_t>(cb.steering_conj_.size()) * sizeof(Complex);
  bio::get_bytes(is, cb.steering_conj_.data(), bytes, "codebook payload");
  if (fnv1a64(cb.steering_conj_.data(), bytes) != payload_hash)
    throw IoError("load_codebook: payload hash mismatch in " + path);
  cb.azimuth_grid_.resize(cb.layout_.n_azimuth);
  for (int i = 0; i < cb.layout_.n_azimuth; ++i)
    cb.azimuth_grid_[i] = bio::get_f64(is, "codebook grids");
  cb.elevation_grid_.resize(cb.layout_.n_elevation);
  for (int i = 0; i < cb.layout_.n_elevation; ++i)
    cb.elevation_grid_[i] = bio::get_f64(is, "codebook grids");
  cb.distance_grid_.resize(cb.layout_.n_distance);
  for (int i = 0; i < cb.layout_.n_distance; ++i)
    cb.distance_grid_[i] = bio::get_f64(is, "codebook grids");
  return cb;
}

}  // namespace nfbeam
