// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_CODEBOOK_HPP
#define NFBEAM_CODEBOOK_HPP

#include <string>

#include "nfbeam/channel.hpp"
#include "nfbeam/sysgeo.hpp"

namespace nfbeam {

/// 1-based grid coordinates of one codeword: azimuth bin i, elevation bin j,
/// distance ring q.
struct BeamTriplet {
  int azimuth = 1;
  int elevation = 1;
  int distance = 1;
  bool operator==(const BeamTriplet&) const = default;
};

struct CodebookLayout {
  int n_azimuth = 20;
  int n_elevation = 20;
  int n_distance = 10;
  double azimuth_min_rad = deg2rad(-60.0);
  double azimuth_max_rad = deg2rad(60.0);
  double elevation_min_rad = deg2rad(-30.0);
  double elevation_max_rad = deg2rad(30.0);
  double r_min_m = 2.5;
  /// <= 0 selects 0.9 x Rayleigh distance of the configured panel.
  double r_max_m = -1.0;

  int size() const { return n_azimuth * n_elevation * n_distance; }
  void validate() const;
};

/// Far-field boundary 2 D^2 / lambda for the panel aperture D.
double rayleigh_distance(const SystemConfig& cfg);

/// Flattens (i, j, q) to the 1-based scan order: azimuth slowest, then
/// elevation, then distance. Throws InvalidArgument on out-of-range input.
int triplet_to_global(const BeamTriplet& t, const CodebookLayout& layout);
BeamTriplet global_to_triplet(int k, const CodebookLayout& layout);

/// Polar-domain codebook: each codeword phase-conjugates the spherical
/// wavefront of a grid point (angle pair + distance ring), so near-field
/// focusing is matched in both angle and range.
class PolarCodebook {
 public:
  const CodebookLayout& layout() const { return layout_; }
  int size() const { return layout_.size(); }
  int num_antennas() const { return static_cast<int>(steering_conj_.cols()); }
  std::uint64_t content_hash() const { return content_hash_; }

  const Eigen::VectorXd& azimuth_grid() const { return azimuth_grid_; }
  const Eigen::VectorXd& elevation_grid() const { return elevation_grid_; }
  const Eigen::VectorXd& distance_grid() const { return distance_grid_; }

  /// Cartesian focus point of codeword k (1-based).
  Vec3 sample_point(int k) const;
  Vec3 sample_point(const BeamTriplet& t) const;

  /// Unit-norm codeword w_k (1-based).
  Eigen::VectorXcd codeword(int k) const;

  /// Beamforming gain |w_k^H h|^2.
  double gain(int k, const Eigen::VectorXcd& h) const;
  /// Noiseless combiner outputs w_k^H h for every codeword, in scan order.
  Eigen::VectorXcd signal_sweep(const Eigen::VectorXcd& h) const;
  /// Gains of every codeword against `h`, in global scan order.
  Eigen::VectorXd gain_sweep(const Eigen::VectorXcd& h) const;

  friend PolarCodebook build_codebook(const SystemConfig&,
                                      const CodebookLayout&);
  friend void save_codebook(const PolarCodebook&, const std::string&);
  friend PolarCodebook load_codebook(const std::string&);

 private:
  CodebookLayout layout_;
  Eigen::VectorXd azimuth_grid_, elevation_grid_, distance_grid_;
  Eigen::MatrixXcd steering_conj_;  ///< row k = w_k^H (size K x M)
  Vec3 array_center_ = Vec3::Zero();
  double wavelength_ = 0.0;
  std::uint64_t content_hash_ = 0;
};

PolarCodebook build_codebook(const SystemConfig& cfg,
                             const CodebookLayout& layout);

/// Hash of the build inputs (panel geometry + grid layout, with the distance
/// ceiling resolved). Equal hashes imply bit-identical codebooks, so callers
/// can validate a cache without rebuilding.
std::uint64_t codebook_content_hash(const SystemConfig& cfg,
                                    const CodebookLayout& layout);

/// Binary cache keyed by the content hash; the payload additionally carries
/// its own integrity hash, verified on load.
void save_codebook(const PolarCodebook& cb, const std::string& path);
PolarCodebook load_codebook(const std::string& path);

/// Beamforming gain |w^H h|^2 for an arbitrary combiner.
double beam_gain(const Eigen::VectorXcd& w, const Eigen::VectorXcd& h);

/// Spectral efficiency log2(1 + P G / sigma^2) in bit/s/Hz.
double achievable_rate(double gain, const SystemConfig& cfg);
double achievable_rate(const Eigen::VectorXcd& w, const ChannelSnapshot& snap,
                       const SystemConfig& cfg);

struct OracleResult {
  BeamTriplet triplet;
  int global_index = 1;
  double gain = 0.0;
  bool outage = false;  ///< all-zero channel; triplet defaults to index 1
};

/// Exact best codeword under a noiseless full sweep. Ties resolve to the
/// smallest global index, so the result is deterministic.
OracleResult oracle_optimal(const PolarCodebook& cb,
                            const ChannelSnapshot& snap);

}  // namespace nfbeam

#endif  // NFBEAM_CODEBOOK_HPP
