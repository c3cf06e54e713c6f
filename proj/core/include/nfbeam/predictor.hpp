// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_PREDICTOR_HPP
#define NFBEAM_PREDICTOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "nfbeam/autodiff.hpp"
#include "nfbeam/codebook.hpp"
#include "nfbeam/sysgeo.hpp"

namespace nfbeam {

/// Architecture of the beam predictor. Head widths must mirror the codebook
/// layout the model is trained against.
struct ModelConfig {
  int d_model = 64;
  int d_in = 32;            ///< raw sensor-token feature width
  int n_blocks = 2;         ///< backbone depth
  int n_heads = 4;
  int history_len = 10;     ///< observed slots fed to the model
  int predict_len = 10;     ///< future slots predicted per episode
  int n_image_tokens = 49;  ///< 7 x 7 patch grid
  int n_lidar_tokens = 64;
  int n_modes = 5;
  int n_azimuth = 20;
  int n_elevation = 20;
  int n_distance = 10;
  bool use_image = true;
  bool use_lidar = true;
  bool use_mode = true;
  double dt = 0.1;          ///< slot duration in seconds

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& json_text);
};

/// Pinhole camera co-located with the array, looking along +x.
struct CameraIntrinsics {
  double fx = 100.0, fy = 100.0;
  double cx = 112.0, cy = 112.0;
  int width = 224, height = 224;
};

/// Per-slot kinematic features [position, velocity, acceleration], one row
/// per history slot, in raw units (m, m/s, m/s^2).
struct KinematicSequence {
  Eigen::MatrixXd features;  ///< history_len x 9
};

/// Builds finite-difference kinematics from noisy positions. Velocity rows
/// before the first difference and acceleration rows before the second are
/// zero-filled.
KinematicSequence encode_kinematics(const std::vector<Vec3>& noisy_positions,
                                    double dt);

/// Additive attention-bias row over sensor tokens, plus a degenerate flag.
struct SpatialBias {
  Eigen::RowVectorXd bias;
  bool degenerate = false;  ///< target unprojectable: bias is all zero
};

/// Gaussian image-plane prior: each patch is biased by the squared pixel
/// distance between its center and the projected terminal position.
SpatialBias image_spatial_bias(const Vec3& uav, const CameraIntrinsics& cam,
                               int grid = 7, double sigma_px = 32.0);

/// Range prior over point-cloud keypoints: bias_i = -dist(uav, kp_i) / rho.
SpatialBias lidar_spatial_bias(const Vec3& uav,
                               const Eigen::Matrix3Xd& keypoints,
                               double rho_m = 5.0);

/// One instantaneous sensor observation: image tokens encode projected scene
/// occupancy plus the camera's detection of the terminal itself (its patch,
/// sub-patch offset and range), lidar tokens encode surface keypoints. The
/// terminal detection is what carries position information that is
/// independent of GPS noise.
struct SensorTokens {
  Eigen::MatrixXd image_features;   ///< n_image_tokens x d_in
  Eigen::MatrixXd lidar_features;   ///< n_lidar_tokens x d_in
  Eigen::Matrix3Xd lidar_keypoints; ///< one column per lidar token
};

SensorTokens synth_sensor_tokens(const SceneConfig& scene, const Vec3& uav,
                                 const CameraIntrinsics& cam,
                                 const ModelConfig& cfg, std::uint64_t seed);

/// Position-guided cross-attention: a single query derived from the terminal
/// position attends over sensor tokens under an additive spatial bias.
/// Shapes: query_pos 1x3, feats N x d_in, bias 1 x N; returns 1 x d_model.
ad::Var pga_attend(ad::Tape& tape, ad::Var query_pos, ad::Var feats,
                   const Eigen::RowVectorXd& bias, ad::Var wq, ad::Var wk,
                   ad::Var wv);

/// Everything the model consumes for one episode.
struct ModelInputs {
  Eigen::MatrixXd kin_features;    ///< history_len x 9, raw units
  Vec3 query_pos = Vec3::Zero();   ///< latest noisy position
  int mode_id = -1;                ///< -1 disables the mode token
  bool has_image = false;
  bool has_lidar = false;
  Eigen::MatrixXd image_features;
  Eigen::RowVectorXd image_bias;
  Eigen::MatrixXd lidar_features;
  Eigen::RowVectorXd lidar_bias;
};

/// Dense outputs for the prediction horizon.
struct PredictionBundle {
  Eigen::MatrixXd trajectory;       ///< predict_len x 3 (meters)
  Eigen::MatrixXd prob_azimuth;     ///< predict_len x n_azimuth, rows sum to 1
  Eigen::MatrixXd prob_elevation;
  Eigen::MatrixXd prob_distance;
  Eigen::MatrixXd conf_azimuth;     ///< same shapes, entries in (0, 1)
  Eigen::MatrixXd conf_elevation;
  Eigen::MatrixXd conf_distance;

  /// Per-dimension argmax at `slot` (0-based row), as 1-based grid indices.
  BeamTriplet top1(int slot) const;
};

/// Named, ordered parameter set. Registration order is part of the
/// initialization and checkpoint contract; never reorder entries.
struct ParamStore {
  struct Entry {
    std::string name;
    ad::Matrix value;
    ad::Matrix grad;
    bool trainable = true;
  };
  std::vector<Entry> entries;

  int index_of(const std::string& name) const;  ///< -1 when absent
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  std::size_t num_scalars() const;
  void zero_grads();
};

/// Handles into the episode graph, for loss construction and introspection.
struct ForwardGraph {
  ad::Var fused;          ///< fused token sequence entering the backbone
  ad::Var backbone_out;   ///< full sequence after the last block
  ad::Var trajectory;
  ad::Var prob_azimuth, prob_elevation, prob_distance;
  ad::Var conf_azimuth, conf_elevation, conf_distance;
  std::vector<ad::Var> param_vars;  ///< aligned with ParamStore entries
  int n_context_tokens = 0;
};

/// Structure-aware beam predictor: a kinematics encoder and position-guided
/// sensor encoders feed a causal pre-norm transformer backbone; a regression
/// head emits future positions and decoupled classification heads emit
/// per-dimension beam probabilities with matching confidence vectors.
class BeamPredictor {
 public:
  BeamPredictor(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Token count of the fused sequence for these inputs.
  int sequence_length(const ModelInputs& in) const;

  /// fuse -> backbone -> heads on a caller-owned tape. Stage methods are
  /// exposed so tests can probe intermediate sequences.
  ForwardGraph forward(ad::Tape& tape, const ModelInputs& in) const;
  ad::Var fuse_tokens(ad::Tape& tape, const ModelInputs& in,
                      const std::vector<ad::Var>& param_vars,
                      int* n_context_out = nullptr) const;
  ad::Var backbone_forward(ad::Tape& tape, ad::Var seq,
                           const std::vector<ad::Var>& param_vars) const;

  /// Value-only convenience around forward().
  PredictionBundle predict(const ModelInputs& in) const;

  /// Binds every parameter as a tape leaf, in store order.
  std::vector<ad::Var> bind_params(ad::Tape& tape) const;

  /// Marks lower backbone blocks non-trainable (adaptation mode): encoders,
  /// embeddings, normalization gains/biases, heads and the top block stay
  /// trainable.
  void set_partial_freeze(bool freeze_lower);

  /// Checkpoint IO. `extra_json` rides along (e.g. the codebook hash) and is
  /// returned by load; the payload carries an integrity hash.
  void save_checkpoint(const std::string& path,
                       const std::string& extra_json = "{}") const;
  static BeamPredictor load_checkpoint(const std::string& path,
                                       std::string* extra_json = nullptr);

 private:
  ModelConfig cfg_;
  ParamStore params_;

  void register_params(std::uint64_t seed);
};

}  // namespace nfbeam

#endif  // NFBEAM_PREDICTOR_HPP
