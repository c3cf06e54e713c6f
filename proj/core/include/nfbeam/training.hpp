// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_TRAINING_HPP
#define NFBEAM_TRAINING_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nfbeam/evalharness.hpp"

namespace nfbeam {

/// Thrown when the optimization produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossConfig {
  double lambda_traj = 0.2;
  double lambda_beam = 0.6;
  double lambda_conf = 0.2;
  /// Soft-label mass in tenths: center bin gets `center_tenths`/10, each of
  /// the four +-1/+-2 neighbors gets `neighbor_tenths`/10, then the in-range
  /// mass is renormalized. Integer tenths keep boundary values exact.
  int center_tenths = 6;
  int neighbor_tenths = 1;
  double kl_epsilon = 1e-12;  ///< probability floor inside log()
  void validate() const;
};

/// Neighborhood-smoothed label over `n_bins` for a 1-based ground-truth bin.
/// Out-of-range neighbor mass is renormalized away, so the vector sums to 1
/// and boundary bins get exact dyadic values.
Eigen::VectorXd soft_target(int gt_bin, int n_bins, const LossConfig& cfg);

/// KL(p || q) with the same epsilon floor the training graph uses; equals
/// exactly zero when p and q are bitwise identical.
double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                     double epsilon);

/// Gain-isolation confidence targets at a predicted/ground-truth triplet
/// pair: dimension i's target is the gain of the codeword that is correct in
/// every other dimension, normalized by the optimal gain and clamped to
/// [0, 1]. All-zero when the slot is an outage.
std::array<double, 3> confidence_target(const BeamTriplet& pred,
                                        const BeamTriplet& gt,
                                        const PolarCodebook& cb,
                                        const ChannelSnapshot& snap);

/// Per-episode constants for the loss graph.
struct EpisodeTargets {
  Eigen::MatrixXd true_future;  ///< predict_len x 3
  std::vector<BeamTriplet> gt;
  std::vector<bool> active;     ///< false for outage slots
  Eigen::MatrixXd target_az, target_el, target_dist;  ///< soft labels per slot
};

EpisodeTargets make_episode_targets(const Episode& ep, const ModelConfig& mc,
                                    const LossConfig& lc);

/// Scalar loss nodes for one episode.
struct LossBreakdown {
  ad::Var total, traj, beam, conf;
};

/// Builds all loss terms on the episode's tape. Beam and confidence terms
/// average over active slots only; confidence targets are evaluated at the
/// current argmax predictions and enter the graph as constants.
LossBreakdown build_episode_loss(ad::Tape& tape, const ForwardGraph& fg,
                                 const EpisodeTargets& targets,
                                 const Episode& ep, const PolarCodebook& cb,
                                 const LossConfig& cfg);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int plateau_patience = 3;   ///< epochs without val improvement before decay
  double lr_decay = 0.5;
  double min_learning_rate = 1e-5;
  std::uint64_t seed = 1;
  bool partial_freeze = false;  ///< adaptation mode: train top block + heads
  LossConfig loss;
  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_total = 0, train_traj = 0, train_beam = 0, train_conf = 0;
  double val_total = 0;
  double learning_rate = 0;
};

struct TrainResult {
  std::vector<EpochStats> curve;
  double best_val = 0;
  int best_epoch = 0;
};

/// Mini-batch Adam over the train split with per-epoch validation, plateau
/// step-size decay and best-validation parameter restore. Deterministic for
/// a fixed (dataset, model seed, train seed). Throws TrainingDiverged on a
/// non-finite loss.
TrainResult train_loop(const Dataset& ds, const PolarCodebook& cb,
                       BeamPredictor& model, const TrainConfig& cfg,
                       std::ostream* log = nullptr);

void write_loss_curve_csv(const std::string& path,
                          const std::vector<EpochStats>& curve);

}  // namespace nfbeam

#endif  // NFBEAM_TRAINING_HPP
