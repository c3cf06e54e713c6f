// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_EVALHARNESS_HPP
#define NFBEAM_EVALHARNESS_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nfbeam/inference.hpp"
#include "nfbeam/predictor.hpp"

namespace nfbeam {

enum class Split : int { kTrain = 0, kVal = 1, kTest = 2 };
const char* split_name(Split s);

/// Ground truth for one future slot of an episode.
struct SlotRecord {
  Vec3 true_pos = Vec3::Zero();
  Vec3 noisy_pos = Vec3::Zero();
  ChannelSnapshot snapshot;     ///< noiseless channel at this slot
  BeamTriplet gt;               ///< oracle-optimal codeword
  double oracle_gain = 0.0;
  bool los_blocked = false;
  bool outage = false;
};

/// One trajectory episode: an observed history window followed by a labeled
/// prediction horizon, all in one scene under one motion archetype.
struct Episode {
  int scene_id = 0;
  int mode_id = 0;
  Split split = Split::kTrain;
  bool nlos = false;            ///< any horizon slot lost the direct path
  std::uint64_t episode_seed = 0;
  std::vector<Vec3> history_true;    ///< history_len positions
  std::vector<Vec3> history_noisy;
  std::vector<SlotRecord> horizon;   ///< predict_len labeled slots
};

struct DatasetConfig {
  int n_episodes = 2000;
  int n_scenes = 10;
  int history_len = 10;
  int predict_len = 10;
  double dt = 0.1;
  double gps_sigma_m = 0.5;
  std::uint64_t seed = 1;
  void validate() const;
};

struct Dataset {
  DatasetConfig cfg;
  SystemConfig system;
  CodebookLayout layout;
  std::uint64_t codebook_hash = 0;
  std::vector<SceneConfig> scenes;
  std::vector<Episode> episodes;

  std::vector<int> episode_indices(Split split) const;
};

/// Synthesizes the full corpus: seeded scenes, per-episode trajectories, GPS
/// noise, channels and oracle labels. Scene splits are disjoint, so val/test
/// scenes are never seen in training.
Dataset make_dataset(const SystemConfig& system, const PolarCodebook& cb,
                     const DatasetConfig& cfg);

/// Binary episodes + JSON sidecar (system, layout, scenes, splits, hash).
void save_dataset(const Dataset& ds, const std::string& bin_path,
                  const std::string& meta_path);
Dataset load_dataset(const std::string& bin_path, const std::string& meta_path);

/// Assembles the model inputs for one episode: kinematics from the noisy
/// history, one instantaneous sensor observation of the episode's scene taken
/// at the current true position, spatial biases from the noisy position, and
/// the mode context token.
ModelInputs make_model_inputs(const Dataset& ds, int episode_index,
                              const ModelConfig& model_cfg,
                              const CameraIntrinsics& cam = {});

// --- Metrics -------------------------------------------------------------

/// Fraction of horizon slots whose ground-truth bin is within the top-K bins
/// of each decoupled head; returned as {azimuth, elevation, distance}.
/// Outage slots are skipped; returns zeros when every slot is an outage.
std::array<double, 3> topk_decomposed(const PredictionBundle& pred,
                                      const Episode& ep, int k);

/// Fraction of horizon slots whose ground-truth codeword ranks within the
/// top-K joint probabilities p_az * p_el * p_dist (ties resolve by global
/// index, lower first).
double topk_joint(const PredictionBundle& pred, const Episode& ep, int k,
                  const CodebookLayout& layout);

/// Mean Euclidean error between predicted and true horizon positions.
double trajectory_mae(const PredictionBundle& pred, const Episode& ep);

/// One metrics.csv row. NaN marks non-applicable cells (e.g. MAE of
/// pilot-sweep baselines that predict no trajectory).
struct MetricsRow {
  std::string method;
  std::string scenario;
  double top1_i = 0, top1_j = 0, top1_q = 0;
  double top1_joint = 0, top5_joint = 0;
  double rate = 0, norm_gain = 0, mae = 0;
  double trigger_rate = 0, avg_pilots = 0;
};

/// Per-slot trace of the refinement pipeline, one line per horizon slot.
struct OutcomeRecord {
  int episode = 0, slot = 0, scene = 0, mode = 0;
  bool triggered = false;
  int pilots = 0;
  BeamTriplet beam, gt;
  double gain = 0, oracle_gain = 0, rate = 0;
  bool los = true;
};

struct RateCurveRow {
  std::string method;
  double snr_db = 0;
  double rate = 0;
};

struct ExperimentConfig {
  bool run_proposed = true;     ///< gated predictor (3 refinement variants)
  bool run_baselines = false;   ///< pilot-sweep baselines + budget
  RefinementConfig refine;      ///< variant traced into outcomes
  int budget = 90;
  std::vector<double> snr_db;   ///< extra rate curve (selection unchanged)
  Split split = Split::kTest;
  std::uint64_t seed = 1;       ///< pilot-noise seed for measurements
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::vector<OutcomeRecord> outcomes;
  std::vector<RateCurveRow> rate_rows;
};

/// Runs the requested methods over one dataset split and aggregates metrics
/// per scenario (overall / los / nlos). `model` may be null when only
/// baselines are requested.
ExperimentResult run_experiment(const Dataset& ds, const BeamPredictor* model,
                                const PolarCodebook& cb,
                                const ExperimentConfig& cfg);

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);
void write_outcomes_jsonl(const std::string& path,
                          const std::vector<OutcomeRecord>& outcomes);
void write_rate_csv(const std::string& path,
                    const std::vector<RateCurveRow>& rows);

/// Human-readable digest of one or more metrics tables.
std::string format_report(const std::vector<MetricsRow>& rows);

}  // namespace nfbeam

#endif  // NFBEAM_EVALHARNESS_HPP
