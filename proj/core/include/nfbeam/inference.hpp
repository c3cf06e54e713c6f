// SPDX-License-Identifier: Apache-2.0
#ifndef NFBEAM_INFERENCE_HPP
#define NFBEAM_INFERENCE_HPP

#include <utility>
#include <vector>

#include "nfbeam/codebook.hpp"
#include "nfbeam/predictor.hpp"

namespace nfbeam {

struct RefinementConfig {
  enum class Mode { kNone, kProbability, kPilotSweep };
  Mode mode = Mode::kPilotSweep;
  double confidence_threshold = 0.9;
  int pool_top_k = 5;  ///< per-dimension candidates; pool is the product
};

const char* refinement_mode_name(RefinementConfig::Mode mode);

/// Accept the top-1 triplet only when the confidence of every dimension's
/// argmax bin strictly exceeds the threshold.
bool gate_confidence(const PredictionBundle& pred, int slot,
                     const RefinementConfig& cfg);

/// Cartesian product of the per-dimension top-k bins, ordered by descending
/// joint probability (ties: ascending global index). Candidates are unique.
std::vector<BeamTriplet> candidate_pool(const PredictionBundle& pred, int slot,
                                        const RefinementConfig& cfg,
                                        const CodebookLayout& layout);

/// Zero-pilot refinement: the pool leader under the joint probability.
BeamTriplet refine_joint_prob(const std::vector<BeamTriplet>& pool);

/// Pilot-sweep refinement: measures one pilot per candidate and returns the
/// strongest. Consumes exactly pool.size() pilots.
std::pair<BeamTriplet, int> refine_pilot_sweep(
    const std::vector<BeamTriplet>& pool, const ChannelSnapshot& snap,
    const PolarCodebook& cb, const SystemConfig& sys, RandomStream& noise);

/// Full per-slot pipeline: gate, then (on low confidence) refine.
struct RefinementOutcome {
  BeamTriplet triplet;
  bool triggered = false;
  int pilots_used = 0;
};

RefinementOutcome refine_slot(const PredictionBundle& pred, int slot,
                              const ChannelSnapshot& snap,
                              const PolarCodebook& cb, const SystemConfig& sys,
                              const RefinementConfig& cfg, RandomStream& noise);

/// Integer pilot accounting across slots; ratios are derived on demand so
/// the identity avg_pilots = trigger_rate * pool_size holds to rounding.
struct OverheadStats {
  long long total_pilots = 0;
  long long n_triggered = 0;
  long long n_slots = 0;

  double trigger_rate() const {
    return n_slots ? static_cast<double>(n_triggered) / n_slots : 0.0;
  }
  double average_pilots() const {
    return n_slots ? static_cast<double>(total_pilots) / n_slots : 0.0;
  }
  void add(const RefinementOutcome& o) {
    total_pilots += o.pilots_used;
    n_triggered += o.triggered ? 1 : 0;
    n_slots += 1;
  }
};

struct SearchResult {
  BeamTriplet triplet;
  int pilots_used = 0;
};

/// Measures every codeword once (full sweep). With `noise` null the sweep is
/// noiseless and reproduces the oracle selection exactly.
SearchResult exhaustive_search(const ChannelSnapshot& snap,
                               const PolarCodebook& cb, const SystemConfig& sys,
                               RandomStream* noise);

/// Three-stage budgeted search: coarse angular scan on the farthest ring
/// (smallest stride that fits), a 3x3 fine angular neighborhood, then a full
/// distance sweep at the refined angle. Never exceeds `budget` pilots.
SearchResult hierarchical_search(const ChannelSnapshot& snap,
                                 const PolarCodebook& cb, int budget,
                                 const SystemConfig& sys, RandomStream* noise);

/// Two-stage baseline: decimated angular scan on the farthest ring with the
/// largest grid fitting budget - n_distance, then a distance sweep.
SearchResult two_stage_search(const ChannelSnapshot& snap,
                              const PolarCodebook& cb, int budget,
                              const SystemConfig& sys, RandomStream* noise);

}  // namespace nfbeam

#endif  // NFBEAM_INFERENCE_HPP
