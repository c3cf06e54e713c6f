// SPDX-License-Identifier: Apache-2.0
#include "nfbeam/inference.hpp"

#include <algorithm>
#include <cmath>

#include "nfbeam/channel.hpp"

namespace nfbeam {

namespace {

/// Shared argmax rule for measured powers: keep the earliest probe unless a
/// later one is larger beyond relative slack, so noiseless sweeps reproduce
/// the oracle tie-break exactly.
struct BestProbe {
  bool any = false;
  double power = 0.0;
  BeamTriplet triplet;
  void offer(double p, const BeamTriplet& t) {
    if (!any || p > power * (1.0 + 1e-12)) {
      any = true;
      power = p;
      triplet = t;
    }
  }
};

double measure_power(const BeamTriplet& t, const ChannelSnapshot& snap,
                     const PolarCodebook& cb, const SystemConfig& sys,
                     RandomStream* noise) {
  const int k = triplet_to_global(t, cb.layout());
  const Eigen::VectorXcd w = cb.codeword(k);
  const Complex y = noise ? received_pilot(w, snap, sys, *noise)
                          : pilot_signal(w, snap, sys);
  return std::norm(y);
}

/// Per-dimension top-k bins by probability (ties: lower bin first).
std::vector<int> top_bins(const Eigen::MatrixXd& prob, int slot, int k) {
  const int n = static_cast<int>(prob.cols());
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return prob(slot, a) > prob(slot, b);
  });
  order.resize(static_cast<std::size_t>(std::min(k, n)));
  return order;  // 0-based bins
}

}  // namespace

const char* refinement_mode_name(RefinementConfig::Mode mode) {
  switch (mode) {
    case RefinementConfig::Mode::kNone: return "none";
    case RefinementConfig::Mode::kProbability: return "prob";
    case RefinementConfig::Mode::kPilotSweep: return "sweep";
  }
  throw InvalidArgument("refinement_mode_name: unknown mode");
}

bool gate_confidence(const PredictionBundle& pred, int slot,
                     const RefinementConfig& cfg) {
  const BeamTriplet t = pred.top1(slot);
  // Strict inequality on every dimension: borderline confidence refines.
  return pred.conf_azimuth(slot, t.azimuth - 1) > cfg.confidence_threshold &&
         pred.conf_elevation(slot, t.elevation - 1) >
             cfg.confidence_threshold &&
         pred.conf_distance(slot, t.distance - 1) > cfg.confidence_threshold;
}

std::vector<BeamTriplet> candidate_pool(const PredictionBundle& pred, int slot,
                                        const RefinementConfig& cfg,
                                        const CodebookLayout& layout) {
  if (cfg.pool_top_k < 1)
    throw InvalidArgument("candidate_pool: pool_top_k must be >= 1");
  const auto az = top_bins(pred.prob_azimuth, slot, cfg.pool_top_k);
  const auto el = top_bins(pred.prob_elevation, slot, cfg.pool_top_k);
  const auto di = top_bins(pred.prob_distance, slot, cfg.pool_top_k);

  struct Scored {
    double joint;
    int global;
    BeamTriplet t;
  };
  std::vector<Scored> pool;
  pool.reserve(az.size() * el.size() * di.size());
  for (int a : az)
    for (int e : el)
      for (int d : di) {
        BeamTriplet t{a + 1, e + 1, d + 1};
        pool.push_back({pred.prob_azimuth(slot, a) *
                            pred.prob_elevation(slot, e) *
                            pred.prob_distance(slot, d),
                        triplet_to_global(t, layout), t});
      }
  std::sort(pool.begin(), pool.end(), [](const Scored& x, const Scored& y) {
    if (x.joint != y.joint) return x.joint > y.joint;
    return x.global < y.global;
  });
  std::vector<BeamTriplet> out;
  out.reserve(pool.size());
  for (const auto& s : pool) out.push_back(s.t);
  return out;
}

BeamTriplet refine_joint_prob(const std::vector<BeamTriplet>& pool) {
  if (pool.empty()) throw InvalidArgument("refine_joint_prob: empty pool");
  return pool.front();
}

std::pair<BeamTriplet, int> refine_pilot_sweep(
    const std::vector<BeamTriplet>& pool, const ChannelSnapshot& snap,
    const PolarCodebook& cb, const SystemConfig& sys, RandomStream& noise) {
  if (pool.empty()) throw InvalidArgument("refine_pilot_sweep: empty pool");
  BestProbe best;
  for (const auto& t : pool)
    best.offer(measure_power(t, snap, cb, sys, &noise), t);
  return {best.triplet, static_cast<int>(pool.size())};
}

RefinementOutcome refine_slot(const PredictionBundle& pred, int slot,
                              const ChannelSnapshot& snap,
                              const PolarCodebook& cb, const SystemConfig& sys,
                              const RefinementConfig& cfg,
                              RandomStream& noise) {
  RefinementOutcome out;
  out.triplet = pred.top1(slot);
  if (cfg.mode == RefinementConfig::Mode::kNone ||
      gate_confidence(pred, slot, cfg))
    return out;

  out.triggered = true;
  const auto pool = candidate_pool(pred, slot, cfg, cb.layout());
  if (cfg.mode == RefinementConfig::Mode::kProbability) {
    out.triplet = refine_joint_prob(pool);
  } else {
    auto [t, pilots] = refine_pilot_sweep(pool, snap, cb, sys, noise);
    out.triplet = t;
    out.pilots_used = pilots;
  }
  return out;
}

SearchResult exhaustive_search(const ChannelSnapshot& snap,
                               const PolarCodebook& cb, const SystemConfig& sys,
                               RandomStream* noise) {
  const Eigen::VectorXcd sig = cb.signal_sweep(snap.h);
  const double amp = std::sqrt(sys.tx_power_watts);
  BestProbe best;
  for (int k = 1; k <= cb.size(); ++k) {
    Complex y = amp * sig[k - 1];
    if (noise) y += noise->complex_normal(sys.noise_variance);
    best.offer(std::norm(y), global_to_triplet(k, cb.layout()));
  }
  return {best.triplet, cb.size()};
}

SearchResult hierarchical_search(const ChannelSnapshot& snap,
                                 const PolarCodebook& cb, int budget,
                                 const SystemConfig& sys, RandomStream* noise) {
  const CodebookLayout& L = cb.layout();
  const int refine_probes = 9;
  const int min_budget = 1 + refine_probes + L.n_distance;
  if (budget < min_budget)
    throw InvalidArgument(
        "hierarchical_search: budget below the minimum stage cost");

  // Smallest stride whose coarse angular scan still fits alongside the fixed
  // refine + distance stages.
  const int angle_budget = budget - refine_probes - L.n_distance;
  int stride = 0;
  for (int s = 1; s <= std::max(L.n_azimuth, L.n_elevation); ++s) {
    const int n1 = ((L.n_azimuth + s - 1) / s) * ((L.n_elevation + s - 1) / s);
    if (n1 <= angle_budget) {
      stride = s;
      break;
    }
  }
  if (stride == 0)
    throw InvalidArgument("hierarchical_search: budget below the minimum");

  int pilots = 0;
  auto probe = [&](int i, int j, int q, BestProbe& best) {
    if (pilots >= budget)
      throw std::logic_error("hierarchical_search: budget guard tripped");
    ++pilots;
    BeamTriplet t{i, j, q};
    best.offer(measure_power(t, snap, cb, sys, noise), t);
  };

  // Stage 1: coarse scan at the farthest ring, where angular structure is
  // closest to separable.
  BestProbe best;
  for (int i = 1; i <= L.n_azimuth; i += stride)
    for (int j = 1; j <= L.n_elevation; j += stride)
      probe(i, j, L.n_distance, best);
  BeamTriplet coarse = best.triplet;

  // Stage 2: 3x3 fine neighborhood around the coarse winner.
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) {
      const int i = std::clamp(coarse.azimuth + di, 1, L.n_azimuth);
      const int j = std::clamp(coarse.elevation + dj, 1, L.n_elevation);
      probe(i, j, L.n_distance, best);
    }
  BeamTriplet angle = best.triplet;

  // Stage 3: distance sweep at the refined angle.
  for (int q = 1; q <= L.n_distance; ++q)
    probe(angle.azimuth, angle.elevation, q, best);

  return {best.triplet, pilots};
}

SearchResult two_stage_search(const ChannelSnapshot& snap,
                              const PolarCodebook& cb, int budget,
                              const SystemConfig& sys, RandomStream* noise) {
  const CodebookLayout& L = cb.layout();
  if (budget < 1 + L.n_distance)
    throw InvalidArgument("two_stage_search: budget below the minimum");
  const int angle_budget = budget - L.n_distance;

  // Densest decimated angle grid within budget; prefer near-square grids.
  int best_a = 1, best_b = 1;
  for (int a = 1; a <= std::min(L.n_azimuth, angle_budget); ++a) {
    const int b = std::min(L.n_elevation, angle_budget / a);
    if (b < 1) continue;
    const int prod = a * b;
    const int cur = best_a * best_b;
    if (prod > cur ||
        (prod == cur && (std::abs(a - b) < std::abs(best_a - best_b) ||
                         (std::abs(a - b) == std::abs(best_a - best_b) &&
                          a < best_a))))
      best_a = a, best_b = b;
  }

  auto decimate = [](int count, int total) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t)
      idx.push_back(1 + (t * total) / count);  // strictly increasing, 1-based
    return idx;
  };
  const auto az = decimate(best_a, L.n_azimuth);
  const auto el = decimate(best_b, L.n_elevation);

  int pilots = 0;
  BestProbe best;
  for (int i : az)
    for (int j : el) {
      BeamTriplet t{i, j, L.n_distance};
      best.offer(measure_power(t, snap, cb, sys, noise), t);
      ++pilots;
    }
  const BeamTriplet angle = best.triplet;
  for (int q = 1; q <= L.n_distance; ++q) {
    BeamTriplet t{angle.azimuth, angle.elevation, q};
    best.offer(measure_power(t, snap, cb, sys, noise), t);
    ++pilots;
  }
  if (pilots > budget)
    throw std::logic_error("two_stage_search: budget accounting error");
  return {best.triplet, pilots};
}

}  // namespace nfbeam
