// SPDX-License-Identifier: Apache-2.0
#include "nfbeam/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "binary_io.hpp"
#include "json_util.hpp"
#include "nfbeam/rng.hpp"

namespace nfbeam {

namespace {

constexpr char kDatasetMagic[] = "NFBDSET1";

// Start positions are drawn inside the codebook's angular footprint at
// mid-range so every archetype begins well-covered, then clamped to bounds
// by rejection.
constexpr double kStartAzMaxDeg = 50.0;
constexpr double kStartElMaxDeg = 15.0;
constexpr double kStartRangeMin = 5.2;
constexpr double kStartRangeMax = 8.2;

struct SceneSplits {
  int n_train = 0, n_val = 0, n_test = 0;
  Split of(int scene_id) const {
    if (scene_id < n_train) return Split::kTrain;
    if (scene_id < n_train + n_val) return Split::kVal;
    return Split::kTest;
  }
};

SceneSplits split_scenes(int n_scenes) {
  SceneSplits s;
  s.n_train = std::max(1, (6 * n_scenes) / 10);
  s.n_val = (n_scenes - s.n_train + 1) / 2;
  s.n_test = n_scenes - s.n_train - s.n_val;
  return s;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  throw InvalidArgument("split_name: unknown split");
}

void DatasetConfig::validate() const {
  if (n_episodes < 1) throw InvalidArgument("DatasetConfig: n_episodes >= 1");
  if (n_scenes < 1) throw InvalidArgument("DatasetConfig: n_scenes >= 1");
  if (history_len < 1 || predict_len < 1)
    throw InvalidArgument("DatasetConfig: window lengths must be >= 1");
  if (dt <= 0) throw InvalidArgument("DatasetConfig: dt must be positive");
  if (gps_sigma_m < 0)
    throw InvalidArgument("DatasetConfig: gps sigma must be non-negative");
}

std::vector<int> Dataset::episode_indices(Split split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < episodes.size(); ++i)
    if (episodes[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

Dataset make_dataset(const SystemConfig& system, const PolarCodebook& cb,
                     const DatasetConfig& cfg) {
  cfg.validate();
  system.validate();
  if (cb.num_antennas() != system.num_elements())
    throw InvalidArgument("make_dataset: codebook/panel size mismatch");

  Dataset ds;
  ds.cfg = cfg;
  ds.system = system;
  ds.layout = cb.layout();
  ds.codebook_hash = cb.content_hash();

  const Bounds bounds{};
  for (int s = 0; s < cfg.n_scenes; ++s)
    ds.scenes.push_back(make_scene(cfg.seed, s, bounds));
  const SceneSplits splits = split_scenes(cfg.n_scenes);
  const ArrayGeometry geom = antenna_positions(system);
  const int n_slots = cfg.history_len + cfg.predict_len;

  // Episodes derive all randomness from per-episode child seeds, so the loop
  // parallelizes with byte-identical results.
  ds.episodes.resize(static_cast<std::size_t>(cfg.n_episodes));
  parallel_for(static_cast<std::size_t>(cfg.n_episodes), [&](std::size_t e) {
    const int i = static_cast<int>(e);
    Episode ep;
    ep.scene_id = i % cfg.n_scenes;
    ep.mode_id = (i / cfg.n_scenes) % kNumTrajectoryModes;
    ep.split = splits.of(ep.scene_id);
    ep.episode_seed =
        derive_seed(cfg.seed, StreamKind::kEpisode, static_cast<std::uint64_t>(i));
    const SceneConfig& scene = ds.scenes[static_cast<std::size_t>(ep.scene_id)];

    RandomStream es(ep.episode_seed, StreamKind::kEpisode);
    Vec3 start(6.0, 0.0, 0.0);
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double az = deg2rad(es.uniform(-kStartAzMaxDeg, kStartAzMaxDeg));
      const double el = deg2rad(es.uniform(-kStartElMaxDeg, kStartElMaxDeg));
      const double r = es.uniform(kStartRangeMin, kStartRangeMax);
      const Vec3 candidate =
          r * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                   std::sin(el));
      if (bounds.contains(candidate)) {
        start = candidate;
        break;
      }
    }

    const auto mode = static_cast<TrajectoryMode>(ep.mode_id);
    const std::vector<Vec3> truth =
        generate_trajectory(mode, ModeParams::defaults(mode), start, n_slots,
                            cfg.dt, ep.episode_seed, bounds);
    const std::vector<Vec3> noisy = apply_gps_noise(
        truth, GpsNoiseModel{cfg.gps_sigma_m}, ep.episode_seed, 0);

    ep.history_true.assign(truth.begin(), truth.begin() + cfg.history_len);
    ep.history_noisy.assign(noisy.begin(), noisy.begin() + cfg.history_len);
    ep.horizon.reserve(static_cast<std::size_t>(cfg.predict_len));
    for (int tau = 0; tau < cfg.predict_len; ++tau) {
      const std::size_t t = static_cast<std::size_t>(cfg.history_len + tau);
      SlotRecord rec;
      rec.true_pos = truth[t];
      rec.noisy_pos = noisy[t];
      rec.snapshot =
          synthesize_channel(trace_paths(scene, truth[t], geom, system), system);
      const OracleResult oracle = oracle_optimal(cb, rec.snapshot);
      rec.gt = oracle.triplet;
      rec.oracle_gain = oracle.gain;
      rec.los_blocked = rec.snapshot.los_blocked;
      rec.outage = oracle.outage;
      ep.nlos = ep.nlos || rec.los_blocked;
      ep.horizon.push_back(std::move(rec));
    }
    ds.episodes[e] = std::move(ep);
  });
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& bin_path,
                  const std::string& meta_path) {
  // Sidecar: everything needed to reinterpret the binary payload.
  json meta;
  meta["format"] = "nfbeam-dataset";
  meta["version"] = 1;
  meta["system"] = json::parse(system_config_to_json(ds.system));
  meta["layout"] = {{"n_azimuth", ds.layout.n_azimuth},
                    {"n_elevation", ds.layout.n_elevation},
                    {"n_distance", ds.layout.n_distance},
                    {"azimuth_min_rad", ds.layout.azimuth_min_rad},
                    {"azimuth_max_rad", ds.layout.azimuth_max_rad},
                    {"elevation_min_rad", ds.layout.elevation_min_rad},
                    {"elevation_max_rad", ds.layout.elevation_max_rad},
                    {"r_min_m", ds.layout.r_min_m},
                    {"r_max_m", ds.layout.r_max_m}};
  meta["codebook_hash"] = hex64(ds.codebook_hash);
  meta["config"] = {{"n_episodes", ds.cfg.n_episodes},
                    {"n_scenes", ds.cfg.n_scenes},
                    {"history_len", ds.cfg.history_len},
                    {"predict_len", ds.cfg.predict_len},
                    {"dt", ds.cfg.dt},
                    {"gps_sigma_m", ds.cfg.gps_sigma_m},
                    {"seed", ds.cfg.seed}};
  meta["scenes"] = json::array();
  for (const auto& s : ds.scenes)
    meta["scenes"].push_back(json::parse(scene_to_json(s)));
  json scene_splits = json::array();
  {
    const SceneSplits sp = split_scenes(ds.cfg.n_scenes);
    for (int s = 0; s < ds.cfg.n_scenes; ++s)
      scene_splits.push_back(split_name(sp.of(s)));
  }
  meta["scene_splits"] = scene_splits;
  {
    std::ofstream os(meta_path);
    if (!os) throw IoError("save_dataset: cannot open " + meta_path);
    os << meta.dump(2) << '\n';
    if (!os) throw IoError("save_dataset: write failed for " + meta_path);
  }

  std::ofstream os(bin_path, std::ios::binary);
  if (!os) throw IoError("save_dataset: cannot open " + bin_path);
  os.write(kDatasetMagic, 8);
  bio::put_u32(os, 1);  // payload version
  bio::put_u64(os, ds.cfg.seed);
  bio::put_i32(os, ds.cfg.n_episodes);
  bio::put_i32(os, ds.cfg.n_scenes);
  bio::put_i32(os, ds.cfg.history_len);
  bio::put_i32(os, ds.cfg.predict_len);
  bio::put_f64(os, ds.cfg.dt);
  bio::put_f64(os, ds.cfg.gps_sigma_m);
  bio::put_u64(os, ds.codebook_hash);
  bio::put_i32(os, ds.system.num_elements());
  for (const auto& ep : ds.episodes) {
    bio::put_i32(os, ep.scene_id);
    bio::put_i32(os, ep.mode_id);
    bio::put_u8(os, static_cast<std::uint8_t>(ep.split));
    bio::put_u8(os, ep.nlos ? 1 : 0);
    bio::put_u64(os, ep.episode_seed);
    for (int t = 0; t < ds.cfg.history_len; ++t) {
      for (int c = 0; c < 3; ++c)
        bio::put_f64(os, ep.history_true[static_cast<std::size_t>(t)][c]);
      for (int c = 0; c < 3; ++c)
        bio::put_f64(os, ep.history_noisy[static_cast<std::size_t>(t)][c]);
    }
    for (const auto& rec : ep.horizon) {
      for (int c = 0; c < 3; ++c) bio::put_f64(os, rec.true_pos[c]);
      for (int c = 0; c < 3; ++c) bio::put_f64(os, rec.noisy_pos[c]);
      bio::put_u16(os, static_cast<std::uint16_t>(rec.gt.azimuth));
      bio::put_u16(os, static_cast<std::uint16_t>(rec.gt.elevation));
      bio::put_u16(os, static_cast<std::uint16_t>(rec.gt.distance));
      bio::put_u8(os, rec.los_blocked ? 1 : 0);
      bio::put_u8(os, rec.outage ? 1 : 0);
      bio::put_f64(os, rec.oracle_gain);
      bio::put_u32(os, static_cast<std::uint32_t>(rec.snapshot.h.size()));
      for (Eigen::Index m = 0; m < rec.snapshot.h.size(); ++m) {
        bio::put_f64(os, rec.snapshot.h[m].real());
        bio::put_f64(os, rec.snapshot.h[m].imag());
      }
    }
  }
  if (!os) throw IoError("save_dataset: write failed for " + bin_path);
}

Dataset load_dataset(const std::string& bin_path,
                     const std::string& meta_path) {
  Dataset ds;
  {
    std::ifstream is(meta_path);
    if (!is) throw IoError("load_dataset: cannot open " + meta_path);
    std::ostringstream buf;
    buf << is.rdbuf();
    const json meta = parse_json(buf.str(), "dataset meta");
    if (meta.value("format", "") != "nfbeam-dataset")
      throw IoError("load_dataset: not a dataset meta file: " + meta_path);
    ds.system = system_config_from_json(meta.at("system").dump());
    const auto& jl = meta.at("layout");
    ds.layout.n_azimuth = jl.at("n_azimuth").get<int>();
    ds.layout.n_elevation = jl.at("n_elevation").get<int>();
    ds.layout.n_distance = jl.at("n_distance").get<int>();
    ds.layout.azimuth_min_rad = jl.at("azimuth_min_rad").get<double>();
    ds.layout.azimuth_max_rad = jl.at("azimuth_max_rad").get<double>();
    ds.layout.elevation_min_rad = jl.at("elevation_min_rad").get<double>();
    ds.layout.elevation_max_rad = jl.at("elevation_max_rad").get<double>();
    ds.layout.r_min_m = jl.at("r_min_m").get<double>();
    ds.layout.r_max_m = jl.at("r_max_m").get<double>();
    const auto& jc = meta.at("config");
    ds.cfg.n_episodes = jc.at("n_episodes").get<int>();
    ds.cfg.n_scenes = jc.at("n_scenes").get<int>();
    ds.cfg.history_len = jc.at("history_len").get<int>();
    ds.cfg.predict_len = jc.at("predict_len").get<int>();
    ds.cfg.dt = jc.at("dt").get<double>();
    ds.cfg.gps_sigma_m = jc.at("gps_sigma_m").get<double>();
    ds.cfg.seed = jc.at("seed").get<std::uint64_t>();
    for (const auto& js : meta.at("scenes"))
      ds.scenes.push_back(scene_from_json(js.dump()));
  }

  std::ifstream is(bin_path, std::ios::binary);
  if (!is) throw IoError("load_dataset: cannot open " + bin_path);
  bio::expect_magic(is, kDatasetMagic, "dataset");
  if (bio::get_u32(is, "dataset version") != 1)
    throw IoError("load_dataset: unsupported payload version");
  if (bio::get_u64(is, "dataset seed") != ds.cfg.seed)
    throw IoError("load_dataset: meta/binary seed mismatch");
  const int n_episodes = bio::get_i32(is, "dataset counts");
  const int n_scenes = bio::get_i32(is, "dataset counts");
  const int history = bio::get_i32(is, "dataset counts");
  const int predict = bio::get_i32(is, "dataset counts");
  if (n_episodes != ds.cfg.n_episodes || n_scenes != ds.cfg.n_scenes ||
      history != ds.cfg.history_len || predict != ds.cfg.predict_len)
    throw IoError("load_dataset: meta/binary shape mismatch");
  bio::get_f64(is, "dataset dt");
  bio::get_f64(is, "dataset sigma");
  ds.codebook_hash = bio::get_u64(is, "dataset codebook hash");
  const int m_elements = bio::get_i32(is, "dataset antennas");
  if (m_elements != ds.system.num_elements())
    throw IoError("load_dataset: panel size mismatch");

  ds.episodes.reserve(static_cast<std::size_t>(n_episodes));
  for (int i = 0; i < n_episodes; ++i) {
    Episode ep;
    ep.scene_id = bio::get_i32(is, "episode header");
    ep.mode_id = bio::get_i32(is, "episode header");
    const std::uint8_t split = bio::get_u8(is, "episode header");
    if (split > 2) throw IoError("load_dataset: bad split tag");
    ep.split = static_cast<Split>(split);
    ep.nlos = bio::get_u8(is, "episode header") != 0;
    ep.episode_seed = bio::get_u64(is, "episode header");
    if (ep.scene_id < 0 || ep.scene_id >= n_scenes)
      throw IoError("load_dataset: scene id out of range");
    ep.history_true.resize(static_cast<std::size_t>(history));
    ep.history_noisy.resize(static_cast<std::size_t>(history));
    for (int t = 0; t < history; ++t) {
      for (int c = 0; c < 3; ++c)
        ep.history_true[static_cast<std::size_t>(t)][c] =
            bio::get_f64(is, "history");
      for (int c = 0; c < 3; ++c)
        ep.history_noisy[static_cast<std::size_t>(t)][c] =
            bio::get_f64(is, "history");
    }
    ep.horizon.resize(static_cast<std::size_t>(predict));
    for (int tau = 0; tau < predict; ++tau) {
      SlotRecord& rec = ep.horizon[static_cast<std::size_t>(tau)];
      for (int c = 0; c < 3; ++c) rec.true_pos[c] = bio::get_f64(is, "slot");
      for (int c = 0; c < 3; ++c) rec.noisy_pos[c] = bio::get_f64(is, "slot");
      rec.gt.azimuth = bio::get_u16(is, "slot");
      rec.gt.elevation = bio::get_u16(is, "slot");
      rec.gt.distance = bio::get_u16(is, "slot");
      rec.los_blocked = bio::get_u8(is, "slot") != 0;
      rec.outage = bio::get_u8(is, "slot") != 0;
      rec.oracle_gain = bio::get_f64(is, "slot");
      const std::uint32_t h_size = bio::get_u32(is, "slot");
      if (h_size != static_cast<std::uint32_t>(m_elements))
        throw IoError("load_dataset: channel length mismatch");
      rec.snapshot.h.resize(h_size);
      for (std::uint32_t m = 0; m < h_size; ++m) {
        const double re = bio::get_f64(is, "channel");
        const double im = bio::get_f64(is, "channel");
        rec.snapshot.h[m] = Complex(re, im);
      }
      rec.snapshot.los_blocked = rec.los_blocked;
      // Paths are not persisted; an all-zero response marks the outage.
      if (!rec.outage) rec.snapshot.paths.resize(1);
    }
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

ModelInputs make_model_inputs(const Dataset& ds, int episode_index,
                              const ModelConfig& model_cfg,
                              const CameraIntrinsics& cam) {
  if (episode_index < 0 ||
      episode_index >= static_cast<int>(ds.episodes.size()))
    throw InvalidArgument("make_model_inputs: episode index out of range");
  const Episode& ep = ds.episodes[static_cast<std::size_t>(episode_index)];
  if (static_cast<int>(ep.history_noisy.size()) != model_cfg.history_len)
    throw InvalidArgument("make_model_inputs: history length mismatch");

  ModelInputs in;
  in.kin_features = encode_kinematics(ep.history_noisy, ds.cfg.dt).features;
  in.query_pos = ep.history_noisy.back();
  in.mode_id = model_cfg.use_mode ? ep.mode_id : -1;
  if (model_cfg.use_image || model_cfg.use_lidar) {
    if (ep.scene_id < 0 || ep.scene_id >= static_cast<int>(ds.scenes.size()))
      throw InvalidArgument("make_model_inputs: scene index out of range");
    // The observation is taken where the terminal actually is; only the
    // attention query below works from the noisy GPS estimate.
    const SensorTokens tok = synth_sensor_tokens(
        ds.scenes[static_cast<std::size_t>(ep.scene_id)],
        ep.history_true.back(), cam, model_cfg, ds.cfg.seed);
    if (model_cfg.use_image) {
      const int grid = static_cast<int>(
          std::lround(std::sqrt(double(model_cfg.n_image_tokens))));
      in.image_features = tok.image_features;
      in.image_bias = image_spatial_bias(in.query_pos, cam, grid).bias;
      in.has_image = true;
    }
    if (model_cfg.use_lidar) {
      in.lidar_features = tok.lidar_features;
      in.lidar_bias = lidar_spatial_bias(in.query_pos, tok.lidar_keypoints).bias;
      in.has_lidar = true;
    }
  }
  return in;
}

namespace {

/// Rank-style hit test: bin counts as top-k when fewer than k bins beat it
/// (strictly larger probability, or equal probability at a lower index).
bool in_top_k(const Eigen::MatrixXd& prob, int slot, int gt_bin0, int k) {
  int beaten_by = 0;
  const double p_gt = prob(slot, gt_bin0);
  for (int b = 0; b < prob.cols(); ++b) {
    if (b == gt_bin0) continue;
    if (prob(slot, b) > p_gt || (prob(slot, b) == p_gt && b < gt_bin0))
      ++beaten_by;
  }
  return beaten_by < k;
}

}  // namespace

std::array<double, 3> topk_decomposed(const PredictionBundle& pred,
                                      const Episode& ep, int k) {
  if (k < 1) throw InvalidArgument("topk_decomposed: k must be >= 1");
  std::array<double, 3> hits = {0, 0, 0};
  int active = 0;
  for (std::size_t s = 0; s < ep.horizon.size(); ++s) {
    const SlotRecord& rec = ep.horizon[s];
    if (rec.outage) continue;
    ++active;
    const int slot = static_cast<int>(s);
    hits[0] += in_top_k(pred.prob_azimuth, slot, rec.gt.azimuth - 1, k);
    hits[1] += in_top_k(pred.prob_elevation, slot, rec.gt.elevation - 1, k);
    hits[2] += in_top_k(pred.prob_distance, slot, rec.gt.distance - 1, k);
  }
  if (active == 0) return {0, 0, 0};
  for (auto& h : hits) h /= active;
  return hits;
}

double topk_joint(const PredictionBundle& pred, const Episode& ep, int k,
                  const CodebookLayout& layout) {
  if (k < 1) throw InvalidArgument("topk_joint: k must be >= 1");
  double hits = 0;
  int active = 0;
  for (std::size_t s = 0; s < ep.horizon.size(); ++s) {
    const SlotRecord& rec = ep.horizon[s];
    if (rec.outage) continue;
    ++active;
    const int slot = static_cast<int>(s);
    const double p_gt = pred.prob_azimuth(slot, rec.gt.azimuth - 1) *
                        pred.prob_elevation(slot, rec.gt.elevation - 1) *
                        pred.prob_distance(slot, rec.gt.distance - 1);
    const int gt_global = triplet_to_global(rec.gt, layout);
    int beaten_by = 0;
    for (int i = 1; i <= layout.n_azimuth && beaten_by < k; ++i) {
      const double pa = pred.prob_azimuth(slot, i - 1);
      for (int j = 1; j <= layout.n_elevation && beaten_by < k; ++j) {
        const double pe = pa * pred.prob_elevation(slot, j - 1);
        for (int q = 1; q <= layout.n_distance; ++q) {
          const double p = pe * pred.prob_distance(slot, q - 1);
          const int g = triplet_to_global({i, j, q}, layout);
          if (g == gt_global) continue;
          if (p > p_gt || (p == p_gt && g < gt_global)) {
            if (++beaten_by >= k) break;
          }
        }
      }
    }
    hits += beaten_by < k ? 1 : 0;
  }
  return active == 0 ? 0.0 : hits / active;
}

double trajectory_mae(const PredictionBundle& pred, const Episode& ep) {
  const int lp = static_cast<int>(ep.horizon.size());
  if (pred.trajectory.rows() != lp)
    throw InvalidArgument("trajectory_mae: horizon length mismatch");
  double acc = 0;
  for (int s = 0; s < lp; ++s)
    acc += (pred.trajectory.row(s).transpose() -
            ep.horizon[static_cast<std::size_t>(s)].true_pos)
               .norm();
  return acc / lp;
}

// --- Experiment runner ----------------------------------------------------

namespace {

enum MethodId {
  kProposedNone = 0,
  kProposedProb,
  kProposedSweep,
  kExhaustive,
  kHierarchical,
  kTwoStage,
  kOracle,
  kNumMethods,
};

const char* method_name(int m) {
  switch (m) {
    case kProposedNone: return "proposed_none";
    case kProposedProb: return "proposed_prob";
    case kProposedSweep: return "proposed_sweep";
    case kExhaustive: return "exhaustive";
    case kHierarchical: return "hierarchical";
    case kTwoStage: return "two_stage";
    case kOracle: return "oracle";
  }
  throw InvalidArgument("method_name: unknown method");
}

bool is_proposed(int m) { return m <= kProposedSweep; }

/// Per-episode aggregate for one method.
struct EpisodeMetrics {
  bool has_beam = false;  // at least one non-outage slot
  double t1i = 0, t1j = 0, t1q = 0, t1_joint = 0, t5_joint = 0;
  double rate = 0, norm_gain = 0;
  double mae = std::numeric_limits<double>::quiet_NaN();
  bool has_pilots = false;
  long long pilots = 0, triggered = 0, slots = 0;
};

struct Accumulator {
  double t1i = 0, t1j = 0, t1q = 0, t1_joint = 0, t5_joint = 0;
  double rate = 0, norm_gain = 0;
  int n_beam = 0;
  double mae = 0;
  int n_mae = 0;
  long long pilots = 0, triggered = 0, slots = 0;
  bool any_pilots = false;

  void add(const EpisodeMetrics& em) {
    if (em.has_beam) {
      t1i += em.t1i;
      t1j += em.t1j;
      t1q += em.t1q;
      t1_joint += em.t1_joint;
      t5_joint += em.t5_joint;
      rate += em.rate;
      norm_gain += em.norm_gain;
      ++n_beam;
    }
    if (std::isfinite(em.mae)) {
      mae += em.mae;
      ++n_mae;
    }
    if (em.has_pilots) {
      pilots += em.pilots;
      triggered += em.triggered;
      slots += em.slots;
      any_pilots = true;
    }
  }

  MetricsRow row(const std::string& method, const std::string& scenario) const {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    MetricsRow r;
    r.method = method;
    r.scenario = scenario;
    r.top1_i = n_beam ? t1i / n_beam : nan;
    r.top1_j = n_beam ? t1j / n_beam : nan;
    r.top1_q = n_beam ? t1q / n_beam : nan;
    r.top1_joint = n_beam ? t1_joint / n_beam : nan;
    r.top5_joint = n_beam ? t5_joint / n_beam : nan;
    r.rate = n_beam ? rate / n_beam : nan;
    r.norm_gain = n_beam ? norm_gain / n_beam : nan;
    r.mae = n_mae ? mae / n_mae : nan;
    r.trigger_rate =
        any_pilots && slots ? static_cast<double>(triggered) / slots : nan;
    r.avg_pilots =
        any_pilots && slots ? static_cast<double>(pilots) / slots : nan;
    return r;
  }
};

}  // namespace

ExperimentResult run_experiment(const Dataset& ds, const BeamPredictor* model,
                                const PolarCodebook& cb,
                                const ExperimentConfig& cfg) {
  if (cfg.run_proposed && model == nullptr)
    throw InvalidArgument("run_experiment: proposed methods need a model");
  if (model && cb.content_hash() != ds.codebook_hash)
    throw InvalidArgument("run_experiment: codebook does not match dataset");
  const auto idx = ds.episode_indices(cfg.split);
  if (idx.empty())
    throw InvalidArgument("run_experiment: requested split is empty");

  std::vector<bool> method_on(kNumMethods, false);
  if (cfg.run_proposed) {
    method_on[kProposedNone] = method_on[kProposedProb] =
        method_on[kProposedSweep] = true;
    method_on[kOracle] = true;
  }
  if (cfg.run_baselines)
    method_on[kExhaustive] = method_on[kHierarchical] = method_on[kTwoStage] =
        true;

  // scenario 0 = overall, 1 = los, 2 = nlos
  Accumulator acc[kNumMethods][3];
  std::vector<double> snr_gains[kNumMethods];  // active-slot gains, overall

  ExperimentResult result;
  const int traced_method =
      cfg.refine.mode == RefinementConfig::Mode::kNone ? kProposedNone
      : cfg.refine.mode == RefinementConfig::Mode::kProbability
          ? kProposedProb
          : kProposedSweep;

  for (int ei : idx) {
    const Episode& ep = ds.episodes[static_cast<std::size_t>(ei)];
    const int scenario = ep.nlos ? 2 : 1;

    PredictionBundle bundle;
    if (cfg.run_proposed)
      bundle = model->predict(make_model_inputs(ds, ei, model->config()));

    for (int m = 0; m < kNumMethods; ++m) {
      if (!method_on[m]) continue;
      EpisodeMetrics em;
      RandomStream noise(cfg.seed, StreamKind::kPilotNoise,
                         (static_cast<std::uint64_t>(m) << 32) |
                             static_cast<std::uint64_t>(ei));
      RefinementConfig refine = cfg.refine;
      refine.mode = m == kProposedNone    ? RefinementConfig::Mode::kNone
                    : m == kProposedProb  ? RefinementConfig::Mode::kProbability
                    : m == kProposedSweep ? RefinementConfig::Mode::kPilotSweep
                                          : refine.mode;

      int active = 0;
      for (int slot = 0; slot < static_cast<int>(ep.horizon.size()); ++slot) {
        const SlotRecord& rec = ep.horizon[static_cast<std::size_t>(slot)];

        BeamTriplet chosen;
        bool triggered = false;
        int pilots = 0;
        if (is_proposed(m)) {
          const RefinementOutcome ro = refine_slot(
              bundle, slot, rec.snapshot, cb, ds.system, refine, noise);
          chosen = ro.triplet;
          triggered = ro.triggered;
          pilots = ro.pilots_used;
          em.has_pilots = true;
          em.pilots += pilots;
          em.triggered += triggered ? 1 : 0;
          em.slots += 1;
        } else if (m == kOracle) {
          chosen = rec.gt;
        } else {
          SearchResult sr;
          if (m == kExhaustive)
            sr = exhaustive_search(rec.snapshot, cb, ds.system, &noise);
          else if (m == kHierarchical)
            sr = hierarchical_search(rec.snapshot, cb, cfg.budget, ds.system,
                                     &noise);
          else
            sr = two_stage_search(rec.snapshot, cb, cfg.budget, ds.system,
                                  &noise);
          chosen = sr.triplet;
          pilots = sr.pilots_used;
          em.has_pilots = true;
          em.pilots += pilots;
          em.slots += 1;
        }

        const double gain =
            rec.outage ? 0.0
            : m == kOracle
                ? rec.oracle_gain
                : cb.gain(triplet_to_global(chosen, cb.layout()),
                          rec.snapshot.h);
        if (m == traced_method && cfg.run_proposed) {
          OutcomeRecord oc;
          oc.episode = ei;
          oc.slot = slot;
          oc.scene = ep.scene_id;
          oc.mode = ep.mode_id;
          oc.triggered = triggered;
          oc.pilots = pilots;
          oc.beam = chosen;
          oc.gt = rec.gt;
          oc.gain = gain;
          oc.oracle_gain = rec.oracle_gain;
          oc.rate = achievable_rate(gain, ds.system);
          oc.los = !rec.los_blocked;
          result.outcomes.push_back(oc);
        }
        if (rec.outage) continue;
        ++active;
        em.t1i += chosen.azimuth == rec.gt.azimuth;
        em.t1j += chosen.elevation == rec.gt.elevation;
        em.t1q += chosen.distance == rec.gt.distance;
        em.t1_joint += chosen == rec.gt;
        em.rate += achievable_rate(gain, ds.system);
        em.norm_gain += rec.oracle_gain > 0 ? gain / rec.oracle_gain : 0.0;
        if (!cfg.snr_db.empty())
          snr_gains[m].push_back(gain);
      }

      if (active > 0) {
        em.has_beam = true;
        em.t1i /= active;
        em.t1j /= active;
        em.t1q /= active;
        em.t1_joint /= active;
        em.rate /= active;
        em.norm_gain /= active;
        // Refinement replaces only the top-1 pick; the top-5 ranking metric
        // always comes from the head probabilities. Sweeps produce a single
        // candidate, so their top-5 degenerates to top-1.
        em.t5_joint = is_proposed(m) ? topk_joint(bundle, ep, 5, cb.layout())
                                     : em.t1_joint;
      }
      if (is_proposed(m)) em.mae = trajectory_mae(bundle, ep);

      acc[m][0].add(em);
      acc[m][scenario].add(em);
    }
  }

  const char* scenario_names[3] = {"overall", "los", "nlos"};
  for (int m = 0; m < kNumMethods; ++m) {
    if (!method_on[m]) continue;
    for (int s = 0; s < 3; ++s)
      result.rows.push_back(acc[m][s].row(method_name(m), scenario_names[s]));
  }

  for (double snr_db : cfg.snr_db) {
    const double sigma2 = ds.system.tx_power_watts / std::pow(10.0, snr_db / 10.0);
    SystemConfig sys = ds.system;
    sys.noise_variance = sigma2;
    for (int m = 0; m < kNumMethods; ++m) {
      if (!method_on[m] || snr_gains[m].empty()) continue;
      double rate = 0;
      for (double g : snr_gains[m]) rate += achievable_rate(g, sys);
      result.rate_rows.push_back(
          {method_name(m), snr_db, rate / snr_gains[m].size()});
    }
  }
  return result;
}

// --- Writers ---------------------------------------------------------------

namespace {

void write_cell(std::ostream& os, double v) {
  if (std::isnan(v)) {
    os << "nan";
  } else {
    os << v;
  }
}

}  // namespace

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("write_metrics_csv: cannot open " + path);
  os << "method,scenario,top1_i,top1_j,top1_q,top1_joint,top5_joint,rate,"
        "norm_gain,mae,trigger_rate,avg_pilots\n";
  os << std::setprecision(12);
  for (const auto& r : rows) {
    os << r.method << ',' << r.scenario << ',';
    write_cell(os, r.top1_i); os << ',';
    write_cell(os, r.top1_j); os << ',';
    write_cell(os, r.top1_q); os << ',';
    write_cell(os, r.top1_joint); os << ',';
    write_cell(os, r.top5_joint); os << ',';
    write_cell(os, r.rate); os << ',';
    write_cell(os, r.norm_gain); os << ',';
    write_cell(os, r.mae); os << ',';
    write_cell(os, r.trigger_rate); os << ',';
    write_cell(os, r.avg_pilots); os << '\n';
  }
  if (!os) throw IoError("write_metrics_csv: write failed for " + path);
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_metrics_csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line))
    throw IoError("read_metrics_csv: empty file " + path);
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 12)
      throw IoError("read_metrics_csv: malformed row in " + path);
    auto num = [](const std::string& s) {
      return s == "nan" ? std::numeric_limits<double>::quiet_NaN()
                        : std::stod(s);
    };
    MetricsRow r;
    r.method = cells[0];
    r.scenario = cells[1];
    r.top1_i = num(cells[2]);
    r.top1_j = num(cells[3]);
    r.top1_q = num(cells[4]);
    r.top1_joint = num(cells[5]);
    r.top5_joint = num(cells[6]);
    r.rate = num(cells[7]);
    r.norm_gain = num(cells[8]);
    r.mae = num(cells[9]);
    r.trigger_rate = num(cells[10]);
    r.avg_pilots = num(cells[11]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_outcomes_jsonl(const std::string& path,
                          const std::vector<OutcomeRecord>& outcomes) {
  std::ofstream os(path);
  if (!os) throw IoError("write_outcomes_jsonl: cannot open " + path);
  for (const auto& oc : outcomes) {
    json j;
    j["episode"] = oc.episode;
    j["slot"] = oc.slot;
    j["scene"] = oc.scene;
    j["mode"] = oc.mode;
    j["triggered"] = oc.triggered;
    j["pilots"] = oc.pilots;
    j["beam"] = {oc.beam.azimuth, oc.beam.elevation, oc.beam.distance};
    j["gt"] = {oc.gt.azimuth, oc.gt.elevation, oc.gt.distance};
    j["gain"] = oc.gain;
    j["oracle_gain"] = oc.oracle_gain;
    j["rate"] = oc.rate;
    j["los"] = oc.los;
    os << j.dump() << '\n';
  }
  if (!os) throw IoError("write_outcomes_jsonl: write failed for " + path);
}

void write_rate_csv(const std::string& path,
                    const std::vector<RateCurveRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("write_rate_csv: cannot open " + path);
  os << "method,snr_db,rate\n";
  os << std::setprecision(12);
  for (const auto& r : rows)
    os << r.method << ',' << r.snr_db << ',' << r.rate << '\n';
  if (!os) throw IoError("write_rate_csv: write failed for " + path);
}

std::string format_report(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "method" << std::setw(9) << "scenario"
     << std::right << std::setw(9) << "top1_jnt" << std::setw(9) << "top5_jnt"
     << std::setw(9) << "rate" << std::setw(10) << "norm_gain" << std::setw(8)
     << "mae" << std::setw(9) << "trigger" << std::setw(10) << "avg_pil"
     << '\n';
  os << std::string(89, '-') << '\n';
  os << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.method << std::setw(9) << r.scenario
       << std::right << std::setw(9) << r.top1_joint << std::setw(9)
       << r.top5_joint << std::setw(9) << r.rate << std::setw(10)
       << r.norm_gain << std::setw(8) << r.mae << std::setw(9)
       << r.trigger_rate << std::setw(10) << r.avg_pilots << '\n';
  }
  return os.str();
}

}  // namespace nfbeam
