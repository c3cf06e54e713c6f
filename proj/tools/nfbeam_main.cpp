// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: dataset synthesis, codebook construction, model
// training, evaluation, baseline sweeps and report formatting. All verbs
// exit 0 on success and nonzero with a one-line error JSON on stderr.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "nfbeam/codebook.hpp"
#include "nfbeam/evalharness.hpp"
#include "nfbeam/inference.hpp"
#include "nfbeam/predictor.hpp"
#include "nfbeam/sysgeo.hpp"
#include "nfbeam/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nfbeam;

namespace {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  json j = json::parse(buf.str(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("malformed JSON in config file " + path);
  if (!j.is_object()) throw InvalidArgument("config root must be a JSON object");
  return j;
}

SystemConfig parse_system(const json& cfg) {
  if (!cfg.contains("system")) return SystemConfig{};
  return system_config_from_json(cfg.at("system").dump());
}

CodebookLayout parse_layout(const json& cfg) {
  CodebookLayout lay;
  if (!cfg.contains("codebook")) return lay;
  const json& j = cfg.at("codebook");
  lay.n_azimuth = j.value("n_azimuth", lay.n_azimuth);
  lay.n_elevation = j.value("n_elevation", lay.n_elevation);
  lay.n_distance = j.value("n_distance", lay.n_distance);
  lay.azimuth_min_rad =
      deg2rad(j.value("azimuth_min_deg", rad2deg(lay.azimuth_min_rad)));
  lay.azimuth_max_rad =
      deg2rad(j.value("azimuth_max_deg", rad2deg(lay.azimuth_max_rad)));
  lay.elevation_min_rad =
      deg2rad(j.value("elevation_min_deg", rad2deg(lay.elevation_min_rad)));
  lay.elevation_max_rad =
      deg2rad(j.value("elevation_max_deg", rad2deg(lay.elevation_max_rad)));
  lay.r_min_m = j.value("r_min_m", lay.r_min_m);
  lay.r_max_m = j.value("r_max_m", lay.r_max_m);
  return lay;
}

DatasetConfig parse_dataset(const json& cfg,
                            std::optional<std::uint64_t> seed_override) {
  DatasetConfig d;
  if (cfg.contains("dataset")) {
    const json& j = cfg.at("dataset");
    d.n_episodes = j.value("n_episodes", d.n_episodes);
    d.n_scenes = j.value("n_scenes", d.n_scenes);
    d.history_len = j.value("history_len", d.history_len);
    d.predict_len = j.value("predict_len", d.predict_len);
    d.dt = j.value("dt", d.dt);
    d.gps_sigma_m = j.value("gps_sigma_m", d.gps_sigma_m);
    d.seed = j.value("seed", d.seed);
  }
  if (seed_override) d.seed = *seed_override;
  return d;
}

/// Model defaults follow the dataset windows and codebook grid; an explicit
/// "model" config section overrides individual fields.
ModelConfig parse_model(const json& cfg, const CodebookLayout& lay,
                        const DatasetConfig& ds) {
  ModelConfig m;
  m.n_azimuth = lay.n_azimuth;
  m.n_elevation = lay.n_elevation;
  m.n_distance = lay.n_distance;
  m.history_len = ds.history_len;
  m.predict_len = ds.predict_len;
  m.dt = ds.dt;
  if (cfg.contains("model")) {
    const json& j = cfg.at("model");
    m.d_model = j.value("d_model", m.d_model);
    m.d_in = j.value("d_in", m.d_in);
    m.n_blocks = j.value("n_blocks", m.n_blocks);
    m.n_heads = j.value("n_heads", m.n_heads);
    m.history_len = j.value("history_len", m.history_len);
    m.predict_len = j.value("predict_len", m.predict_len);
    m.n_image_tokens = j.value("n_image_tokens", m.n_image_tokens);
    m.n_lidar_tokens = j.value("n_lidar_tokens", m.n_lidar_tokens);
    m.n_modes = j.value("n_modes", m.n_modes);
    m.n_azimuth = j.value("n_azimuth", m.n_azimuth);
    m.n_elevation = j.value("n_elevation", m.n_elevation);
    m.n_distance = j.value("n_distance", m.n_distance);
    m.use_image = j.value("use_image", m.use_image);
    m.use_lidar = j.value("use_lidar", m.use_lidar);
    m.use_mode = j.value("use_mode", m.use_mode);
    m.dt = j.value("dt", m.dt);
  }
  return m;
}

TrainConfig parse_training(const json& cfg,
                           std::optional<std::uint64_t> seed_override) {
  TrainConfig t;
  if (cfg.contains("training")) {
    const json& j = cfg.at("training");
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.adam_beta1 = j.value("adam_beta1", t.adam_beta1);
    t.adam_beta2 = j.value("adam_beta2", t.adam_beta2);
    t.adam_epsilon = j.value("adam_epsilon", t.adam_epsilon);
    t.plateau_patience = j.value("plateau_patience", t.plateau_patience);
    t.lr_decay = j.value("lr_decay", t.lr_decay);
    t.min_learning_rate = j.value("min_learning_rate", t.min_learning_rate);
    t.seed = j.value("seed", t.seed);
    t.partial_freeze = j.value("partial_freeze", t.partial_freeze);
    if (j.contains("loss")) {
      const json& l = j.at("loss");
      t.loss.lambda_traj = l.value("lambda_traj", t.loss.lambda_traj);
      t.loss.lambda_beam = l.value("lambda_beam", t.loss.lambda_beam);
      t.loss.lambda_conf = l.value("lambda_conf", t.loss.lambda_conf);
      t.loss.center_tenths = l.value("center_tenths", t.loss.center_tenths);
      t.loss.neighbor_tenths =
          l.value("neighbor_tenths", t.loss.neighbor_tenths);
      t.loss.kl_epsilon = l.value("kl_epsilon", t.loss.kl_epsilon);
    }
  }
  if (seed_override) t.seed = *seed_override;
  return t;
}

RefinementConfig::Mode parse_refine_mode(const std::string& name) {
  if (name == "none") return RefinementConfig::Mode::kNone;
  if (name == "prob") return RefinementConfig::Mode::kProbability;
  if (name == "sweep") return RefinementConfig::Mode::kPilotSweep;
  throw InvalidArgument("unknown refinement mode: " + name);
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw InvalidArgument("unknown split: " + name);
}

ExperimentConfig parse_experiment(const json& cfg,
                                  std::optional<std::uint64_t> seed_override,
                                  std::optional<int> budget_override,
                                  const std::string& refine_override,
                                  const std::vector<double>& snr_override,
                                  const std::string& split_override) {
  ExperimentConfig e;
  if (cfg.contains("experiment")) {
    const json& j = cfg.at("experiment");
    e.budget = j.value("budget", e.budget);
    e.seed = j.value("seed", e.seed);
    if (j.contains("refine"))
      e.refine.mode = parse_refine_mode(j.at("refine").get<std::string>());
    e.refine.confidence_threshold =
        j.value("confidence_threshold", e.refine.confidence_threshold);
    e.refine.pool_top_k = j.value("pool_top_k", e.refine.pool_top_k);
    if (j.contains("snr_db")) e.snr_db = j.at("snr_db").get<std::vector<double>>();
    if (j.contains("split")) e.split = parse_split(j.at("split").get<std::string>());
  }
  if (seed_override) e.seed = *seed_override;
  if (budget_override) e.budget = *budget_override;
  if (!refine_override.empty()) e.refine.mode = parse_refine_mode(refine_override);
  if (!snr_override.empty()) e.snr_db = snr_override;
  if (!split_override.empty()) e.split = parse_split(split_override);
  return e;
}

PolarCodebook acquire_codebook(const SystemConfig& sys,
                               const CodebookLayout& lay,
                               const fs::path& cache_path, bool force) {
  const std::uint64_t want = codebook_content_hash(sys, lay);
  if (!force && fs::exists(cache_path)) {
    try {
      PolarCodebook cb = load_codebook(cache_path.string());
      if (cb.content_hash() == want) {
        std::cerr << "[nfbeam] codebook cache hit: " << cache_path.string()
                  << " hash=" << hex64(want) << '\n';
        return cb;
      }
      std::cerr << "[nfbeam] codebook cache is stale, rebuilding\n";
    } catch (const std::exception& e) {
      std::cerr << "[nfbeam] codebook cache unreadable (" << e.what()
                << "), rebuilding\n";
    }
  }
  PolarCodebook cb = build_codebook(sys, lay);
  save_codebook(cb, cache_path.string());
  std::cerr << "[nfbeam] codebook built: " << cb.size() << " codewords, hash="
            << hex64(cb.content_hash()) << '\n';
  return cb;
}

Dataset load_dataset_dir(const fs::path& dir) {
  return load_dataset((dir / "dataset.bin").string(),
                      (dir / "dataset.meta.json").string());
}

/// Rebuilds (or loads) the codebook the dataset was labeled with and verifies
/// the content hash recorded in the dataset.
PolarCodebook dataset_codebook(const Dataset& ds, const fs::path& dataset_dir) {
  PolarCodebook cb =
      acquire_codebook(ds.system, ds.layout, dataset_dir / "codebook.bin",
                       /*force=*/false);
  if (cb.content_hash() != ds.codebook_hash)
    throw InvalidArgument("codebook hash mismatch against dataset labels");
  return cb;
}

int count_split(const Dataset& ds, Split s) {
  return static_cast<int>(ds.episode_indices(s).size());
}

// --- Verbs -----------------------------------------------------------------

int cmd_build_codebook(const json& cfg, const std::string& out, bool force) {
  fs::create_directories(out);
  const SystemConfig sys = parse_system(cfg);
  const CodebookLayout lay = parse_layout(cfg);
  const PolarCodebook cb = acquire_codebook(sys, lay, fs::path(out) / "codebook.bin", force);
  json summary = {{"codewords", cb.size()},
                  {"antennas", cb.num_antennas()},
                  {"hash", hex64(cb.content_hash())},
                  {"r_min_m", cb.layout().r_min_m},
                  {"r_max_m", cb.layout().r_max_m},
                  {"rayleigh_m", rayleigh_distance(sys)},
                  {"path", (fs::path(out) / "codebook.bin").string()}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_gen_data(const json& cfg, std::optional<std::uint64_t> seed,
                 const std::string& out) {
  fs::create_directories(out);
  const SystemConfig sys = parse_system(cfg);
  const CodebookLayout lay = parse_layout(cfg);
  const DatasetConfig dcfg = parse_dataset(cfg, seed);
  const PolarCodebook cb =
      acquire_codebook(sys, lay, fs::path(out) / "codebook.bin", false);
  const Dataset ds = make_dataset(sys, cb, dcfg);
  save_dataset(ds, (fs::path(out) / "dataset.bin").string(),
               (fs::path(out) / "dataset.meta.json").string());

  long long outage = 0, nlos_slots = 0, slots = 0;
  int nlos_eps = 0;
  for (const auto& ep : ds.episodes) {
    nlos_eps += ep.nlos;
    for (const auto& rec : ep.horizon) {
      ++slots;
      outage += rec.outage;
      nlos_slots += rec.los_blocked;
    }
  }
  json summary = {{"episodes", ds.cfg.n_episodes},
                  {"scenes", ds.cfg.n_scenes},
                  {"train_episodes", count_split(ds, Split::kTrain)},
                  {"val_episodes", count_split(ds, Split::kVal)},
                  {"test_episodes", count_split(ds, Split::kTest)},
                  {"nlos_episode_fraction",
                   double(nlos_eps) / double(ds.episodes.size())},
                  {"blocked_slot_fraction", double(nlos_slots) / double(slots)},
                  {"outage_slot_fraction", double(outage) / double(slots)},
                  {"codebook_hash", hex64(ds.codebook_hash)},
                  {"path", (fs::path(out) / "dataset.bin").string()}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_train(const json& cfg, std::optional<std::uint64_t> seed,
              const std::string& dataset_dir, const std::string& out,
              const std::string& init_checkpoint) {
  fs::create_directories(out);
  const Dataset ds = load_dataset_dir(dataset_dir);
  const PolarCodebook cb = dataset_codebook(ds, dataset_dir);
  const TrainConfig tc = parse_training(cfg, seed);

  BeamPredictor model = [&] {
    if (!init_checkpoint.empty()) {
      std::string extra;
      BeamPredictor m = BeamPredictor::load_checkpoint(init_checkpoint, &extra);
      return m;
    }
    return BeamPredictor(parse_model(cfg, ds.layout, ds.cfg), tc.seed);
  }();

  const TrainResult result = train_loop(ds, cb, model, tc, &std::cerr);
  write_loss_curve_csv((fs::path(out) / "loss_curve.csv").string(),
                       result.curve);

  json extra = {{"codebook_hash", hex64(cb.content_hash())},
                {"dataset_seed", ds.cfg.seed},
                {"best_epoch", result.best_epoch},
                {"best_val", result.best_val}};
  model.save_checkpoint((fs::path(out) / "checkpoint.bin").string(),
                        extra.dump());

  json summary = {{"epochs", static_cast<int>(result.curve.size())},
                  {"best_epoch", result.best_epoch},
                  {"best_val", result.best_val},
                  {"parameters", model.params().num_scalars()},
                  {"checkpoint", (fs::path(out) / "checkpoint.bin").string()},
                  {"loss_curve", (fs::path(out) / "loss_curve.csv").string()}};
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_eval(const json& cfg, std::optional<std::uint64_t> seed,
             const std::string& dataset_dir, const std::string& checkpoint,
             const std::string& out, std::optional<int> budget,
             const std::string& refine, const std::vector<double>& snr,
             const std::string& split, bool with_baselines) {
  fs::create_directories(out);
  const Dataset ds = load_dataset_dir(dataset_dir);
  const PolarCodebook cb = dataset_codebook(ds, dataset_dir);

  std::string extra_text;
  BeamPredictor model = BeamPredictor::load_checkpoint(checkpoint, &extra_text);
  const json extra = json::parse(extra_text, nullptr, false);
  if (extra.is_object() && extra.contains("codebook_hash") &&
      extra.at("codebook_hash").get<std::string>() != hex64(cb.content_hash()))
    throw InvalidArgument(
        "checkpoint was trained against a different codebook");

  ExperimentConfig ec =
      parse_experiment(cfg, seed, budget, refine, snr, split);
  ec.run_proposed = true;
  ec.run_baselines = with_baselines;
  const ExperimentResult res = run_experiment(ds, &model, cb, ec);

  write_metrics_csv((fs::path(out) / "metrics.csv").string(), res.rows);
  write_outcomes_jsonl((fs::path(out) / "outcomes.jsonl").string(),
                       res.outcomes);
  if (!res.rate_rows.empty())
    write_rate_csv((fs::path(out) / "rate_snr.csv").string(), res.rate_rows);
  std::cout << format_report(res.rows);
  return 0;
}

int cmd_sweep_baselines(const json& cfg, std::optional<std::uint64_t> seed,
                        const std::string& dataset_dir, const std::string& out,
                        std::optional<int> budget,
                        const std::vector<double>& snr,
                        const std::string& split) {
  fs::create_directories(out);
  const Dataset ds = load_dataset_dir(dataset_dir);
  const PolarCodebook cb = dataset_codebook(ds, dataset_dir);

  ExperimentConfig ec = parse_experiment(cfg, seed, budget, "", snr, split);
  ec.run_proposed = false;
  ec.run_baselines = true;
  const ExperimentResult res = run_experiment(ds, nullptr, cb, ec);

  write_metrics_csv((fs::path(out) / "metrics.csv").string(), res.rows);
  if (!res.rate_rows.empty())
    write_rate_csv((fs::path(out) / "rate_snr.csv").string(), res.rate_rows);
  std::cout << format_report(res.rows);
  return 0;
}

int cmd_report(const std::vector<std::string>& paths) {
  std::vector<MetricsRow> rows;
  for (const auto& p : paths) {
    auto part = read_metrics_csv(p);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  std::cout << format_report(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Near-field beam management: data synthesis, training, "
               "evaluation and baselines"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string dataset_dir;
  std::string checkpoint;
  std::string init_checkpoint;
  std::optional<int> budget;
  std::string refine;
  std::vector<double> snr_db;
  std::string split;
  bool force = false;
  bool with_baselines = false;
  std::vector<std::string> report_paths;

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "Override every seed in the config");
    if (needs_out)
      sub->add_option("--out", out, "Output directory")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Synthesize a labeled dataset");
  add_common(gen, true);

  CLI::App* cbk = app.add_subcommand("build-codebook", "Build the polar codebook cache");
  add_common(cbk, true);
  cbk->add_flag("--force", force, "Rebuild even when the cache is fresh");

  CLI::App* trn = app.add_subcommand("train", "Train the beam predictor");
  add_common(trn, true);
  trn->add_option("--dataset", dataset_dir, "Directory holding dataset.bin")
      ->required();
  trn->add_option("--init-checkpoint", init_checkpoint,
                  "Warm-start weights (adaptation)");

  CLI::App* evl = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  add_common(evl, true);
  evl->add_option("--dataset", dataset_dir, "Directory holding dataset.bin")
      ->required();
  evl->add_option("--checkpoint", checkpoint, "Trained model checkpoint")
      ->required();
  evl->add_option("--budget", budget, "Pilot budget for baselines");
  evl->add_option("--refine", refine, "Refinement mode: none|prob|sweep")
      ->check(CLI::IsMember({"none", "prob", "sweep"}));
  evl->add_option("--snr-db", snr_db, "SNR sweep points in dB")
      ->delimiter(',');
  evl->add_option("--split", split, "Episode split: train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}));
  evl->add_flag("--with-baselines", with_baselines,
                "Also run the pilot-sweep baselines");

  CLI::App* swp = app.add_subcommand("sweep-baselines",
                                     "Run the pilot-sweep baselines only");
  add_common(swp, true);
  swp->add_option("--dataset", dataset_dir, "Directory holding dataset.bin")
      ->required();
  swp->add_option("--budget", budget, "Pilot budget");
  swp->add_option("--snr-db", snr_db, "SNR sweep points in dB")->delimiter(',');
  swp->add_option("--split", split, "Episode split: train|val|test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  CLI::App* rpt = app.add_subcommand("report", "Format metrics.csv files");
  rpt->add_option("paths", report_paths, "metrics.csv files")
      ->required()
      ->expected(-1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    json err = {{"error", {{"type", "usage"}, {"message", e.what()}}}};
    std::cerr << err.dump() << '\n';
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    const json cfg = load_config(config_path);
    if (gen->parsed()) return cmd_gen_data(cfg, seed, out);
    if (cbk->parsed()) return cmd_build_codebook(cfg, out, force);
    if (trn->parsed())
      return cmd_train(cfg, seed, dataset_dir, out, init_checkpoint);
    if (evl->parsed())
      return cmd_eval(cfg, seed, dataset_dir, checkpoint, out, budget, refine,
                      snr_db, split, with_baselines);
    if (swp->parsed())
      return cmd_sweep_baselines(cfg, seed, dataset_dir, out, budget, snr_db,
                                 split);
    if (rpt->parsed()) return cmd_report(report_paths);
    throw InvalidArgument("no subcommand given");
  } catch (const InvalidArgument& e) {
    json err = {{"error", {{"type", "invalid_argument"}, {"message", e.what()}}}};
    std::cerr << err.dump() << '\n';
    return 2;
  } catch (const IoError& e) {
    json err = {{"error", {{"type", "io"}, {"message", e.what()}}}};
    std::cerr << err.dump() << '\n';
    return 3;
  } catch (const TrainingDiverged& e) {
    json err = {{"error", {{"type", "training_diverged"}, {"message", e.what()}}}};
    std::cerr << err.dump() << '\n';
    return 4;
  } catch (const std::exception& e) {
    json err = {{"error", {{"type", "internal"}, {"message", e.what()}}}};
    std::cerr << err.dump() << '\n';
    return 1;
  }
}
