// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "nfbeam/predictor.hpp"
#include "nfbeam/rng.hpp"
#include "nfbeam/sysgeo.hpp"

using namespace nfbeam;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_in = 8;
  cfg.n_blocks = 2;
  cfg.n_heads = 2;
  cfg.history_len = 4;
  cfg.predict_len = 3;
  cfg.n_image_tokens = 4;  // 2 x 2 grid
  cfg.n_lidar_tokens = 5;
  cfg.n_azimuth = 6;
  cfg.n_elevation = 5;
  cfg.n_distance = 4;
  return cfg;
}

ModelInputs tiny_inputs(const ModelConfig& cfg, std::uint64_t seed = 5,
                        bool with_sensors = true) {
  RandomStream rs(seed, 2);
  ModelInputs in;
  in.kin_features = Eigen::MatrixXd::Zero(cfg.history_len, 9);
  for (int t = 0; t < cfg.history_len; ++t)
    for (int c = 0; c < 9; ++c) in.kin_features(t, c) = rs.uniform(-1.0, 1.0);
  in.query_pos = Vec3(5.0, 1.0, -0.5);
  in.mode_id = 2;
  if (with_sensors) {
    in.has_image = true;
    in.has_lidar = true;
    in.image_features = Eigen::MatrixXd::Zero(cfg.n_image_tokens, cfg.d_in);
    in.lidar_features = Eigen::MatrixXd::Zero(cfg.n_lidar_tokens, cfg.d_in);
    for (int i = 0; i < in.image_features.size(); ++i)
      in.image_features.data()[i] = rs.uniform(-1.0, 1.0);
    for (int i = 0; i < in.lidar_features.size(); ++i)
      in.lidar_features.data()[i] = rs.uniform(-1.0, 1.0);
    in.image_bias = Eigen::RowVectorXd::Zero(cfg.n_image_tokens);
    in.lidar_bias = Eigen::RowVectorXd::Zero(cfg.n_lidar_tokens);
  }
  return in;
}

}  // namespace

TEST_CASE("encode_kinematics builds finite differences with zero-filled head") {
  std::vector<Vec3> pos = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 1)};
  const KinematicSequence seq = encode_kinematics(pos, 0.5);
  REQUIRE(seq.features.rows() == 3);
  REQUIRE(seq.features.cols() == 9);
  // Row 0: position only.
  CHECK(seq.features.row(0).segment(3, 6).norm() == 0.0);
  CHECK((seq.features.row(0).head(3).transpose() - pos[0]).norm() == 0.0);
  // Velocity = delta p / dt; acceleration = delta v / dt.
  CHECK(seq.features(1, 3) == doctest::Approx(2.0));
  CHECK(seq.features(1, 8) == 0.0);
  CHECK(seq.features(2, 3) == doctest::Approx(4.0));
  CHECK(seq.features(2, 5) == doctest::Approx(2.0));
  CHECK(seq.features(2, 6) == doctest::Approx((4.0 - 2.0) / 0.5));
  CHECK(seq.features(2, 8) == doctest::Approx((2.0 - 0.0) / 0.5));

  CHECK_THROWS_AS(encode_kinematics({}, 0.1), InvalidArgument);
  CHECK_THROWS_AS(encode_kinematics(pos, 0.0), InvalidArgument);
}

TEST_CASE("image_spatial_bias peaks at the projected patch") {
  const CameraIntrinsics cam;
  // Terminal straight ahead projects to the image center: the middle patch
  // of a 7x7 grid gets bias exactly 0, everything else is negative.
  const SpatialBias b = image_spatial_bias(Vec3(5, 0, 0), cam, 7, 32.0);
  REQUIRE(b.bias.cols() == 49);
  CHECK_FALSE(b.degenerate);
  CHECK(b.bias[3 * 7 + 3] == 0.0);
  for (int i = 0; i < 49; ++i)
    if (i != 24) CHECK(b.bias[i] < 0.0);

  // Hand oracle for one off-center terminal: pixel projection and squared
  // distance to a chosen patch center.
  const Vec3 uav(4.0, -1.0, 0.5);
  const SpatialBias b2 = image_spatial_bias(uav, cam, 7, 32.0);
  const double px = cam.cx + cam.fx * (-uav.y() / uav.x());
  const double py = cam.cy + cam.fy * (-uav.z() / uav.x());
  const int r = 2, c = 4;
  const double u = (c + 0.5) * cam.width / 7.0;
  const double v = (r + 0.5) * cam.height / 7.0;
  const double want = -((px - u) * (px - u) + (py - v) * (py - v)) /
                      (2.0 * 32.0 * 32.0);
  CHECK(b2.bias[r * 7 + c] == doctest::Approx(want).epsilon(1e-12));

  // Behind the image plane: degenerate, all-zero bias.
  const SpatialBias bad = image_spatial_bias(Vec3(0.05, 1, 0), cam, 7, 32.0);
  CHECK(bad.degenerate);
  CHECK(bad.bias.norm() == 0.0);

  CHECK_THROWS_AS(image_spatial_bias(Vec3(5, 0, 0), cam, 0, 32.0),
                  InvalidArgument);
  CHECK_THROWS_AS(image_spatial_bias(Vec3(5, 0, 0), cam, 7, 0.0),
                  InvalidArgument);
}

TEST_CASE("lidar_spatial_bias is negative range over rho") {
  Eigen::Matrix3Xd kp(3, 3);
  kp.col(0) = Vec3(1, 0, 0);
  kp.col(1) = Vec3(0, 2, 0);
  kp.col(2) = Vec3(3, 4, 0);
  const Vec3 uav(0, 0, 0);
  const SpatialBias b = lidar_spatial_bias(uav, kp, 5.0);
  CHECK(b.bias[0] == doctest::Approx(-1.0 / 5.0));
  CHECK(b.bias[1] == doctest::Approx(-2.0 / 5.0));
  CHECK(b.bias[2] == doctest::Approx(-5.0 / 5.0));
  CHECK_FALSE(b.degenerate);
  CHECK_THROWS_AS(lidar_spatial_bias(uav, kp, 0.0), InvalidArgument);
}

TEST_CASE("synth_sensor_tokens: deterministic, well-formed, surface-bound") {
  const ModelConfig cfg = tiny_config();
  const CameraIntrinsics cam;
  const SceneConfig scene = make_scene(33, 1);
  const Vec3 uav(6.0, 0.5, 0.3);

  const SensorTokens a = synth_sensor_tokens(scene, uav, cam, cfg, 12);
  const SensorTokens b = synth_sensor_tokens(scene, uav, cam, cfg, 12);
  CHECK((a.image_features - b.image_features).norm() == 0.0);
  CHECK((a.lidar_features - b.lidar_features).norm() == 0.0);
  CHECK((a.lidar_keypoints - b.lidar_keypoints).norm() == 0.0);
  const SensorTokens c = synth_sensor_tokens(scene, uav, cam, cfg, 13);
  CHECK((a.lidar_keypoints - c.lidar_keypoints).norm() != 0.0);

  REQUIRE(a.image_features.rows() == cfg.n_image_tokens);
  REQUIRE(a.image_features.cols() == cfg.d_in);
  const int det = cfg.d_in - 4;
  for (int i = 0; i < cfg.n_image_tokens; ++i) {
    const double hit_blocker = a.image_features(i, 0);
    const double hit_facet = a.image_features(i, 1);
    CHECK((hit_blocker == 0.0 || hit_blocker == 1.0));
    CHECK((hit_facet == 0.0 || hit_facet == 1.0));
    CHECK(hit_blocker + hit_facet <= 1.0);  // at most one surface class
    CHECK(a.image_features(i, 2) >= 0.0);
    CHECK(a.image_features(i, 2) <= 1.0);
    // Position code entries are sines/cosines.
    for (int col = 3; col < det; ++col) {
      CHECK(a.image_features(i, col) >= -1.0);
      CHECK(a.image_features(i, col) <= 1.0);
    }
  }

  // Terminal detection: recompute the pinhole projection by hand. With the
  // default camera and a 2 x 2 grid the point lands in the upper-left patch.
  const int grid = 2;
  const double px = cam.cx + cam.fx * (-uav.y() / uav.x());
  const double py = cam.cy + cam.fy * (-uav.z() / uav.x());
  const double cell_w = double(cam.width) / grid;
  const double cell_h = double(cam.height) / grid;
  const int want_c = static_cast<int>(px / cell_w);
  const int want_r = static_cast<int>(py / cell_h);
  REQUIRE(want_c == 0);
  REQUIRE(want_r == 0);
  CHECK(a.image_features.col(det).sum() == 1.0);  // exactly one detection
  const int hit_row = want_r * grid + want_c;
  CHECK(a.image_features(hit_row, det) == 1.0);
  CHECK(a.image_features(hit_row, det + 1) ==
        doctest::Approx(px / cell_w - (want_c + 0.5)).epsilon(1e-12));
  CHECK(a.image_features(hit_row, det + 2) ==
        doctest::Approx(py / cell_h - (want_r + 0.5)).epsilon(1e-12));
  CHECK(a.image_features(hit_row, det + 3) ==
        doctest::Approx(uav.norm() / 20.0).epsilon(1e-12));
  CHECK(std::abs(a.image_features(hit_row, det + 1)) <= 0.5);
  CHECK(std::abs(a.image_features(hit_row, det + 2)) <= 0.5);

  // Moving the terminal shifts only the detection block, not the scene
  // channels; a point behind the image plane leaves no detection at all.
  const SensorTokens d = synth_sensor_tokens(scene, Vec3(5, -2, -1), cam,
                                             cfg, 12);
  CHECK((a.image_features.leftCols(det) - d.image_features.leftCols(det))
            .norm() == 0.0);
  CHECK(d.image_features(3, det) == 1.0);  // lower-right patch
  CHECK(d.image_features.col(det).sum() == 1.0);
  const SensorTokens behind =
      synth_sensor_tokens(scene, Vec3(0.05, 1, 0), cam, cfg, 12);
  CHECK(behind.image_features.rightCols(4).norm() == 0.0);

  REQUIRE(a.lidar_keypoints.cols() == cfg.n_lidar_tokens);
  for (int i = 0; i < cfg.n_lidar_tokens; ++i) {
    const Vec3 kp = a.lidar_keypoints.col(i);
    // The sample must lie on one of the scene surfaces: a blocker face or a
    // reflector plane.
    bool on_surface = false;
    for (const auto& box : scene.blockers) {
      bool inside = true;
      bool on_face = false;
      for (int ax = 0; ax < 3; ++ax) {
        inside = inside && kp[ax] >= box.min[ax] - 1e-9 &&
                 kp[ax] <= box.max[ax] + 1e-9;
        on_face = on_face || std::abs(kp[ax] - box.min[ax]) < 1e-9 ||
                  std::abs(kp[ax] - box.max[ax]) < 1e-9;
      }
      on_surface = on_surface || (inside && on_face);
    }
    for (const auto& f : scene.reflectors)
      on_surface =
          on_surface ||
          (std::abs((kp - f.corners[0]).dot(f.normal())) < 1e-9 &&
           f.contains_on_plane(kp, 1e-6));
    CHECK(on_surface);
    // Unit surface normal and clipped range feature.
    CHECK(a.lidar_features.row(i).head(3).norm() == doctest::Approx(1.0));
    CHECK(a.lidar_features(i, 3) ==
          doctest::Approx(std::min(kp.norm() / 20.0, 1.0)));
  }

  // Empty scene: occupancy channels are all zero (nothing to see but the
  // terminal) and keypoints fall back to the service-volume shell.
  SceneConfig empty;
  const SensorTokens e = synth_sensor_tokens(empty, uav, cam, cfg, 12);
  CHECK(e.image_features.leftCols(3).norm() == 0.0);
  CHECK(e.image_features.col(det).sum() == 1.0);
  for (int i = 0; i < cfg.n_lidar_tokens; ++i) {
    const Vec3 kp = e.lidar_keypoints.col(i);
    bool on_shell = false;
    for (int ax = 0; ax < 3; ++ax)
      on_shell = on_shell || std::abs(kp[ax] - empty.bounds.min[ax]) < 1e-9 ||
                 std::abs(kp[ax] - empty.bounds.max[ax]) < 1e-9;
    CHECK(on_shell);
    CHECK(empty.bounds.contains(kp));
  }
}

TEST_CASE("pga_attend: uniform attention averages, hard bias selects") {
  ad::Tape tape;
  RandomStream rs(3, 1);
  Eigen::MatrixXd feats(4, 6);
  for (int i = 0; i < feats.size(); ++i) feats.data()[i] = rs.uniform(-1, 1);
  Eigen::MatrixXd wk(6, 8), wv(6, 8);
  for (int i = 0; i < wk.size(); ++i) wk.data()[i] = rs.uniform(-1, 1);
  for (int i = 0; i < wv.size(); ++i) wv.data()[i] = rs.uniform(-1, 1);
  const Eigen::MatrixXd q_pos = Eigen::MatrixXd::Constant(1, 3, 0.4);

  // Zero query weights + flat bias => softmax is exactly uniform, so the
  // output is the token mean through wv.
  {
    const ad::Var out = pga_attend(
        tape, tape.constant(q_pos), tape.constant(feats),
        Eigen::RowVectorXd::Zero(4), tape.constant(Eigen::MatrixXd::Zero(3, 8)),
        tape.constant(wk), tape.constant(wv));
    const Eigen::MatrixXd want = feats.colwise().mean() * wv;
    CHECK((tape.value(out) - want).norm() < 1e-12);
  }
  // A -1e9 bias on all but token 2 makes the attention one-hot.
  {
    Eigen::RowVectorXd bias = Eigen::RowVectorXd::Constant(4, -1e9);
    bias[2] = 0.0;
    const ad::Var out = pga_attend(
        tape, tape.constant(q_pos), tape.constant(feats), bias,
        tape.constant(Eigen::MatrixXd::Zero(3, 8)), tape.constant(wk),
        tape.constant(wv));
    const Eigen::MatrixXd want = feats.row(2) * wv;
    CHECK((tape.value(out) - want).norm() < 1e-12);
  }
  // Bias length must match the token count.
  CHECK_THROWS_AS(
      pga_attend(tape, tape.constant(q_pos), tape.constant(feats),
                 Eigen::RowVectorXd::Zero(3),
                 tape.constant(Eigen::MatrixXd::Zero(3, 8)), tape.constant(wk),
                 tape.constant(wv)),
      InvalidArgument);
}

TEST_CASE("model config validates and round-trips through JSON") {
  ModelConfig cfg = tiny_config();
  CHECK_NOTHROW(cfg.validate());
  const ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.d_model == cfg.d_model);
  CHECK(back.n_image_tokens == cfg.n_image_tokens);
  CHECK(back.use_lidar == cfg.use_lidar);
  CHECK(back.dt == cfg.dt);

  cfg.n_heads = 3;  // 8 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = tiny_config();
  cfg.n_image_tokens = 5;  // not a perfect square
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = tiny_config();
  cfg.d_in = 2;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("parameter init: seeded, bounded, correct special values") {
  const ModelConfig cfg = tiny_config();
  const BeamPredictor a(cfg, 7), b(cfg, 7), c(cfg, 8);
  REQUIRE(a.params().entries.size() == b.params().entries.size());
  double diff_c = 0.0;
  for (std::size_t i = 0; i < a.params().entries.size(); ++i) {
    const auto& ea = a.params().entries[i];
    CHECK((ea.value - b.params().entries[i].value).norm() == 0.0);
    diff_c += (ea.value - c.params().entries[i].value).norm();
    CHECK(ea.trainable);
  }
  CHECK(diff_c > 0.0);

  // Xavier entries respect the fan bound; norm gains start at one, biases at
  // zero.
  const auto& w1 = a.params().at("kin_mlp.w1");
  const double lim = std::sqrt(6.0 / (w1.value.rows() + w1.value.cols()));
  CHECK(w1.value.cwiseAbs().maxCoeff() <= lim);
  CHECK(w1.value.cwiseAbs().maxCoeff() > 0.0);
  CHECK(a.params().at("block0.ln1.gain").value.minCoeff() == 1.0);
  CHECK(a.params().at("block0.ln1.gain").value.maxCoeff() == 1.0);
  CHECK(a.params().at("kin_mlp.b1").value.norm() == 0.0);
  CHECK(a.params().at("head_azimuth.w").value.cols() == cfg.n_azimuth);
  CHECK_THROWS_AS(a.params().at("no_such_param"), InvalidArgument);
}

TEST_CASE("sequence_length counts context tokens that are actually present") {
  const ModelConfig cfg = tiny_config();
  const BeamPredictor model(cfg, 1);
  ModelInputs in = tiny_inputs(cfg);
  CHECK(model.sequence_length(in) == 3 + 4 + 3);
  in.has_image = false;
  CHECK(model.sequence_length(in) == 2 + 4 + 3);
  in.mode_id = -1;
  in.has_lidar = false;
  CHECK(model.sequence_length(in) == 4 + 3);

  ModelConfig gps_only = cfg;
  gps_only.use_image = gps_only.use_lidar = gps_only.use_mode = false;
  const BeamPredictor gps_model(gps_only, 1);
  CHECK(gps_model.sequence_length(tiny_inputs(gps_only)) == 4 + 3);
}

TEST_CASE("zero parameters give exact identity outputs") {
  const ModelConfig cfg = tiny_config();
  BeamPredictor model(cfg, 3);
  for (auto& e : model.params().entries) e.value.setZero();
  const ModelInputs in = tiny_inputs(cfg);
  const PredictionBundle out = model.predict(in);

  // Trajectory head collapses to the latest observed position.
  REQUIRE(out.trajectory.rows() == cfg.predict_len);
  for (int t = 0; t < cfg.predict_len; ++t)
    CHECK((out.trajectory.row(t).transpose() - in.query_pos).norm() == 0.0);
  // Beam heads are exactly uniform, confidences exactly one half.
  for (int t = 0; t < cfg.predict_len; ++t) {
    for (int i = 0; i < cfg.n_azimuth; ++i)
      CHECK(out.prob_azimuth(t, i) == 1.0 / cfg.n_azimuth);
    for (int i = 0; i < cfg.n_distance; ++i)
      CHECK(out.prob_distance(t, i) == 1.0 / cfg.n_distance);
    for (int i = 0; i < cfg.n_elevation; ++i) {
      CHECK(out.prob_elevation(t, i) == 1.0 / cfg.n_elevation);
      CHECK(out.conf_elevation(t, i) == 0.5);
    }
  }
}

TEST_CASE("prediction bundle is well-formed on a seeded model") {
  const ModelConfig cfg = tiny_config();
  const BeamPredictor model(cfg, 11);
  const ModelInputs in = tiny_inputs(cfg);
  const PredictionBundle out = model.predict(in);

  REQUIRE(out.prob_azimuth.rows() == cfg.predict_len);
  REQUIRE(out.prob_azimuth.cols() == cfg.n_azimuth);
  REQUIRE(out.conf_distance.cols() == cfg.n_distance);
  for (int t = 0; t < cfg.predict_len; ++t) {
    CHECK(out.prob_azimuth.row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.prob_elevation.row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.prob_distance.row(t).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.conf_azimuth.row(t).minCoeff() > 0.0);
    CHECK(out.conf_azimuth.row(t).maxCoeff() < 1.0);
  }
  // predict() equals the tape evaluation of forward().
  ad::Tape tape;
  const ForwardGraph g = model.forward(tape, in);
  CHECK((tape.value(g.trajectory) - out.trajectory).norm() == 0.0);
  CHECK((tape.value(g.prob_azimuth) - out.prob_azimuth).norm() == 0.0);
  CHECK(g.n_context_tokens == 3);

  // Identical reruns are bitwise stable.
  const PredictionBundle again = model.predict(in);
  CHECK((again.trajectory - out.trajectory).norm() == 0.0);
  CHECK((again.conf_azimuth - out.conf_azimuth).norm() == 0.0);
}

TEST_CASE("top1 takes the per-dimension argmax with first-wins ties") {
  PredictionBundle b;
  b.trajectory = Eigen::MatrixXd::Zero(2, 3);
  b.prob_azimuth = Eigen::MatrixXd::Zero(2, 4);
  b.prob_elevation = Eigen::MatrixXd::Zero(2, 3);
  b.prob_distance = Eigen::MatrixXd::Zero(2, 2);
  b.prob_azimuth.row(0) << 0.1, 0.4, 0.4, 0.1;   // tie -> first (bin 2)
  b.prob_elevation.row(0) << 0.2, 0.3, 0.5;
  b.prob_distance.row(0) << 0.5, 0.5;            // tie -> bin 1
  b.prob_azimuth.row(1) << 0.0, 0.0, 0.0, 1.0;
  b.prob_elevation.row(1) << 1.0, 0.0, 0.0;
  b.prob_distance.row(1) << 0.4, 0.6;
  CHECK(b.top1(0) == BeamTriplet{2, 3, 1});
  CHECK(b.top1(1) == BeamTriplet{4, 1, 2});
  CHECK_THROWS_AS(b.top1(2), InvalidArgument);
  CHECK_THROWS_AS(b.top1(-1), InvalidArgument);
}

TEST_CASE("causal backbone: future tokens cannot influence earlier rows") {
  const ModelConfig cfg = tiny_config();
  const BeamPredictor model(cfg, 19);
  ModelInputs in = tiny_inputs(cfg);

  ad::Tape t1;
  const ForwardGraph g1 = model.forward(t1, in);
  const Eigen::MatrixXd out1 = t1.value(g1.backbone_out);

  // Perturb only the last history slot's kinematic features.
  in.kin_features(cfg.history_len - 1, 0) += 0.37;
  ad::Tape t2;
  const ForwardGraph g2 = model.forward(t2, in);
  const Eigen::MatrixXd out2 = t2.value(g2.backbone_out);

  const int changed_row = g1.n_context_tokens + cfg.history_len - 1;
  for (int r = 0; r < changed_row; ++r)
    CHECK((out1.row(r) - out2.row(r)).norm() == 0.0);
  // The perturbed token itself and the future queries do change.
  CHECK((out1.row(changed_row) - out2.row(changed_row)).norm() > 0.0);
  CHECK((out1.bottomRows(cfg.predict_len) - out2.bottomRows(cfg.predict_len))
            .norm() > 0.0);
}

TEST_CASE("malformed inputs are rejected") {
  const ModelConfig cfg = tiny_config();
  const BeamPredictor model(cfg, 1);
  ModelInputs in = tiny_inputs(cfg);
  in.kin_features = Eigen::MatrixXd::Zero(cfg.history_len + 1, 9);
  CHECK_THROWS_AS(model.predict(in), InvalidArgument);

  in = tiny_inputs(cfg);
  in.mode_id = cfg.n_modes;
  CHECK_THROWS_AS(model.predict(in), InvalidArgument);

  in = tiny_inputs(cfg);
  in.image_features = Eigen::MatrixXd::Zero(1, cfg.d_in);
  CHECK_THROWS_AS(model.predict(in), InvalidArgument);
}

TEST_CASE("partial freeze keeps encoders, norms, heads and the top block") {
  const ModelConfig cfg = tiny_config();
  BeamPredictor model(cfg, 1);
  model.set_partial_freeze(true);
  for (const auto& e : model.params().entries) {
    const bool lower_block = e.name.rfind("block0.", 0) == 0;
    const bool is_norm = e.name.find(".ln") != std::string::npos;
    if (lower_block && !is_norm)
      CHECK_FALSE(e.trainable);
    else
      CHECK(e.trainable);
  }
  model.set_partial_freeze(false);
  for (const auto& e : model.params().entries) CHECK(e.trainable);
}

TEST_CASE("checkpoints round-trip parameters, config and extra payload") {
  const ModelConfig cfg = tiny_config();
  const BeamPredictor model(cfg, 21);
  const std::string path = "./ckpt_test.bin";
  model.save_checkpoint(path, R"({"codebook_hash":"abc123"})");

  std::string extra;
  const BeamPredictor back = BeamPredictor::load_checkpoint(path, &extra);
  CHECK(extra.find("abc123") != std::string::npos);
  CHECK(back.config().d_model == cfg.d_model);
  CHECK(back.config().n_distance == cfg.n_distance);
  REQUIRE(back.params().entries.size() == model.params().entries.size());
  for (std::size_t i = 0; i < model.params().entries.size(); ++i) {
    CHECK(back.params().entries[i].name == model.params().entries[i].name);
    CHECK((back.params().entries[i].value - model.params().entries[i].value)
              .norm() == 0.0);
  }

  // Saving the loaded model reproduces the file byte for byte.
  const std::string path2 = "./ckpt_test2.bin";
  back.save_checkpoint(path2, R"({"codebook_hash":"abc123"})");
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());

  // Corrupt one payload byte: the integrity hash rejects the file.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(0, std::ios::end);
    const auto size = f.tellg();
    f.seekg(static_cast<std::streamoff>(size) - 64, std::ios::beg);
    char ch;
    f.get(ch);
    f.seekp(static_cast<std::streamoff>(size) - 64, std::ios::beg);
    f.put(static_cast<char>(ch ^ 0x11));
  }
  CHECK_THROWS_AS(BeamPredictor::load_checkpoint(path), IoError);
  CHECK_THROWS_AS(BeamPredictor::load_checkpoint("./missing_ckpt.bin"), IoError);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}
