// SPDX-License-Identifier: Apache-2.0
#include "nfbeam/predictor.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "binary_io.hpp"
#include "json_util.hpp"
#include "nfbeam/rng.hpp"

namespace nfbeam {

namespace {

constexpr char kCheckpointMagic[] = "NFBCKPT1";

// Raw kinematic units are mapped to O(1) activations with fixed scales so
// normalization needs no dataset statistics.
constexpr double kPosScale = 0.1;
constexpr double kVelScale = 0.1;
constexpr double kAccScale = 0.02;

int isqrt_exact(int n, const char* what) {
  const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (r * r != n)
    throw InvalidArgument(std::string(what) + " must be a perfect square");
  return r;
}

/// Interleaved sin/cos position code filling feature columns [first, last),
/// where last < 0 means the end of the row. The inner stride is free so
/// matrix rows can bind directly.
void fill_position_code(
    Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> row, int first,
    double a, double b, int last = -1) {
  const int d = last < 0 ? static_cast<int>(row.cols()) : last;
  for (int c = first; c < d; ++c) {
    const int m = (c - first) / 4;
    const double omega = kPi * std::pow(0.5, m);
    switch ((c - first) % 4) {
      case 0: row[c] = std::sin(omega * a); break;
      case 1: row[c] = std::cos(omega * a); break;
      case 2: row[c] = std::sin(omega * b); break;
      default: row[c] = std::cos(omega * b); break;
    }
  }
}

struct RayHit {
  bool hit = false;
  double range = 0.0;
  bool is_blocker = false;
};

RayHit cast_ray(const SceneConfig& scene, const Vec3& origin, const Vec3& dir) {
  RayHit best;
  for (const auto& box : scene.blockers) {
    double t0 = 1e-9, t1 = 1e30;
    bool ok = true;
    for (int ax = 0; ax < 3 && ok; ++ax) {
      if (std::abs(dir[ax]) < 1e-15) {
        ok = origin[ax] >= box.min[ax] && origin[ax] <= box.max[ax];
        continue;
      }
      double ta = (box.min[ax] - origin[ax]) / dir[ax];
      double tb = (box.max[ax] - origin[ax]) / dir[ax];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      ok = t0 <= t1;
    }
    if (ok && (!best.hit || t0 < best.range)) best = {true, t0, true};
  }
  for (const auto& facet : scene.reflectors) {
    const Vec3 n = facet.normal();
    const double denom = dir.dot(n);
    if (std::abs(denom) < 1e-12) continue;
    const double t = (facet.corners[0] - origin).dot(n) / denom;
    if (t <= 1e-9) continue;
    if (!facet.contains_on_plane(origin + t * dir, 1e-9)) continue;
    if (!best.hit || t < best.range) best = {true, t, false};
  }
  return best;
}

}  // namespace

void ModelConfig::validate() const {
  // d_in holds 3 scene channels + >= 1 position-code column + the 4-column
  // terminal-detection block.
  if (d_model < 1 || d_in < 8 || n_blocks < 1 || n_heads < 1)
    throw InvalidArgument("ModelConfig: d_model >= 1 and d_in >= 8 required");
  if (d_model % n_heads != 0)
    throw InvalidArgument("ModelConfig: d_model must be divisible by n_heads");
  if (history_len < 1 || predict_len < 1)
    throw InvalidArgument("ModelConfig: sequence lengths must be >= 1");
  if (n_azimuth < 1 || n_elevation < 1 || n_distance < 1)
    throw InvalidArgument("ModelConfig: head sizes must be >= 1");
  if (n_modes < 1 || n_image_tokens < 1 || n_lidar_tokens < 1)
    throw InvalidArgument("ModelConfig: token counts must be >= 1");
  if (dt <= 0) throw InvalidArgument("ModelConfig: dt must be positive");
  isqrt_exact(n_image_tokens, "ModelConfig: n_image_tokens");
}

std::string ModelConfig::to_json() const {
  json j;
  j["d_model"] = d_model;
  j["d_in"] = d_in;
  j["n_blocks"] = n_blocks;
  j["n_heads"] = n_heads;
  j["history_len"] = history_len;
  j["predict_len"] = predict_len;
  j["n_image_tokens"] = n_image_tokens;
  j["n_lidar_tokens"] = n_lidar_tokens;
  j["n_modes"] = n_modes;
  j["n_azimuth"] = n_azimuth;
  j["n_elevation"] = n_elevation;
  j["n_distance"] = n_distance;
  j["use_image"] = use_image;
  j["use_lidar"] = use_lidar;
  j["use_mode"] = use_mode;
  j["dt"] = dt;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
  const json j = parse_json(json_text, "model config");
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.d_in = j.value("d_in", c.d_in);
  c.n_blocks = j.value("n_blocks", c.n_blocks);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.history_len = j.value("history_len", c.history_len);
  c.predict_len = j.value("predict_len", c.predict_len);
  c.n_image_tokens = j.value("n_image_tokens", c.n_image_tokens);
  c.n_lidar_tokens = j.value("n_lidar_tokens", c.n_lidar_tokens);
  c.n_modes = j.value("n_modes", c.n_modes);
  c.n_azimuth = j.value("n_azimuth", c.n_azimuth);
  c.n_elevation = j.value("n_elevation", c.n_elevation);
  c.n_distance = j.value("n_distance", c.n_distance);
  c.use_image = j.value("use_image", c.use_image);
  c.use_lidar = j.value("use_lidar", c.use_lidar);
  c.use_mode = j.value("use_mode", c.use_mode);
  c.dt = j.value("dt", c.dt);
  c.validate();
  return c;
}

KinematicSequence encode_kinematics(const std::vector<Vec3>& noisy_positions,
                                    double dt) {
  if (noisy_positions.empty())
    throw InvalidArgument("encode_kinematics: empty position history");
  if (dt <= 0) throw InvalidArgument("encode_kinematics: dt must be positive");
  const int n = static_cast<int>(noisy_positions.size());
  KinematicSequence seq;
  seq.features = Eigen::MatrixXd::Zero(n, 9);
  for (int t = 0; t < n; ++t)
    seq.features.block(t, 0, 1, 3) = noisy_positions[
        static_cast<std::size_t>(t)].transpose();
  // First differences exist from slot 1, second differences from slot 2;
  // earlier rows stay zero-filled.
  for (int t = 1; t < n; ++t)
    seq.features.block(t, 3, 1, 3) =
        (seq.features.block(t, 0, 1, 3) - seq.features.block(t - 1, 0, 1, 3)) /
        dt;
  for (int t = 2; t < n; ++t)
    seq.features.block(t, 6, 1, 3) =
        (seq.features.block(t, 3, 1, 3) - seq.features.block(t - 1, 3, 1, 3)) /
        dt;
  return seq;
}

SpatialBias image_spatial_bias(const Vec3& uav, const CameraIntrinsics& cam,
                               int grid, double sigma_px) {
  if (grid < 1) throw InvalidArgument("image_spatial_bias: grid must be >= 1");
  if (sigma_px <= 0)
    throw InvalidArgument("image_spatial_bias: sigma must be positive");
  SpatialBias out;
  out.bias = Eigen::RowVectorXd::Zero(grid * grid);
  // Camera frame: +x world is depth, image x = -y world, image y = -z world.
  const double depth = uav.x();
  if (depth < 0.1) {
    out.degenerate = true;  // target behind or grazing the image plane
    return out;
  }
  const double px = cam.cx + cam.fx * (-uav.y() / depth);
  const double py = cam.cy + cam.fy * (-uav.z() / depth);
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma_px * sigma_px);
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      const double u = (c + 0.5) * cam.width / grid;
      const double v = (r + 0.5) * cam.height / grid;
      const double d2 = (px - u) * (px - u) + (py - v) * (py - v);
      out.bias[r * grid + c] = -d2 * inv_two_sigma2;
    }
  }
  return out;
}

SpatialBias lidar_spatial_bias(const Vec3& uav,
                               const Eigen::Matrix3Xd& keypoints,
                               double rho_m) {
  if (rho_m <= 0)
    throw InvalidArgument("lidar_spatial_bias: rho must be positive");
  SpatialBias out;
  out.bias = -(keypoints.colwise() - uav).colwise().norm() / rho_m;
  return out;
}

SensorTokens synth_sensor_tokens(const SceneConfig& scene, const Vec3& uav,
                                 const CameraIntrinsics& cam,
                                 const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int grid = isqrt_exact(cfg.n_image_tokens, "n_image_tokens");
  SensorTokens tok;
  tok.image_features = Eigen::MatrixXd::Zero(cfg.n_image_tokens, cfg.d_in);

  // The last four feature columns are the terminal-detection block; scene
  // occupancy and position codes fill the columns before it.
  const int det = cfg.d_in - 4;
  const Vec3 origin = Vec3::Zero();  // camera sits at the array center
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      const double u = (c + 0.5) * cam.width / grid;
      const double v = (r + 0.5) * cam.height / grid;
      Vec3 dir(1.0, -(u - cam.cx) / cam.fx, -(v - cam.cy) / cam.fy);
      dir.normalize();
      const RayHit hit = cast_ray(scene, origin, dir);
      auto row = tok.image_features.row(r * grid + c);
      row[0] = hit.hit && hit.is_blocker ? 1.0 : 0.0;
      row[1] = hit.hit && !hit.is_blocker ? 1.0 : 0.0;
      row[2] = hit.hit ? std::min(hit.range / 20.0, 1.0) : 0.0;
      fill_position_code(row, 3, r + 0.5, c + 0.5, det);
    }
  }

  // The camera also observes the terminal: the patch containing its
  // projection gets a detection flag, sub-patch offsets and range. This is
  // the sensed (true) position, not the GPS estimate.
  const double depth = uav.x();
  if (depth >= 0.1) {
    const double px = cam.cx + cam.fx * (-uav.y() / depth);
    const double py = cam.cy + cam.fy * (-uav.z() / depth);
    if (px >= 0 && px < cam.width && py >= 0 && py < cam.height) {
      const double cell_w = static_cast<double>(cam.width) / grid;
      const double cell_h = static_cast<double>(cam.height) / grid;
      const int c = std::min(grid - 1, static_cast<int>(px / cell_w));
      const int r = std::min(grid - 1, static_cast<int>(py / cell_h));
      auto row = tok.image_features.row(r * grid + c);
      row[det] = 1.0;
      row[det + 1] = px / cell_w - (c + 0.5);
      row[det + 2] = py / cell_h - (r + 0.5);
      row[det + 3] = std::min(uav.norm() / 20.0, 1.0);
    }
  }

  // Lidar keypoints: area-weighted surface samples over blockers and
  // reflectors; an empty scene falls back to the service-volume shell.
  struct Surface {
    Vec3 origin, edge_a, edge_b, normal;
    double area;
  };
  std::vector<Surface> surfaces;
  auto add_box = [&surfaces](const Vec3& lo, const Vec3& hi) {
    const Vec3 d = hi - lo;
    const struct { int ax; double at; double sign; } faces[6] = {
        {0, 0, -1}, {0, 1, 1}, {1, 0, -1}, {1, 1, 1}, {2, 0, -1}, {2, 1, 1}};
    for (const auto& f : faces) {
      const int a = (f.ax + 1) % 3, b = (f.ax + 2) % 3;
      Surface s;
      s.origin = lo;
      s.origin[f.ax] = f.at > 0 ? hi[f.ax] : lo[f.ax];
      s.edge_a = Vec3::Zero();
      s.edge_a[a] = d[a];
      s.edge_b = Vec3::Zero();
      s.edge_b[b] = d[b];
      s.normal = Vec3::Zero();
      s.normal[f.ax] = f.sign;
      s.area = d[a] * d[b];
      surfaces.push_back(s);
    }
  };
  for (const auto& box : scene.blockers) add_box(box.min, box.max);
  for (const auto& facet : scene.reflectors) {
    Surface s;
    s.origin = facet.corners[0];
    s.edge_a = facet.corners[1] - facet.corners[0];
    s.edge_b = facet.corners[3] - facet.corners[0];
    s.normal = facet.normal();
    s.area = facet.area();
    surfaces.push_back(s);
  }
  if (surfaces.empty()) add_box(scene.bounds.min, scene.bounds.max);

  double total_area = 0;
  for (const auto& s : surfaces) total_area += s.area;

  RandomStream rs(seed, StreamKind::kSensor,
                  static_cast<std::uint64_t>(scene.scene_id));
  tok.lidar_features = Eigen::MatrixXd::Zero(cfg.n_lidar_tokens, cfg.d_in);
  tok.lidar_keypoints.resize(3, cfg.n_lidar_tokens);
  for (int i = 0; i < cfg.n_lidar_tokens; ++i) {
    double pick = rs.uniform() * total_area;
    std::size_t si = 0;
    while (si + 1 < surfaces.size() && pick > surfaces[si].area) {
      pick -= surfaces[si].area;
      ++si;
    }
    const Surface& s = surfaces[si];
    const Vec3 kp = s.origin + rs.uniform() * s.edge_a + rs.uniform() * s.edge_b;
    tok.lidar_keypoints.col(i) = kp;
    auto row = tok.lidar_features.row(i);
    row[0] = s.normal.x();
    row[1] = s.normal.y();
    row[2] = s.normal.z();
    row[3] = std::min(kp.norm() / 20.0, 1.0);
    fill_position_code(row, 4, static_cast<double>(i), kp.z());
  }
  return tok;
}

ad::Var pga_attend(ad::Tape& tape, ad::Var query_pos, ad::Var feats,
                   const Eigen::RowVectorXd& bias, ad::Var wq, ad::Var wk,
                   ad::Var wv) {
  const auto n_tokens = tape.value(feats).rows();
  if (bias.cols() != n_tokens)
    throw InvalidArgument("pga_attend: bias length must match token count");
  const double d_model = static_cast<double>(tape.value(wq).cols());
  ad::Var q = tape.matmul(query_pos, wq);                    // 1 x d
  ad::Var k = tape.matmul(feats, wk);                        // N x d
  ad::Var scores = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(d_model));
  scores = tape.add_const(scores, bias);
  ad::Var attn = tape.row_softmax(scores);                   // 1 x N
  return tape.matmul(attn, tape.matmul(feats, wv));          // 1 x d
}

BeamTriplet PredictionBundle::top1(int slot) const {
  auto argmax1 = [](const Eigen::MatrixXd& m, int row) {
    int best = 0;
    for (int c = 1; c < m.cols(); ++c)
      if (m(row, c) > m(row, best)) best = c;
    return best + 1;  // first maximum wins ties; grid indices are 1-based
  };
  if (slot < 0 || slot >= trajectory.rows())
    throw InvalidArgument("PredictionBundle::top1: slot out of range");
  BeamTriplet t;
  t.azimuth = argmax1(prob_azimuth, slot);
  t.elevation = argmax1(prob_elevation, slot);
  t.distance = argmax1(prob_distance, slot);
  return t;
}

int ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return static_cast<int>(i);
  return -1;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  const int i = index_of(name);
  if (i < 0) throw InvalidArgument("ParamStore: unknown parameter " + name);
  return entries[static_cast<std::size_t>(i)];
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  const int i = index_of(name);
  if (i < 0) throw InvalidArgument("ParamStore: unknown parameter " + name);
  return entries[static_cast<std::size_t>(i)];
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += static_cast<std::size_t>(e.value.size());
  return n;
}

void ParamStore::zero_grads() {
  for (auto& e : entries) e.grad.setZero(e.value.rows(), e.value.cols());
}

BeamPredictor::BeamPredictor(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  register_params(seed);
}

namespace {
enum class Init { kXavier, kEmbed, kOne, kZero };
}

void BeamPredictor::register_params(std::uint64_t seed) {
  auto add = [&](const std::string& name, int rows, int cols, Init kind) {
    RandomStream rs(seed, StreamKind::kParamInit, params_.entries.size());
    ParamStore::Entry e;
    e.name = name;
    e.value.resize(rows, cols);
    switch (kind) {
      case Init::kXavier: {
        const double lim = std::sqrt(6.0 / (rows + cols));
        for (int c = 0; c < cols; ++c)
          for (int r = 0; r < rows; ++r) e.value(r, c) = rs.uniform(-lim, lim);
        break;
      }
      case Init::kEmbed:
        for (int c = 0; c < cols; ++c)
          for (int r = 0; r < rows; ++r) e.value(r, c) = rs.normal(0.0, 0.02);
        break;
      case Init::kOne: e.value.setOnes(); break;
      case Init::kZero: e.value.setZero(); break;
    }
    e.grad = ad::Matrix::Zero(rows, cols);
    params_.entries.push_back(std::move(e));
  };

  const int d = cfg_.d_model;
  add("kin_mlp.w1", 9, d, Init::kXavier);
  add("kin_mlp.b1", 1, d, Init::kZero);
  add("kin_mlp.w2", d, d, Init::kXavier);
  add("kin_mlp.b2", 1, d, Init::kZero);
  add("future_queries", cfg_.predict_len, d, Init::kEmbed);
  add("time_embed", cfg_.history_len + cfg_.predict_len, d, Init::kEmbed);
  if (cfg_.use_mode) add("mode_table", cfg_.n_modes, d, Init::kEmbed);
  if (cfg_.use_image) {
    add("pga_image.wq", 3, d, Init::kXavier);
    add("pga_image.wk", cfg_.d_in, d, Init::kXavier);
    add("pga_image.wv", cfg_.d_in, d, Init::kXavier);
  }
  if (cfg_.use_lidar) {
    add("pga_lidar.wq", 3, d, Init::kXavier);
    add("pga_lidar.wk", cfg_.d_in, d, Init::kXavier);
    add("pga_lidar.wv", cfg_.d_in, d, Init::kXavier);
  }
  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    add(p + "ln1.gain", 1, d, Init::kOne);
    add(p + "ln1.bias", 1, d, Init::kZero);
    add(p + "attn.wq", d, d, Init::kXavier);
    add(p + "attn.bq", 1, d, Init::kZero);
    add(p + "attn.wk", d, d, Init::kXavier);
    add(p + "attn.bk", 1, d, Init::kZero);
    add(p + "attn.wv", d, d, Init::kXavier);
    add(p + "attn.bv", 1, d, Init::kZero);
    add(p + "attn.wo", d, d, Init::kXavier);
    add(p + "attn.bo", 1, d, Init::kZero);
    add(p + "ln2.gain", 1, d, Init::kOne);
    add(p + "ln2.bias", 1, d, Init::kZero);
    add(p + "ffn.w1", d, 4 * d, Init::kXavier);
    add(p + "ffn.b1", 1, 4 * d, Init::kZero);
    add(p + "ffn.w2", 4 * d, d, Init::kXavier);
    add(p + "ffn.b2", 1, d, Init::kZero);
  }
  add("traj_head.w1", d, d, Init::kXavier);
  add("traj_head.b1", 1, d, Init::kZero);
  add("traj_head.w2", d, 3, Init::kXavier);
  add("traj_head.b2", 1, 3, Init::kZero);
  add("beam_proj.w", 2 * d, d, Init::kXavier);
  add("beam_proj.b", 1, d, Init::kZero);
  add("head_azimuth.w", d, cfg_.n_azimuth, Init::kXavier);
  add("head_azimuth.b", 1, cfg_.n_azimuth, Init::kZero);
  add("head_elevation.w", d, cfg_.n_elevation, Init::kXavier);
  add("head_elevation.b", 1, cfg_.n_elevation, Init::kZero);
  add("head_distance.w", d, cfg_.n_distance, Init::kXavier);
  add("head_distance.b", 1, cfg_.n_distance, Init::kZero);
  add("conf_trunk.w", d, d, Init::kXavier);
  add("conf_trunk.b", 1, d, Init::kZero);
  add("conf_azimuth.w", d, cfg_.n_azimuth, Init::kXavier);
  add("conf_azimuth.b", 1, cfg_.n_azimuth, Init::kZero);
  add("conf_elevation.w", d, cfg_.n_elevation, Init::kXavier);
  add("conf_elevation.b", 1, cfg_.n_elevation, Init::kZero);
  add("conf_distance.w", d, cfg_.n_distance, Init::kXavier);
  add("conf_distance.b", 1, cfg_.n_distance, Init::kZero);
}

std::vector<ad::Var> BeamPredictor::bind_params(ad::Tape& tape) const {
  std::vector<ad::Var> vars;
  vars.reserve(params_.entries.size());
  for (const auto& e : params_.entries) vars.push_back(tape.leaf(e.value));
  return vars;
}

int BeamPredictor::sequence_length(const ModelInputs& in) const {
  int n_ctx = 0;
  if (cfg_.use_mode && in.mode_id >= 0) ++n_ctx;
  if (cfg_.use_image && in.has_image) ++n_ctx;
  if (cfg_.use_lidar && in.has_lidar) ++n_ctx;
  return n_ctx + cfg_.history_len + cfg_.predict_len;
}

ad::Var BeamPredictor::fuse_tokens(ad::Tape& tape, const ModelInputs& in,
                                   const std::vector<ad::Var>& pv,
                                   int* n_context_out) const {
  if (in.kin_features.rows() != cfg_.history_len ||
      in.kin_features.cols() != 9)
    throw InvalidArgument("fuse_tokens: kinematic features must be L_h x 9");
  auto P = [&](const char* name) -> ad::Var {
    const int i = params_.index_of(name);
    if (i < 0) throw InvalidArgument(std::string("fuse_tokens: missing ") + name);
    return pv[static_cast<std::size_t>(i)];
  };

  // Kinematics encoder over scaled [u, v, a] rows.
  ad::Matrix kin = in.kin_features;
  kin.leftCols(3) *= kPosScale;
  kin.middleCols(3, 3) *= kVelScale;
  kin.rightCols(3) *= kAccScale;
  ad::Var k_in = tape.constant(std::move(kin));
  ad::Var h1 = tape.gelu(
      tape.add_rowvec(tape.matmul(k_in, P("kin_mlp.w1")), P("kin_mlp.b1")));
  ad::Var hist = tape.add_rowvec(tape.matmul(h1, P("kin_mlp.w2")),
                                 P("kin_mlp.b2"));  // L_h x d

  // History tokens + learnable future queries share one temporal embedding.
  ad::Var traj_tokens =
      tape.concat_rows({hist, P("future_queries")});
  traj_tokens = tape.add(traj_tokens, P("time_embed"));

  std::vector<ad::Var> parts;
  int n_ctx = 0;
  if (cfg_.use_mode && in.mode_id >= 0) {
    if (in.mode_id >= cfg_.n_modes)
      throw InvalidArgument("fuse_tokens: mode_id out of range");
    parts.push_back(tape.slice_rows(P("mode_table"), in.mode_id, 1));
    ++n_ctx;
  }
  const ad::Matrix q_pos =
      (kPosScale * in.query_pos).transpose();  // 1 x 3 shared PGA query
  if (cfg_.use_image && in.has_image) {
    if (in.image_features.rows() != cfg_.n_image_tokens ||
        in.image_features.cols() != cfg_.d_in)
      throw InvalidArgument("fuse_tokens: image feature shape mismatch");
    parts.push_back(pga_attend(tape, tape.constant(q_pos),
                               tape.constant(in.image_features), in.image_bias,
                               P("pga_image.wq"), P("pga_image.wk"),
                               P("pga_image.wv")));
    ++n_ctx;
  }
  if (cfg_.use_lidar && in.has_lidar) {
    if (in.lidar_features.rows() != cfg_.n_lidar_tokens ||
        in.lidar_features.cols() != cfg_.d_in)
      throw InvalidArgument("fuse_tokens: lidar feature shape mismatch");
    parts.push_back(pga_attend(tape, tape.constant(q_pos),
                               tape.constant(in.lidar_features), in.lidar_bias,
                               P("pga_lidar.wq"), P("pga_lidar.wk"),
                               P("pga_lidar.wv")));
    ++n_ctx;
  }
  parts.push_back(traj_tokens);
  if (n_context_out) *n_context_out = n_ctx;
  return tape.concat_rows(parts);
}

ad::Var BeamPredictor::backbone_forward(ad::Tape& tape, ad::Var seq,
                                        const std::vector<ad::Var>& pv) const {
  auto P = [&](const std::string& name) -> ad::Var {
    const int i = params_.index_of(name);
    if (i < 0)
      throw InvalidArgument("backbone_forward: missing parameter " + name);
    return pv[static_cast<std::size_t>(i)];
  };
  const auto t_len = tape.value(seq).rows();
  ad::Matrix mask = ad::Matrix::Zero(t_len, t_len);
  for (Eigen::Index r = 0; r < t_len; ++r)
    for (Eigen::Index c = r + 1; c < t_len; ++c) mask(r, c) = -1e9;

  const int hd = cfg_.head_dim();
  ad::Var x = seq;
  for (int b = 0; b < cfg_.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    // Attention sublayer (pre-norm residual).
    ad::Var n1 = tape.layer_norm(x, P(p + "ln1.gain"), P(p + "ln1.bias"));
    ad::Var q = tape.add_rowvec(tape.matmul(n1, P(p + "attn.wq")),
                                P(p + "attn.bq"));
    ad::Var k = tape.add_rowvec(tape.matmul(n1, P(p + "attn.wk")),
                                P(p + "attn.bk"));
    ad::Var v = tape.add_rowvec(tape.matmul(n1, P(p + "attn.wv")),
                                P(p + "attn.bv"));
    std::vector<ad::Var> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      ad::Var qh = tape.slice_cols(q, h * hd, hd);
      ad::Var kh = tape.slice_cols(k, h * hd, hd);
      ad::Var vh = tape.slice_cols(v, h * hd, hd);
      ad::Var scores =
          tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(double(hd)));
      scores = tape.add_const(scores, mask);  // causal: no future attention
      heads.push_back(tape.matmul(tape.row_softmax(scores), vh));
    }
    ad::Var attn_out = tape.add_rowvec(
        tape.matmul(tape.concat_cols(heads), P(p + "attn.wo")),
        P(p + "attn.bo"));
    x = tape.add(x, attn_out);
    // Feed-forward sublayer (pre-norm residual).
    ad::Var n2 = tape.layer_norm(x, P(p + "ln2.gain"), P(p + "ln2.bias"));
    ad::Var f = tape.gelu(
        tape.add_rowvec(tape.matmul(n2, P(p + "ffn.w1")), P(p + "ffn.b1")));
    f = tape.add_rowvec(tape.matmul(f, P(p + "ffn.w2")), P(p + "ffn.b2"));
    x = tape.add(x, f);
  }
  return x;
}

ForwardGraph BeamPredictor::forward(ad::Tape& tape,
                                    const ModelInputs& in) const {
  ForwardGraph g;
  g.param_vars = bind_params(tape);
  auto P = [&](const char* name) -> ad::Var {
    return g.param_vars[static_cast<std::size_t>(params_.index_of(name))];
  };

  g.fused = fuse_tokens(tape, in, g.param_vars, &g.n_context_tokens);
  g.backbone_out = backbone_forward(tape, g.fused, g.param_vars);
  ad::Var qhat = tape.slice_rows(
      g.backbone_out, g.n_context_tokens + cfg_.history_len, cfg_.predict_len);

  // Trajectory head: residual offsets from the latest observed position.
  ad::Var th = tape.gelu(tape.add_rowvec(tape.matmul(qhat, P("traj_head.w1")),
                                         P("traj_head.b1")));
  ad::Var delta = tape.add_rowvec(tape.matmul(th, P("traj_head.w2")),
                                  P("traj_head.b2"));
  const ad::Matrix base = in.query_pos.transpose().replicate(cfg_.predict_len, 1);
  g.trajectory = tape.add_const(delta, base);

  // Beam heads consume trajectory hidden state fused with backbone queries.
  ad::Var z = tape.add_rowvec(
      tape.matmul(tape.concat_cols({th, qhat}), P("beam_proj.w")),
      P("beam_proj.b"));
  g.prob_azimuth = tape.row_softmax(tape.add_rowvec(
      tape.matmul(z, P("head_azimuth.w")), P("head_azimuth.b")));
  g.prob_elevation = tape.row_softmax(tape.add_rowvec(
      tape.matmul(z, P("head_elevation.w")), P("head_elevation.b")));
  g.prob_distance = tape.row_softmax(tape.add_rowvec(
      tape.matmul(z, P("head_distance.w")), P("head_distance.b")));

  ad::Var ct = tape.gelu(
      tape.add_rowvec(tape.matmul(z, P("conf_trunk.w")), P("conf_trunk.b")));
  g.conf_azimuth = tape.sigmoid(tape.add_rowvec(
      tape.matmul(ct, P("conf_azimuth.w")), P("conf_azimuth.b")));
  g.conf_elevation = tape.sigmoid(tape.add_rowvec(
      tape.matmul(ct, P("conf_elevation.w")), P("conf_elevation.b")));
  g.conf_distance = tape.sigmoid(tape.add_rowvec(
      tape.matmul(ct, P("conf_distance.w")), P("conf_distance.b")));
  return g;
}

PredictionBundle BeamPredictor::predict(const ModelInputs& in) const {
  ad::Tape tape;
  const ForwardGraph g = forward(tape, in);
  PredictionBundle b;
  b.trajectory = tape.value(g.trajectory);
  b.prob_azimuth = tape.value(g.prob_azimuth);
  b.prob_elevation = tape.value(g.prob_elevation);
  b.prob_distance = tape.value(g.prob_distance);
  b.conf_azimuth = tape.value(g.conf_azimuth);
  b.conf_elevation = tape.value(g.conf_elevation);
  b.conf_distance = tape.value(g.conf_distance);
  return b;
}

void BeamPredictor::set_partial_freeze(bool freeze_lower) {
  for (auto& e : params_.entries) e.trainable = true;
  if (!freeze_lower) return;
  // Adaptation mode: only the top block, all norms, encoders, embeddings and
  // heads keep training.
  for (int b = 0; b + 1 < cfg_.n_blocks; ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    for (auto& e : params_.entries)
      if (e.name.rfind(p, 0) == 0 && e.name.find(".ln") == std::string::npos)
        e.trainable = false;
  }
}

void BeamPredictor::save_checkpoint(const std::string& path,
                                    const std::string& extra_json) const {
  json header;
  header["model"] = json::parse(cfg_.to_json());
  header["extra"] = parse_json(extra_json, "checkpoint extra");
  header["params"] = json::array();
  for (const auto& e : params_.entries)
    header["params"].push_back(
        {{"name", e.name}, {"rows", e.value.rows()}, {"cols", e.value.cols()}});
  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("save_checkpoint: cannot open " + path);
  os.write(kCheckpointMagic, 8);
  bio::put_u32(os, 1);  // format version
  bio::put_u64(os, header_text.size());
  bio::put_bytes(os, header_text.data(), header_text.size());
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (const auto& e : params_.entries) {
    const std::size_t bytes =
        static_cast<std::size_t>(e.value.size()) * sizeof(double);
    bio::put_bytes(os, e.value.data(), bytes);
    hash = fnv1a64(e.value.data(), bytes, hash);
  }
  bio::put_u64(os, hash);
  if (!os) throw IoError("save_checkpoint: write failed for " + path);
  std::cerr << "[nfbeam] checkpoint saved: " << path
            << " params=" << params_.num_scalars() << " hash=" << hex64(hash)
            << "\n";
}

BeamPredictor BeamPredictor::load_checkpoint(const std::string& path,
                                             std::string* extra_json) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  bio::expect_magic(is, kCheckpointMagic, "checkpoint");
  const std::uint32_t version = bio::get_u32(is, "checkpoint version");
  if (version != 1) throw IoError("load_checkpoint: unsupported version");
  const std::uint64_t header_len = bio::get_u64(is, "checkpoint header");
  if (header_len > (1u << 20))
    throw IoError("load_checkpoint: oversized header");
  std::string header_text(header_len, '\0');
  bio::get_bytes(is, header_text.data(), header_len, "checkpoint header");
  const json header = parse_json(header_text, "checkpoint header");

  BeamPredictor model(ModelConfig::from_json(header.at("model").dump()),
                      /*seed=*/0);
  const auto& jparams = header.at("params");
  if (jparams.size() != model.params_.entries.size())
    throw IoError("load_checkpoint: parameter list mismatch");
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < model.params_.entries.size(); ++i) {
    auto& e = model.params_.entries[i];
    const auto& jp = jparams[i];
    if (jp.at("name").get<std::string>() != e.name ||
        jp.at("rows").get<Eigen::Index>() != e.value.rows() ||
        jp.at("cols").get<Eigen::Index>() != e.value.cols())
      throw IoError("load_checkpoint: parameter layout mismatch at " + e.name);
    const std::size_t bytes =
        static_cast<std::size_t>(e.value.size()) * sizeof(double);
    bio::get_bytes(is, e.value.data(), bytes, "checkpoint payload");
    hash = fnv1a64(e.value.data(), bytes, hash);
  }
  if (bio::get_u64(is, "checkpoint hash") != hash)
    throw IoError("load_checkpoint: payload hash mismatch in " + path);
  if (extra_json) *extra_json = header.at("extra").dump();
  std::cerr << "[nfbeam] checkpoint loaded: " << path
            << " params=" << model.params_.num_scalars()
            << " hash=" << hex64(hash) << "\n";
  return model;
}

}  // namespace nfbeam
