// SPDX-License-Identifier: Apache-2.0
#include "nfbeam/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "nfbeam/rng.hpp"

namespace nfbeam {

void LossConfig::validate() const {
  if (lambda_traj < 0 || lambda_beam < 0 || lambda_conf < 0)
    throw InvalidArgument("LossConfig: weights must be non-negative");
  if (center_tenths < 1 || neighbor_tenths < 0)
    throw InvalidArgument("LossConfig: invalid soft-label masses");
  if (kl_epsilon <= 0 || kl_epsilon >= 1)
    throw InvalidArgument("LossConfig: kl_epsilon must lie in (0, 1)");
}

Eigen::VectorXd soft_target(int gt_bin, int n_bins, const LossConfig& cfg) {
  cfg.validate();
  if (n_bins < 1 || gt_bin < 1 || gt_bin > n_bins)
    throw InvalidArgument("soft_target: gt bin out of range");
  // Integer tenths summed first, then one exact division per bin: boundary
  // labels come out as exact dyadic fractions (e.g. 6/8, 1/8).
  int tenths[5] = {cfg.neighbor_tenths, cfg.neighbor_tenths, cfg.center_tenths,
                   cfg.neighbor_tenths, cfg.neighbor_tenths};
  int denom = 0;
  for (int off = -2; off <= 2; ++off) {
    const int bin = gt_bin + off;
    if (bin >= 1 && bin <= n_bins) denom += tenths[off + 2];
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_bins);
  for (int off = -2; off <= 2; ++off) {
    const int bin = gt_bin + off;
    if (bin >= 1 && bin <= n_bins)
      out[bin - 1] = static_cast<double>(tenths[off + 2]) / denom;
  }
  return out;
}

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                     double epsilon) {
  if (p.size() != q.size())
    throw InvalidArgument("kl_divergence: size mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;  // 0 log 0 = 0
    acc += p[i] * (std::log(std::max(p[i], epsilon)) -
                   std::log(std::max(q[i], epsilon)));
  }
  return acc;
}

std::array<double, 3> confidence_target(const BeamTriplet& pred,
                                        const BeamTriplet& gt,
                                        const PolarCodebook& cb,
                                        const ChannelSnapshot& snap) {
  const double g_star = cb.gain(triplet_to_global(gt, cb.layout()), snap.h);
  if (!(g_star > 0.0)) return {0.0, 0.0, 0.0};
  auto isolated = [&](const BeamTriplet& t) {
    const double g = cb.gain(triplet_to_global(t, cb.layout()), snap.h);
    return std::clamp(g / g_star, 0.0, 1.0);
  };
  // Each dimension is scored with the other two held at the ground truth, so
  // the target isolates that dimension's own contribution to the gain loss.
  return {isolated({pred.azimuth, gt.elevation, gt.distance}),
          isolated({gt.azimuth, pred.elevation, gt.distance}),
          isolated({gt.azimuth, gt.elevation, pred.distance})};
}

EpisodeTargets make_episode_targets(const Episode& ep, const ModelConfig& mc,
                                    const LossConfig& lc) {
  const int lp = mc.predict_len;
  if (static_cast<int>(ep.horizon.size()) != lp)
    throw InvalidArgument("make_episode_targets: horizon length mismatch");
  EpisodeTargets t;
  t.true_future.resize(lp, 3);
  t.target_az = Eigen::MatrixXd::Zero(lp, mc.n_azimuth);
  t.target_el = Eigen::MatrixXd::Zero(lp, mc.n_elevation);
  t.target_dist = Eigen::MatrixXd::Zero(lp, mc.n_distance);
  t.gt.resize(static_cast<std::size_t>(lp));
  t.active.resize(static_cast<std::size_t>(lp));
  for (int s = 0; s < lp; ++s) {
    const SlotRecord& rec = ep.horizon[static_cast<std::size_t>(s)];
    t.true_future.row(s) = rec.true_pos.transpose();
    t.gt[static_cast<std::size_t>(s)] = rec.gt;
    t.active[static_cast<std::size_t>(s)] = !rec.outage;
    if (rec.outage) continue;
    t.target_az.row(s) = soft_target(rec.gt.azimuth, mc.n_azimuth, lc);
    t.target_el.row(s) = soft_target(rec.gt.elevation, mc.n_elevation, lc);
    t.target_dist.row(s) = soft_target(rec.gt.distance, mc.n_distance, lc);
  }
  return t;
}

namespace {

/// argmax with first-maximum tie-break, 1-based.
int row_argmax(const ad::Matrix& m, int row) {
  int best = 0;
  for (int c = 1; c < m.cols(); ++c)
    if (m(row, c) > m(row, best)) best = c;
  return best + 1;
}

}  // namespace

LossBreakdown build_episode_loss(ad::Tape& tape, const ForwardGraph& fg,
                                 const EpisodeTargets& targets,
                                 const Episode& ep, const PolarCodebook& cb,
                                 const LossConfig& cfg) {
  cfg.validate();
  const ad::Matrix& traj_val = tape.value(fg.trajectory);
  const int lp = static_cast<int>(traj_val.rows());
  if (targets.true_future.rows() != lp)
    throw InvalidArgument("build_episode_loss: horizon length mismatch");

  LossBreakdown out;

  // Trajectory: mean over slots of squared error normalized by the true
  // squared range, as a single weighted sum.
  {
    ad::Matrix w(lp, 3);
    for (int s = 0; s < lp; ++s) {
      const double denom =
          std::max(targets.true_future.row(s).squaredNorm(), 1e-9);
      w.row(s).setConstant(1.0 / (lp * denom));
    }
    ad::Var diff =
        tape.sub(fg.trajectory, tape.constant(targets.true_future));
    out.traj = tape.weighted_sum(tape.mul(diff, diff), w);
  }

  int n_active = 0;
  for (bool a : targets.active) n_active += a ? 1 : 0;

  if (n_active == 0) {
    out.beam = tape.constant(ad::Matrix::Zero(1, 1));
    out.conf = tape.constant(ad::Matrix::Zero(1, 1));
  } else {
    const double denom = 3.0 * n_active;

    // Beam: mean KL(soft target || predicted) over dimensions and active
    // slots. The entropy side is a constant; only the cross term needs the
    // graph. Inactive slots carry zero target rows and drop out.
    double entropy = 0.0;
    auto cross = [&](ad::Var prob, const ad::Matrix& target) {
      for (int s = 0; s < lp; ++s) {
        if (!targets.active[static_cast<std::size_t>(s)]) continue;
        for (int b = 0; b < target.cols(); ++b) {
          const double p = target(s, b);
          if (p > 0.0) entropy += p * std::log(std::max(p, cfg.kl_epsilon));
        }
      }
      return tape.weighted_sum(tape.log(tape.clamp_min(prob, cfg.kl_epsilon)),
                               target / denom);
    };
    ad::Var cross_sum = tape.add(
        tape.add(cross(fg.prob_azimuth, targets.target_az),
                 cross(fg.prob_elevation, targets.target_el)),
        cross(fg.prob_distance, targets.target_dist));
    out.beam = tape.sub(
        tape.constant(ad::Matrix::Constant(1, 1, entropy / denom)), cross_sum);

    // Confidence: squared error against gain-isolation targets, gathered at
    // the current argmax bins. Targets are constants (no gradient through
    // the target path), matching the detached supervision semantics.
    const ad::Matrix& paz = tape.value(fg.prob_azimuth);
    const ad::Matrix& pel = tape.value(fg.prob_elevation);
    const ad::Matrix& pdi = tape.value(fg.prob_distance);
    ad::Matrix s_az = ad::Matrix::Zero(lp, paz.cols());
    ad::Matrix s_el = ad::Matrix::Zero(lp, pel.cols());
    ad::Matrix s_di = ad::Matrix::Zero(lp, pdi.cols());
    ad::Matrix m_az = s_az, m_el = s_el, m_di = s_di;
    for (int s = 0; s < lp; ++s) {
      if (!targets.active[static_cast<std::size_t>(s)]) continue;
      const BeamTriplet pred{row_argmax(paz, s), row_argmax(pel, s),
                             row_argmax(pdi, s)};
      const auto tgt = confidence_target(
          pred, targets.gt[static_cast<std::size_t>(s)], cb,
          ep.horizon[static_cast<std::size_t>(s)].snapshot);
      s_az(s, pred.azimuth - 1) = tgt[0];
      m_az(s, pred.azimuth - 1) = 1.0 / denom;
      s_el(s, pred.elevation - 1) = tgt[1];
      m_el(s, pred.elevation - 1) = 1.0 / denom;
      s_di(s, pred.distance - 1) = tgt[2];
      m_di(s, pred.distance - 1) = 1.0 / denom;
    }
    auto conf_term = [&](ad::Var conf, const ad::Matrix& tgt,
                         const ad::Matrix& mask) {
      ad::Var diff = tape.add_const(conf, -tgt);
      return tape.weighted_sum(tape.mul(diff, diff), mask);
    };
    out.conf = tape.add(
        tape.add(conf_term(fg.conf_azimuth, s_az, m_az),
                 conf_term(fg.conf_elevation, s_el, m_el)),
        conf_term(fg.conf_distance, s_di, m_di));
  }

  out.total = tape.add(
      tape.add(tape.scale(out.traj, cfg.lambda_traj),
               tape.scale(out.beam, cfg.lambda_beam)),
      tape.scale(out.conf, cfg.lambda_conf));
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1)
    throw InvalidArgument("TrainConfig: epochs and batch size must be >= 1");
  if (learning_rate <= 0 || min_learning_rate <= 0 ||
      min_learning_rate > learning_rate)
    throw InvalidArgument("TrainConfig: invalid learning rates");
  if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
    throw InvalidArgument("TrainConfig: Adam betas must lie in [0, 1)");
  if (adam_epsilon <= 0) throw InvalidArgument("TrainConfig: bad epsilon");
  if (plateau_patience < 1 || lr_decay <= 0 || lr_decay >= 1)
    throw InvalidArgument("TrainConfig: invalid plateau schedule");
  loss.validate();
}

TrainResult train_loop(const Dataset& ds, const PolarCodebook& cb,
                       BeamPredictor& model, const TrainConfig& cfg,
                       std::ostream* log) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  if (mc.n_azimuth != ds.layout.n_azimuth ||
      mc.n_elevation != ds.layout.n_elevation ||
      mc.n_distance != ds.layout.n_distance)
    throw InvalidArgument("train_loop: head sizes must mirror the codebook");
  if (mc.history_len != ds.cfg.history_len ||
      mc.predict_len != ds.cfg.predict_len)
    throw InvalidArgument("train_loop: sequence lengths must match dataset");
  if (cb.content_hash() != ds.codebook_hash)
    throw InvalidArgument("train_loop: codebook does not match dataset labels");

  model.set_partial_freeze(cfg.partial_freeze);
  const auto train_idx = ds.episode_indices(Split::kTrain);
  auto val_idx = ds.episode_indices(Split::kVal);
  if (train_idx.empty())
    throw InvalidArgument("train_loop: train split is empty");

  auto& entries = model.params().entries;
  std::vector<ad::Matrix> adam_m, adam_v;
  adam_m.reserve(entries.size());
  for (const auto& e : entries) {
    adam_m.push_back(ad::Matrix::Zero(e.value.rows(), e.value.cols()));
    adam_v.push_back(ad::Matrix::Zero(e.value.rows(), e.value.cols()));
  }

  auto episode_loss = [&](int idx, bool with_grad, double grad_scale,
                          double parts[3]) {
    const Episode& ep = ds.episodes[static_cast<std::size_t>(idx)];
    ad::Tape tape;
    const ModelInputs inputs = make_model_inputs(ds, idx, mc);
    const ForwardGraph fg = model.forward(tape, inputs);
    const EpisodeTargets targets = make_episode_targets(ep, mc, cfg.loss);
    const LossBreakdown lb =
        build_episode_loss(tape, fg, targets, ep, cb, cfg.loss);
    if (with_grad) {
      tape.backward(lb.total);
      for (std::size_t i = 0; i < entries.size(); ++i)
        entries[i].grad += grad_scale * tape.gradient(fg.param_vars[i]);
    }
    if (parts) {
      parts[0] = tape.value(lb.traj)(0, 0);
      parts[1] = tape.value(lb.beam)(0, 0);
      parts[2] = tape.value(lb.conf)(0, 0);
    }
    return tape.value(lb.total)(0, 0);
  };

  TrainResult res;
  double lr = cfg.learning_rate;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<ad::Matrix> best_params;
  int stall = 0;
  long long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    RandomStream shuffle_rs(cfg.seed, StreamKind::kShuffle,
                            static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[shuffle_rs.uniform_index(static_cast<std::uint32_t>(i))]);

    double ep_total = 0, ep_traj = 0, ep_beam = 0, ep_conf = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& e : entries) e.grad.setZero();
      for (std::size_t i = start; i < stop; ++i) {
        double parts[3];
        const double total = episode_loss(order[i], true, inv, parts);
        if (!std::isfinite(total)) {
          std::ostringstream msg;
          msg << "training diverged: non-finite loss at epoch " << epoch
              << ", episode " << order[i];
          throw TrainingDiverged(msg.str());
        }
        ep_total += total;
        ep_traj += parts[0];
        ep_beam += parts[1];
        ep_conf += parts[2];
      }
      ++step;
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, double(step));
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, double(step));
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].trainable) continue;
        auto& m = adam_m[i];
        auto& v = adam_v[i];
        const auto g = entries[i].grad.array();
        m = (cfg.adam_beta1 * m.array() + (1.0 - cfg.adam_beta1) * g).matrix();
        v = (cfg.adam_beta2 * v.array() + (1.0 - cfg.adam_beta2) * g.square())
                .matrix();
        entries[i].value.array() -=
            lr * (m.array() / bc1) /
            ((v.array() / bc2).sqrt() + cfg.adam_epsilon);
      }
    }
    const double n_train = static_cast<double>(order.size());

    double val_total = 0;
    if (!val_idx.empty()) {
      for (int idx : val_idx) val_total += episode_loss(idx, false, 0, nullptr);
      val_total /= static_cast<double>(val_idx.size());
    } else {
      val_total = ep_total / n_train;  // tiny datasets: fall back to train
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_total = ep_total / n_train;
    st.train_traj = ep_traj / n_train;
    st.train_beam = ep_beam / n_train;
    st.train_conf = ep_conf / n_train;
    st.val_total = val_total;
    st.learning_rate = lr;
    res.curve.push_back(st);
    if (log)
      *log << "epoch " << epoch << " train=" << st.train_total
           << " (traj=" << st.train_traj << " beam=" << st.train_beam
           << " conf=" << st.train_conf << ") val=" << val_total
           << " lr=" << lr << std::endl;

    if (val_total < best_val - 1e-9) {
      best_val = val_total;
      res.best_epoch = epoch;
      best_params.clear();
      for (const auto& e : entries) best_params.push_back(e.value);
      stall = 0;
    } else if (++stall >= cfg.plateau_patience) {
      lr = std::max(lr * cfg.lr_decay, cfg.min_learning_rate);
      stall = 0;
    }
  }

  if (!best_params.empty())
    for (std::size_t i = 0; i < entries.size(); ++i)
      entries[i].value = best_params[i];
  res.best_val = best_val;
  return res;
}

void write_loss_curve_csv(const std::string& path,
                          const std::vector<EpochStats>& curve) {
  std::ofstream os(path);
  if (!os) throw IoError("write_loss_curve_csv: cannot open " + path);
  os << "epoch,train_total,train_traj,train_beam,train_conf,val_total,"
        "learning_rate\n";
  os << std::setprecision(12);
  for (const auto& st : curve)
    os << st.epoch << ',' << st.train_total << ',' << st.train_traj << ','
       << st.train_beam << ',' << st.train_conf << ',' << st.val_total << ','
       << st.learning_rate << '\n';
  if (!os) throw IoError("write_loss_curve_csv: write failed for " + path);
}

}  // namespace nfbeam
