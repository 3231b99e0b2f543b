#include "doppio/backend.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "doppio/mapping.hpp"

namespace doppio {

std::optional<std::pair<SE3, Mat6>> verify_loop(const Keyframe& a,
                                                const Keyframe& b,
                                                double yaw_hint,
                                                const RegistrationConfig& cfg,
                                                double* inlier_rms) {
  if (a.scan_body.empty() || b.scan_body.empty()) return std::nullopt;
  // the hint from detect_loop(query=b, history=a) is the yaw of b's body
  // frame expressed in a's, which is exactly the sought transform's rotation
  const SE3 seed(SO3::exp(Vec3(0, 0, yaw_hint)), Vec3::Zero());
  const RegistrationResult res =
      register_point_to_plane(b.scan_body, a.scan_body, seed, cfg);
  if (inlier_rms) *inlier_rms = res.inlier_rms;
  if (!res.accepted) return std::nullopt;
  // A refined loop must still agree with the descriptor's yaw: wandering far
  // from the hint means registration latched onto a look-alike alignment
  // (self-similar scenes can score a clean RMS at a flipped heading).
  const Vec3 heading = res.transform.rot * Vec3::UnitX();
  double yaw_err = std::atan2(heading.y(), heading.x()) - yaw_hint;
  yaw_err = std::remainder(yaw_err, 2 * M_PI);
  if (std::abs(yaw_err) > 0.35) return std::nullopt;
  Mat6 info = res.information;
  info.diagonal().array() += 1e-9;
  Mat6 cov = info.inverse();
  return std::make_pair(res.transform, 0.5 * (cov + cov.transpose()));
}

void Backend::push_imu(const ImuSample& s) { imu_buf_.push_back(s); }

double Backend::yaw_rate_rms() const {
  if (kfs_.empty()) return 0;
  double sum = 0;
  for (const Keyframe& kf : kfs_) {
    const double wz = (kf.gyro - kf.bg).z();
    sum += wz * wz;
  }
  return std::sqrt(sum / double(kfs_.size()));
}

std::optional<Backend::Correction> Backend::offer_frame(const FrameInput& in) {
  const SE3 pose = in.state.body_to_world();
  std::optional<SE3> last;
  if (!kfs_.empty()) last = kfs_.back().odom_pose;
  if (!should_key(last, pose, cfg_.policy)) return std::nullopt;

  Keyframe kf;
  kf.id = int(kfs_.size());
  kf.t = in.t;
  kf.odom_pose = pose;
  kf.pose = map_from_odom_ * pose;
  kf.ego_vel = in.ego_vel;
  kf.vel_world = in.state.vel;
  kf.gyro = in.gyro;
  kf.bg = in.state.bg;
  kf.ba = in.state.ba;
  kf.grav = in.state.grav;
  {
    MapIndex sampler;
    sampler.insert_scan(in.static_points_body, cfg_.scan_voxel);
    kf.scan_body = sampler.points();
  }
  kf.descriptor = make_descriptor(kf.scan_body, cfg_.scan_context);

  if (!kfs_.empty()) {
    Keyframe& prev = kfs_.back();
    prev.to_next = preintegrate(imu_buf_, prev.t, kf.t, prev.bg, prev.ba,
                                cfg_.imu_noise);
    // keep the sample driving the new keyframe's interval, drop the rest
    size_t keep = 0;
    for (size_t i = 0; i < imu_buf_.size(); ++i)
      if (imu_buf_[i].t <= kf.t) keep = i;
    imu_buf_.erase(imu_buf_.begin(), imu_buf_.begin() + keep);
  }

  kfs_.push_back(std::move(kf));
  descriptors_.push_back(kfs_.back().descriptor);
  if (!cfg_.loop_closure) return std::nullopt;

  const auto cand =
      detect_loop(descriptors_.back(), descriptors_, cfg_.scan_context);
  if (!cand) return std::nullopt;
  double rms = 0;
  const auto rel = verify_loop(kfs_[cand->index], kfs_.back(), cand->yaw_hint,
                               cfg_.registration, &rms);
  if (!rel) return std::nullopt;

  LoopEvent ev;
  ev.from = cand->index;
  ev.to = kfs_.back().id;
  ev.rel = rel->first;
  ev.descriptor_distance = cand->distance;
  ev.inlier_rms = rms;
  loops_.push_back(ev);

  FactorGraph graph = build_graph(false, SO3(), Vec3::Zero());
  const SE3 before = kfs_.back().pose;
  const OptimizeStats stats = optimize(graph, cfg_.optimize);
  if (stats.failed) return std::nullopt;
  for (size_t i = 0; i < kfs_.size(); ++i) kfs_[i].pose = graph.poses[i];
  map_from_odom_ = kfs_.back().pose * kfs_.back().odom_pose.inverse();

  Correction corr;
  corr.new_from_old = kfs_.back().pose * before.inverse();
  corr.keyframe_poses.reserve(kfs_.size());
  for (const Keyframe& k : kfs_) corr.keyframe_poses.push_back(k.pose);
  return corr;
}

FactorGraph Backend::build_graph(bool with_extrinsic, const SO3& ext_rot,
                                 const Vec3& ext_pos) const {
  // the calibration problem lives entirely in the odometry frame, where
  // the stored velocities and preintegrated deltas are expressed; the
  // loop-closure problem lives in the map frame
  FactorGraph g;
  g.poses.reserve(kfs_.size());
  for (const Keyframe& kf : kfs_)
    g.poses.push_back(with_extrinsic ? kf.odom_pose : kf.pose);

  FactorGraph::PosePrior prior;
  prior.node = 0;
  prior.value = g.poses.front();
  prior.sigma = cfg_.prior_sigma;
  g.pose_priors.push_back(prior);

  // odometry measurements come from the immutable front-end poses; the
  // node initial values above may already carry earlier corrections
  for (size_t i = 0; i + 1 < kfs_.size(); ++i) {
    FactorGraph::RelPose f;
    f.a = int(i);
    f.b = int(i + 1);
    f.rel = kfs_[i].odom_pose.inverse() * kfs_[i + 1].odom_pose;
    f.sigma = cfg_.odometry_sigma;
    g.rel_poses.push_back(f);
  }
  if (!with_extrinsic) {
    for (const LoopEvent& ev : loops_) {
      FactorGraph::RelPose f;
      f.a = ev.from;
      f.b = ev.to;
      f.rel = ev.rel;
      f.sigma = cfg_.loop_sigma;
      f.is_loop = true;
      g.rel_poses.push_back(f);
    }
  }

  if (with_extrinsic) {
    g.with_extrinsic = true;
    g.ext_rot = ext_rot;
    g.ext_pos = ext_pos;
    g.gravity = kfs_.front().grav;
    for (const Keyframe& kf : kfs_) {
      g.velocities.push_back(kf.vel_world);
      g.gyro_bias.push_back(kf.bg);
      g.accel_bias.push_back(kf.ba);
    }
    for (size_t i = 0; i + 1 < kfs_.size(); ++i) {
      FactorGraph::Preint f;
      f.a = int(i);
      f.b = int(i + 1);
      f.delta = kfs_[i].to_next;
      g.preints.push_back(f);
      FactorGraph::BiasWalk w;
      w.a = int(i);
      w.b = int(i + 1);
      w.sigma = cfg_.bias_walk_sigma;
      g.bias_walks.push_back(w);
    }
    for (const Keyframe& kf : kfs_) {
      FactorGraph::EgoVel f;
      f.node = kf.id;
      f.measured = kf.ego_vel;
      f.gyro = kf.gyro;
      f.sigma = cfg_.ego_vel_sigma;
      g.ego_vels.push_back(f);
    }
    FactorGraph::ExtPrior ep;
    ep.rot = ext_rot;
    ep.pos = ext_pos;
    ep.sigma = cfg_.ext_prior_sigma;
    g.ext_priors.push_back(ep);
    FactorGraph::BiasPrior bp;
    bp.node = 0;
    bp.bg = kfs_.front().bg;
    bp.ba = kfs_.front().ba;
    bp.sigma = cfg_.bias_prior_sigma;
    g.bias_priors.push_back(bp);
  }
  return g;
}

CalibrationOutcome Backend::calibrate_extrinsic(const SO3& ext_rot,
                                                const Vec3& ext_pos) {
  CalibrationOutcome out;
  out.ext_rot = ext_rot;
  out.ext_pos = ext_pos;
  out.yaw_rate_rms = yaw_rate_rms();
  if (int(kfs_.size()) < cfg_.min_calib_keyframes) {
    out.reason = "needs at least " + std::to_string(cfg_.min_calib_keyframes) +
                 " keyframes, have " + std::to_string(kfs_.size());
    return out;
  }
  if (out.yaw_rate_rms < cfg_.min_yaw_rate_rms) {
    out.reason = "insufficient rotational excitation (yaw-rate rms " +
                 std::to_string(out.yaw_rate_rms) + " < " +
                 std::to_string(cfg_.min_yaw_rate_rms) + " rad/s)";
    return out;
  }

  FactorGraph graph = build_graph(true, ext_rot, ext_pos);
  const OptimizeStats stats = optimize(graph, cfg_.optimize);
  if (stats.failed) {
    out.reason = "optimization failed to improve over the seed";
    return out;
  }
  out.accepted = true;
  out.ext_rot = graph.ext_rot;
  out.ext_pos = graph.ext_pos;
  out.cov = extrinsic_covariance(graph);
  return out;
}

}  // namespace doppio
