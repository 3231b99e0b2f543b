// Back end: keyframe bookkeeping, loop-closure detection/verification and
// pose-graph optimization, plus batch extrinsic refinement. Runs
// synchronously (offer_frame returns any correction immediately), which
// keeps results deterministic; the pipeline decides when to call it.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "doppio/factor_graph.hpp"
#include "doppio/keyframe.hpp"
#include "doppio/registration.hpp"
#include "doppio/scan_context.hpp"

namespace doppio {

struct BackendConfig {
  KeyframePolicy policy;
  ScanContextConfig scan_context;
  RegistrationConfig registration;
  OptimizeOptions optimize;
  bool loop_closure = true;
  double scan_voxel = 0.3;  // keyframe scan downsampling, m

  Vec6 prior_sigma = (Vec6() << 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4).finished();
  Vec6 odometry_sigma = (Vec6() << 0.02, 0.02, 0.02, 0.05, 0.05, 0.05).finished();
  Vec6 loop_sigma = (Vec6() << 0.02, 0.02, 0.02, 0.1, 0.1, 0.1).finished();
  // weak: the extrinsic should be carried by the data once the excitation
  // gate passes, not pulled back to the seed
  Vec6 ext_prior_sigma = (Vec6() << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5).finished();
  Vec3 ego_vel_sigma = Vec3::Constant(0.05);
  Vec6 bias_prior_sigma = (Vec6() << 1e-2, 1e-2, 1e-2, 5e-2, 5e-2, 5e-2).finished();
  Vec6 bias_walk_sigma = (Vec6() << 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3).finished();

  // calibration gate: enough keyframes and enough turning
  int min_calib_keyframes = 20;
  double min_yaw_rate_rms = 0.1;  // rad/s

  NoiseParams imu_noise;  // preintegration covariance source
};

struct LoopEvent {
  int from = -1, to = -1;        // keyframe ids (from = earlier)
  SE3 rel;                       // pose of `to` in `from`'s frame
  double descriptor_distance = 0;
  double inlier_rms = 0;
};

struct CalibrationOutcome {
  bool accepted = false;
  std::string reason;            // why it was declined
  SO3 ext_rot;
  Vec3 ext_pos = Vec3::Zero();
  Mat6 cov = Mat6::Identity();
  double yaw_rate_rms = 0;
};

// Registers b's stored scan onto a's, seeded by the descriptor yaw hint,
// and returns the relative pose (b in a's frame) with its covariance when
// the fitness gate passes. Non-convergence means rejection, not an error.
std::optional<std::pair<SE3, Mat6>> verify_loop(const Keyframe& a,
                                                const Keyframe& b,
                                                double yaw_hint,
                                                const RegistrationConfig& cfg,
                                                double* inlier_rms = nullptr);

class Backend {
 public:
  explicit Backend(const BackendConfig& cfg) : cfg_(cfg) {}

  // The front end keeps drifting in its own continuous odometry frame and
  // is never rebased; the back end maintains the map-frame keyframe poses.
  struct FrameInput {
    double t = 0;
    NavState state;                      // front-end posterior, odometry frame
    std::vector<Vec3> static_points_body;
    Vec3 ego_vel = Vec3::Zero();         // sensor frame
    Vec3 gyro = Vec3::Zero();            // raw rate at frame time
  };

  // Rigid map-frame jump of the newest keyframe produced by a verified
  // loop, plus the full corrected keyframe trajectory.
  struct Correction {
    SE3 new_from_old;
    std::vector<SE3> keyframe_poses;
  };

  // IMU stream for preintegration; feed in time order.
  void push_imu(const ImuSample& s);

  // Offers one front-end frame. Keys it when the policy fires; a verified
  // loop then optimizes the pose graph and yields a correction.
  std::optional<Correction> offer_frame(const FrameInput& in);

  // Joint optimization including the extrinsic node, seeded by the
  // front-end estimate. Declined (with reason) without enough keyframes
  // or rotational excitation.
  CalibrationOutcome calibrate_extrinsic(const SO3& ext_rot,
                                         const Vec3& ext_pos);

  // Pose graph over the current keyframes (odometry chain + loops, plus
  // the calibration factors when with_extrinsic).
  FactorGraph build_graph(bool with_extrinsic, const SO3& ext_rot,
                          const Vec3& ext_pos) const;

  const std::vector<Keyframe>& keyframes() const { return kfs_; }
  const std::vector<LoopEvent>& loops() const { return loops_; }
  double yaw_rate_rms() const;

  // accumulated loop correction; map-frame pose = map_from_odom * odom pose
  const SE3& map_from_odom() const { return map_from_odom_; }

 private:
  BackendConfig cfg_;
  std::vector<Keyframe> kfs_;
  std::vector<Descriptor> descriptors_;
  std::vector<LoopEvent> loops_;
  std::vector<ImuSample> imu_buf_;
  SE3 map_from_odom_;
};

}  // namespace doppio
