// Keyframe selection and IMU preintegration. A keyframe stores everything
// the back end needs: the front-end pose, the sensor-frame ego velocity,
// a downsampled static scan in body coordinates, a place-recognition
// descriptor, and the preintegrated IMU delta to the next keyframe.
#pragma once

#include <optional>
#include <vector>

#include "doppio/scan_context.hpp"
#include "doppio/sensor_types.hpp"

namespace doppio {

// Relative IMU integral over one interval, bias-corrected at the fixed
// reference (bg_ref, ba_ref) and free of gravity and the initial state:
//   R_b = R_a * rot,  v_b = v_a + g dt + R_a * vel,
//   p_b = p_a + v_a dt + 0.5 g dt^2 + R_a * pos.
// The discretization matches the forward propagation (zero-order hold,
// one Euler step per sample), so composed deltas equal the full-interval
// integral exactly on shared sample grids.
struct Preintegration {
  double dt = 0;
  SO3 rot;
  Vec3 vel = Vec3::Zero();
  Vec3 pos = Vec3::Zero();
  Eigen::Matrix<double, 9, 9> cov =
      Eigen::Matrix<double, 9, 9>::Zero();  // [rot, vel, pos]
  Vec3 bg_ref = Vec3::Zero();
  Vec3 ba_ref = Vec3::Zero();
};

// Integrates the samples whose hold intervals overlap [t0, t1]; each
// sample at t_k drives [t_k, t_{k+1}) clipped to the window. Samples must
// be time-ordered and bracket the window.
Preintegration preintegrate(const std::vector<ImuSample>& imu, double t0,
                            double t1, const Vec3& bg, const Vec3& ba,
                            const NoiseParams& noise);

// Chains two consecutive deltas (b follows a, same bias reference).
Preintegration compose(const Preintegration& a, const Preintegration& b);

struct KeyframePolicy {
  double min_translation = 1.0;    // m
  double min_rotation_deg = 10.0;
};

struct Keyframe {
  int id = -1;
  double t = 0;
  SE3 odom_pose;             // front-end pose at creation, never rewritten
  SE3 pose;                  // current estimate, updated by optimization
  Vec3 ego_vel = Vec3::Zero();     // sensor frame, from the doppler solve
  Vec3 vel_world = Vec3::Zero();   // front-end body velocity
  Vec3 gyro = Vec3::Zero();        // raw body rate at the keyframe time
  Vec3 bg = Vec3::Zero();
  Vec3 ba = Vec3::Zero();
  Vec3 grav = Vec3(0, 0, -9.81);   // front-end gravity estimate
  std::vector<Vec3> scan_body;     // downsampled static points
  Descriptor descriptor;
  // delta covering [this->t, next->t]; empty (dt == 0) on the newest frame
  Preintegration to_next;
};

// True when `current` has moved far enough from the last keyframe pose.
// The first frame (no previous keyframe) always keys.
bool should_key(const std::optional<SE3>& last_kf_pose, const SE3& current,
                const KeyframePolicy& policy);

}  // namespace doppio
