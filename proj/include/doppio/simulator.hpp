// Deterministic sensor simulator. A scenario defines a planar trajectory
// (piecewise stationary/straight/arc/spline segments), a static world of
// planar surfaces and scatter clusters, moving actors, sensor and IMU
// parameters, and a seed. simulate() writes a complete log directory plus
// ground-truth files and returns the ground truth in memory.
//
// The ground-truth trajectory is defined on the IMU grid by the same
// zero-order-hold recursion the filter integrates: per IMU interval the
// body rate and world acceleration are constant. Consequently, forward
// differences of the emitted poses reproduce the emitted noiseless IMU
// exactly, and noiseless integration reproduces the poses to machine
// precision.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "doppio/config.hpp"
#include "doppio/log_io.hpp"
#include "doppio/sensor_types.hpp"

namespace doppio {

struct TrajectorySegment {
  enum class Kind { kStationary, kStraight, kArc, kSpline };
  Kind kind = Kind::kStationary;
  double duration = 1.0;   // s; for splines derived from length/speed
  double accel = 0;        // forward acceleration, m/s^2
  double yaw_rate = 0;     // rad/s (arc)
  double speed = 0;        // m/s (spline, constant)
  std::vector<Vec3> control_points;  // spline only, z ignored
};

struct PlanarSurface {
  Vec3 center = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  double half_u = 1, half_v = 1;  // rectangle half extents, m
  int points_per_scan = 0;
};

struct ScatterCluster {
  Vec3 center = Vec3::Zero();
  double radius = 0.5;
  int points_per_scan = 0;
};

// Point cluster moving with a piecewise-constant velocity profile; the
// last profile entry extends to the end of the run.
struct Actor {
  Vec3 start = Vec3::Zero();
  std::vector<std::pair<double, Vec3>> motion;  // (duration s, velocity)
  double radius = 1.0;
  int points_per_scan = 0;

  Vec3 position_at(double t) const;
  Vec3 velocity_at(double t) const;
};

struct SimScenario {
  std::string name = "unnamed";
  std::vector<TrajectorySegment> trajectory;
  std::vector<PlanarSurface> surfaces;
  std::vector<ScatterCluster> clusters;
  std::vector<Actor> actors;

  ScanKind kind = ScanKind::kRadar;
  double scan_rate = 10;    // scans/s; scan period = 1/scan_rate
  double fov_deg = 360;     // full cone angle about sensor +x
  double max_range = 60;    // m
  SO3 ext_rot_true;         // sensor-in-body, actual mounting
  Vec3 ext_pos_true = Vec3::Zero();
  SO3 ext_rot_guess;        // written to the log meta file
  Vec3 ext_pos_guess = Vec3::Zero();

  double imu_rate = 100;    // Hz
  Vec3 true_bg = Vec3::Zero();
  Vec3 true_ba = Vec3::Zero();
  NoiseParams noise;        // nominal; also written to meta
  double noise_scale = 1;   // 0 = noiseless generation
  double gravity_magnitude = 9.81;
  double outlier_fraction = 0;  // injected random returns, labeled dynamic
  uint32_t seed = 1;

  double total_duration() const;
  void validate() const;  // throws std::invalid_argument

  static SimScenario from_config(const ConfigTable& cfg);
  std::string to_config_text() const;
};

struct GroundTruthSample {
  double t = 0;
  SO3 rot;                      // body to world
  Vec3 pos = Vec3::Zero();
  Vec3 vel = Vec3::Zero();      // world frame
  Vec3 body_rate = Vec3::Zero();     // drives [t, next)
  Vec3 world_accel = Vec3::Zero();   // drives [t, next)
};

// Reference (undistorted, noise-free) view of one emitted point: position
// in the sensor frame at scan end, doppler as measured instantaneously at
// scan end, true label. Rows align one-to-one with the emitted scan.
struct ReferencePoint {
  Vec3 position = Vec3::Zero();
  double doppler = 0;
  PointLabel label = PointLabel::kStatic;
  Vec3 world_velocity = Vec3::Zero();  // target velocity (zero for static)
};

struct ReferenceScan {
  double end_time = 0;
  std::vector<ReferencePoint> points;
};

struct GroundTruth {
  std::vector<GroundTruthSample> samples;  // IMU grid
  std::vector<ReferenceScan> reference_scans;
  SO3 ext_rot;  // true extrinsic
  Vec3 ext_pos = Vec3::Zero();
  Vec3 true_bg = Vec3::Zero();
  Vec3 true_ba = Vec3::Zero();
  double gravity_magnitude = 9.81;

  const GroundTruthSample& sample_at(double t) const;  // last sample <= t
  // Body pose/velocity at t via the zero-order-hold partial step.
  void interpolate(double t, SO3* rot, Vec3* pos, Vec3* vel) const;
  // True sensor-frame velocity at t (lever arm included).
  Vec3 sensor_velocity(double t) const;
};

// Runs the scenario, writes log + ground-truth files into out_dir.
GroundTruth simulate(const SimScenario& scenario, const std::string& out_dir);

// Built-in scenario set.
std::vector<std::string> scenario_names();
SimScenario scenario_by_name(const std::string& name);

// Copy with zero measurement noise, zero biases, zero outliers.
SimScenario make_noiseless(SimScenario sc);

}  // namespace doppio
