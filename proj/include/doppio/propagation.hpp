// IMU-driven forward propagation of the state and covariance, with a
// per-step log that supports exact backward queries (relative poses and
// sensor-frame velocities at any time inside the scan interval).
//
// Discretization: zero-order hold, one Euler step per IMU sample. The
// sample at t_k drives the interval [t_k, t_{k+1}); an input sequence
// therefore starts with the sample at the interval begin time.
#pragma once

#include <utility>
#include <vector>

#include "doppio/manifold.hpp"
#include "doppio/sensor_types.hpp"

namespace doppio {

struct StateWithCov {
  NavState state;
  Mat24 cov = Mat24::Identity();
};

// Per-second process noise. IMU densities feed the main Q blocks; the
// extrinsic and gravity random walks default to zero (quasi-static).
struct ProcessNoise {
  NoiseParams imu;
  double extrinsic_rot_rw = 0;  // rad/sqrt(s)
  double extrinsic_pos_rw = 0;  // m/sqrt(s)
  double gravity_rw = 0;        // m/s^2/sqrt(s)
};

using NoiseVec = Eigen::Matrix<double, blk::kNoiseDim, 1>;
using MatF = Mat24;
using MatG = Eigen::Matrix<double, blk::kDim, blk::kNoiseDim>;

// One discrete step of length dt driven by a raw gyro/accel sample.
NavState imu_step(const NavState& x, const Vec3& gyro, const Vec3& accel,
                  double dt);

// Same step with additive noise impulses w = [theta_n, upsilon_n, beta_g,
// beta_a]; used by the finite-difference Jacobian checks.
NavState imu_step_noisy(const NavState& x, const Vec3& gyro, const Vec3& accel,
                        double dt, const NoiseVec& w);

// Error-state transition F_x (d step / d state) and noise input F_w
// (d step / d w) of the discrete step, right-perturbation convention.
void imu_step_jacobians(const NavState& x, const Vec3& gyro, const Vec3& accel,
                        double dt, MatF* F_x, MatG* F_w);

// Snapshot trail over one scan interval.
struct PropagationLog {
  struct Record {
    double t = 0;
    NavState state;  // state at t, before the step this sample drives
    Vec3 gyro = Vec3::Zero();
    Vec3 accel = Vec3::Zero();
  };

  std::vector<Record> records;  // time-ordered; last one is at end_time

  double begin_time() const { return records.front().t; }
  double end_time() const { return records.back().t; }
  const NavState& end_state() const { return records.back().state; }
  const Vec3& end_gyro() const { return records.back().gyro; }

  // Last record with record.t <= t (the sample driving t's interval).
  const Record& record_before(double t) const;

  // State at any t inside [begin, end], via a partial step from the
  // bracketing record. Exact for the zero-order-hold input model.
  NavState state_at(double t) const;
};

// Integrates the sample sequence (first sample at the current state's
// time) and propagates the covariance through each step.
std::pair<StateWithCov, PropagationLog> propagate_forward(
    const StateWithCov& swc, const std::vector<ImuSample>& imu,
    const ProcessNoise& noise);

// Relative body pose taking coordinates in the body frame at target_t to
// the body frame at scan end: T = T_end^-1 * T(target_t).
SE3 propagate_backward(const PropagationLog& log, double target_t);

// Sensor-frame velocity prediction at time t: the body velocity seen from
// the sensor plus the lever-arm term from the angular rate at t. Relative
// motion comes from the log; extrinsic, biases and end-time kinematics
// from `state` (normally the log's end state).
Vec3 predicted_velocity_at(const PropagationLog& log, const NavState& state,
                           double t);

}  // namespace doppio
