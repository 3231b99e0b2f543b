#include "doppio/propagation.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace doppio {

NavState imu_step(const NavState& x, const Vec3& gyro, const Vec3& accel,
                  double dt) {
  NavState out = x;
  const Vec3 acc_world = x.rot * (accel - x.ba) + x.grav;
  out.rot = x.rot * SO3::exp((gyro - x.bg) * dt);
  out.vel = x.vel + acc_world * dt;
  out.pos = x.pos + x.vel * dt + 0.5 * dt * dt * acc_world;
  return out;
}

NavState imu_step_noisy(const NavState& x, const Vec3& gyro, const Vec3& accel,
                        double dt, const NoiseVec& w) {
  const Vec3 theta_n = w.segment<3>(0);
  const Vec3 upsilon_n = w.segment<3>(3);
  NavState out = x;
  const Vec3 acc_world = x.rot * (accel - x.ba) + x.grav;
  out.rot = x.rot * SO3::exp((gyro - x.bg) * dt - theta_n);
  out.vel = x.vel + acc_world * dt - x.rot * upsilon_n;
  out.pos = x.pos + x.vel * dt + 0.5 * dt * dt * acc_world -
            0.5 * dt * (x.rot * upsilon_n);
  out.bg = x.bg + w.segment<3>(6);
  out.ba = x.ba + w.segment<3>(9);
  return out;
}

void imu_step_jacobians(const NavState& x, const Vec3& gyro, const Vec3& accel,
                        double dt, MatF* F_x, MatG* F_w) {
  const Vec3 theta = (gyro - x.bg) * dt;
  const Mat3 A_t = so3_exp_matrix(theta).transpose();
  const Mat3 jr = so3_right_jacobian(theta);
  const Mat3 rot = x.rot.matrix();
  const Mat3 acc_hat = skew(accel - x.ba);

  if (F_x) {
    F_x->setIdentity();
    F_x->block<3, 3>(blk::kRot, blk::kRot) = A_t;
    F_x->block<3, 3>(blk::kRot, blk::kBg) = -jr * dt;
    F_x->block<3, 3>(blk::kVel, blk::kRot) = -rot * acc_hat * dt;
    F_x->block<3, 3>(blk::kVel, blk::kBa) = -rot * dt;
    F_x->block<3, 3>(blk::kVel, blk::kGrav) = dt * Mat3::Identity();
    F_x->block<3, 3>(blk::kPos, blk::kVel) = dt * Mat3::Identity();
    F_x->block<3, 3>(blk::kPos, blk::kRot) = -0.5 * dt * dt * rot * acc_hat;
    F_x->block<3, 3>(blk::kPos, blk::kBa) = -0.5 * dt * dt * rot;
    F_x->block<3, 3>(blk::kPos, blk::kGrav) = 0.5 * dt * dt * Mat3::Identity();
  }
  if (F_w) {
    F_w->setZero();
    F_w->block<3, 3>(blk::kRot, 0) = -jr;
    F_w->block<3, 3>(blk::kVel, 3) = -rot;
    F_w->block<3, 3>(blk::kPos, 3) = -0.5 * dt * rot;
    F_w->block<3, 3>(blk::kBg, 6) = Mat3::Identity();
    F_w->block<3, 3>(blk::kBa, 9) = Mat3::Identity();
  }
}

namespace {

void check_symmetric(Mat24& cov) {
  const double asym = (cov - cov.transpose()).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if (asym > 1e-9 * scale) {
    throw std::logic_error("covariance lost symmetry during propagation");
  }
  cov = (0.5 * (cov + cov.transpose())).eval();
}

}  // namespace

std::pair<StateWithCov, PropagationLog> propagate_forward(
    const StateWithCov& swc, const std::vector<ImuSample>& imu,
    const ProcessNoise& noise) {
  if (imu.empty()) {
    throw std::invalid_argument("propagate_forward: empty IMU sequence");
  }
  noise.imu.validate();

  StateWithCov cur = swc;
  PropagationLog log;
  log.records.reserve(imu.size());

  const double sg2 = noise.imu.gyro_noise * noise.imu.gyro_noise;
  const double sa2 = noise.imu.accel_noise * noise.imu.accel_noise;
  const double sbg2 = noise.imu.gyro_bias_rw * noise.imu.gyro_bias_rw;
  const double sba2 = noise.imu.accel_bias_rw * noise.imu.accel_bias_rw;

  for (size_t i = 0; i + 1 < imu.size(); ++i) {
    const ImuSample& s = imu[i];
    const double dt = imu[i + 1].t - s.t;
    if (!(dt > 0)) {
      throw std::invalid_argument(
          "propagate_forward: non-positive IMU step at t=" +
          std::to_string(s.t));
    }
    log.records.push_back({s.t, cur.state, s.gyro, s.accel});

    MatF F_x;
    MatG F_w;
    imu_step_jacobians(cur.state, s.gyro, s.accel, dt, &F_x, &F_w);
    cur.state = imu_step(cur.state, s.gyro, s.accel, dt);

    Eigen::Matrix<double, blk::kNoiseDim, 1> qdiag;
    qdiag << Vec3::Constant(sg2 * dt), Vec3::Constant(sa2 * dt),
        Vec3::Constant(sbg2 * dt), Vec3::Constant(sba2 * dt);
    cur.cov = (F_x * cur.cov * F_x.transpose()).eval();
    cur.cov.noalias() += F_w * qdiag.asDiagonal() * F_w.transpose();
    if (noise.extrinsic_rot_rw > 0) {
      cur.cov.block<3, 3>(blk::kExtRot, blk::kExtRot) +=
          noise.extrinsic_rot_rw * noise.extrinsic_rot_rw * dt *
          Mat3::Identity();
    }
    if (noise.extrinsic_pos_rw > 0) {
      cur.cov.block<3, 3>(blk::kExtPos, blk::kExtPos) +=
          noise.extrinsic_pos_rw * noise.extrinsic_pos_rw * dt *
          Mat3::Identity();
    }
    if (noise.gravity_rw > 0) {
      cur.cov.block<3, 3>(blk::kGrav, blk::kGrav) +=
          noise.gravity_rw * noise.gravity_rw * dt * Mat3::Identity();
    }
    check_symmetric(cur.cov);
  }
  log.records.push_back(
      {imu.back().t, cur.state, imu.back().gyro, imu.back().accel});
  return {cur, std::move(log)};
}

const PropagationLog::Record& PropagationLog::record_before(double t) const {
  if (records.empty()) {
    throw std::invalid_argument("propagation log is empty");
  }
  if (t < begin_time() - 1e-9 || t > end_time() + 1e-9) {
    throw std::invalid_argument(
        "query time " + std::to_string(t) + " outside log interval [" +
        std::to_string(begin_time()) + ", " + std::to_string(end_time()) + "]");
  }
  auto it = std::upper_bound(
      records.begin(), records.end(), t,
      [](double value, const Record& r) { return value < r.t; });
  if (it == records.begin()) return records.front();
  return *(it - 1);
}

NavState PropagationLog::state_at(double t) const {
  const Record& rec = record_before(t);
  const double dt = t - rec.t;
  if (dt <= 0) return rec.state;
  return imu_step(rec.state, rec.gyro, rec.accel, dt);
}

SE3 propagate_backward(const PropagationLog& log, double target_t) {
  const NavState at_t = log.state_at(target_t);  // validates the interval
  return log.end_state().body_to_world().inverse() * at_t.body_to_world();
}

Vec3 predicted_velocity_at(const PropagationLog& log, const NavState& state,
                           double t) {
  const PropagationLog::Record& rec = log.record_before(t);
  const NavState at_t = log.state_at(t);
  const NavState& log_end = log.end_state();

  // Relative motion from the log, re-anchored at `state` so that an
  // updated end state (same interval) stays consistent.
  const SO3 rot_t = state.rot * (log_end.rot.inverse() * at_t.rot);
  const Vec3 vel_t = state.vel + (at_t.vel - log_end.vel);
  const Vec3 omega = rec.gyro - state.bg;

  const Vec3 in_body = rot_t.inv_rotate(vel_t) + omega.cross(state.ext_pos);
  return state.ext_rot.inv_rotate(in_body);
}

}  // namespace doppio
