#include "doppio/keyframe.hpp"

#include <cmath>
#include <stdexcept>

namespace doppio {

Preintegration preintegrate(const std::vector<ImuSample>& imu, double t0,
                            double t1, const Vec3& bg, const Vec3& ba,
                            const NoiseParams& noise) {
  if (t1 < t0) throw std::invalid_argument("preintegrate: t1 < t0");
  Preintegration d;
  d.dt = t1 - t0;
  d.bg_ref = bg;
  d.ba_ref = ba;

  using Mat9 = Eigen::Matrix<double, 9, 9>;
  for (size_t k = 0; k < imu.size(); ++k) {
    const double hold_begin = std::max(imu[k].t, t0);
    const double hold_end =
        std::min(k + 1 < imu.size() ? imu[k + 1].t : t1, t1);
    const double h = hold_end - hold_begin;
    if (h <= 0) continue;

    const Vec3 w = imu[k].gyro - bg;
    const Vec3 a = imu[k].accel - ba;
    const Mat3 rot = d.rot.matrix();

    Mat9 f = Mat9::Identity();
    f.block<3, 3>(0, 0) = so3_exp_matrix(w * h).transpose();
    f.block<3, 3>(3, 0) = -rot * skew(a) * h;
    f.block<3, 3>(6, 0) = -0.5 * h * h * rot * skew(a);
    f.block<3, 3>(6, 3) = h * Mat3::Identity();

    Eigen::Matrix<double, 9, 6> g = Eigen::Matrix<double, 9, 6>::Zero();
    g.block<3, 3>(0, 0) = -so3_right_jacobian(w * h);
    g.block<3, 3>(3, 3) = -rot;
    g.block<3, 3>(6, 3) = -0.5 * h * rot;
    Eigen::Matrix<double, 6, 6> q = Eigen::Matrix<double, 6, 6>::Zero();
    q.diagonal().head<3>().setConstant(noise.gyro_noise * noise.gyro_noise * h);
    q.diagonal().tail<3>().setConstant(noise.accel_noise * noise.accel_noise *
                                       h);
    d.cov = f * d.cov * f.transpose() + g * q * g.transpose();

    d.pos += d.vel * h + 0.5 * h * h * (d.rot * a);
    d.vel += d.rot * a * h;
    d.rot = d.rot * SO3::exp(w * h);
  }
  return d;
}

Preintegration compose(const Preintegration& a, const Preintegration& b) {
  Preintegration out;
  out.dt = a.dt + b.dt;
  out.bg_ref = a.bg_ref;
  out.ba_ref = a.ba_ref;
  out.rot = a.rot * b.rot;
  out.vel = a.vel + a.rot * b.vel;
  out.pos = a.pos + a.vel * b.dt + a.rot * b.pos;

  // push a's uncertainty through b's interval, then add b's own
  using Mat9 = Eigen::Matrix<double, 9, 9>;
  const Mat3 ra = a.rot.matrix();
  Mat9 f = Mat9::Identity();
  f.block<3, 3>(0, 0) = b.rot.matrix().transpose();
  f.block<3, 3>(3, 0) = -ra * skew(b.vel);
  f.block<3, 3>(6, 0) = -ra * skew(b.pos);
  f.block<3, 3>(6, 3) = b.dt * Mat3::Identity();
  Mat9 ad = Mat9::Identity();
  ad.block<3, 3>(3, 3) = ra;
  ad.block<3, 3>(6, 6) = ra;
  out.cov = f * a.cov * f.transpose() + ad * b.cov * ad.transpose();
  return out;
}

bool should_key(const std::optional<SE3>& last_kf_pose, const SE3& current,
                const KeyframePolicy& policy) {
  if (!last_kf_pose) return true;
  const SE3 rel = last_kf_pose->inverse() * current;
  const double angle_deg = rel.rot.log().norm() * 180.0 / M_PI;
  return rel.trans.norm() >= policy.min_translation ||
         angle_deg >= policy.min_rotation_deg;
}

}  // namespace doppio
