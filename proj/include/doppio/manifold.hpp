// Rotation-group and composite-state algebra shared by every module:
// SO(3) exp/log, right Jacobians, rigid transforms, and the 24-dof
// navigation state with its boxplus/boxminus operators.
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace doppio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Error-state block layout. Rotation blocks are tangent 3-vectors with
// right perturbation convention: R <- R * Exp(delta).
namespace blk {
inline constexpr int kRot = 0;       // body attitude
inline constexpr int kPos = 3;       // body position
inline constexpr int kExtRot = 6;    // sensor-in-body rotation
inline constexpr int kExtPos = 9;    // sensor-in-body translation
inline constexpr int kVel = 12;      // body velocity (world frame)
inline constexpr int kBg = 15;       // gyro bias
inline constexpr int kBa = 18;       // accel bias
inline constexpr int kGrav = 21;     // gravity vector (world frame)
inline constexpr int kDim = 24;
inline constexpr int kNoiseDim = 12; // [n_gyro, n_accel, n_bg, n_ba]
}  // namespace blk

using StateDelta = Eigen::Matrix<double, blk::kDim, 1>;
using Mat24 = Eigen::Matrix<double, blk::kDim, blk::kDim>;

// Angles below this threshold use series expansions.
inline constexpr double kSmallAngle = 1e-7;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Mat3 so3_exp_matrix(const Vec3& phi);
Vec3 so3_log_matrix(const Mat3& rot);

// Right Jacobian of SO(3) and its inverse.
Mat3 so3_right_jacobian(const Vec3& phi);
Mat3 so3_right_jacobian_inv(const Vec3& phi);

// Unit-quaternion rotation. Renormalized after every composition so that
// chains of 1e5 operations stay orthonormal within 1e-9.
class SO3 {
 public:
  SO3() : q_(Eigen::Quaterniond::Identity()) {}
  explicit SO3(const Eigen::Quaterniond& q) : q_(q.normalized()) {}
  explicit SO3(const Mat3& m) : q_(Eigen::Quaterniond(m).normalized()) {}

  static SO3 identity() { return SO3(); }
  static SO3 exp(const Vec3& phi);

  Vec3 log() const;
  SO3 inverse() const { return SO3(q_.conjugate()); }
  Mat3 matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quat() const { return q_; }

  SO3 operator*(const SO3& rhs) const { return SO3(q_ * rhs.q_); }
  Vec3 operator*(const Vec3& v) const { return q_ * v; }

  // v rotated by the inverse, without forming it.
  Vec3 inv_rotate(const Vec3& v) const { return q_.conjugate() * v; }

  bool is_finite() const { return q_.coeffs().allFinite(); }

 private:
  Eigen::Quaterniond q_;
};

inline SO3 so3_exp(const Vec3& phi) { return SO3::exp(phi); }
inline Vec3 so3_log(const SO3& r) { return r.log(); }

struct SE3 {
  SO3 rot;
  Vec3 trans = Vec3::Zero();

  SE3() = default;
  SE3(const SO3& r, const Vec3& t) : rot(r), trans(t) {}

  static SE3 identity() { return SE3(); }

  SE3 operator*(const SE3& rhs) const {
    return SE3(rot * rhs.rot, rot * rhs.trans + trans);
  }
  Vec3 operator*(const Vec3& p) const { return rot * p + trans; }

  SE3 inverse() const {
    SO3 ri = rot.inverse();
    return SE3(ri, -(ri * trans));
  }
};

// Full system state: body pose, sensor-in-body extrinsic, velocity, IMU
// biases and the gravity vector, in the error-state order of blk::.
// The extrinsic (ext_rot, ext_pos) maps sensor coordinates to body
// coordinates: x_body = ext_rot * x_sensor + ext_pos.
struct NavState {
  SO3 rot;                       // body to world
  Vec3 pos = Vec3::Zero();       // body position in world
  SO3 ext_rot;                   // sensor to body
  Vec3 ext_pos = Vec3::Zero();   // sensor origin in body
  Vec3 vel = Vec3::Zero();       // body velocity in world
  Vec3 bg = Vec3::Zero();        // gyro bias
  Vec3 ba = Vec3::Zero();        // accel bias
  Vec3 grav = Vec3::Zero();      // gravity in world, e.g. (0,0,-9.81)

  SE3 body_to_world() const { return SE3(rot, pos); }
  SE3 sensor_to_body() const { return SE3(ext_rot, ext_pos); }
  SE3 sensor_to_world() const { return body_to_world() * sensor_to_body(); }

  bool is_finite() const;
};

NavState boxplus(const NavState& x, const StateDelta& d);
StateDelta boxminus(const NavState& a, const NavState& b);

}  // namespace doppio
