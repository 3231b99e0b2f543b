#include "doppio/manifold.hpp"

namespace doppio {

Mat3 so3_exp_matrix(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 hat = skew(phi);
  if (theta < kSmallAngle) {
    // 2nd-order series; error O(theta^3) is below double round-off here.
    return Mat3::Identity() + hat + 0.5 * hat * hat;
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + s * hat + c * hat * hat;
}

Vec3 so3_log_matrix(const Mat3& rot) {
  return SO3(rot).log();
}

Mat3 so3_right_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 hat = skew(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * hat + (1.0 / 6.0) * hat * hat;
  }
  const double t2 = theta * theta;
  const double a = (1.0 - std::cos(theta)) / t2;
  const double b = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::Identity() - a * hat + b * hat * hat;
}

Mat3 so3_right_jacobian_inv(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 hat = skew(phi);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * hat + (1.0 / 12.0) * hat * hat;
  }
  const double half = 0.5 * theta;
  const double cot = half / std::tan(half);
  return Mat3::Identity() + 0.5 * hat +
         (1.0 - cot) / (theta * theta) * hat * hat;
}

SO3 SO3::exp(const Vec3& phi) {
  const double theta = phi.norm();
  Eigen::Quaterniond q;
  if (theta < kSmallAngle) {
    // sin(t/2)/t ~ 1/2 - t^2/48
    const double k = 0.5 - theta * theta / 48.0;
    q = Eigen::Quaterniond(1.0 - theta * theta / 8.0, k * phi.x(), k * phi.y(),
                           k * phi.z());
  } else {
    const double half = 0.5 * theta;
    const double k = std::sin(half) / theta;
    q = Eigen::Quaterniond(std::cos(half), k * phi.x(), k * phi.y(),
                           k * phi.z());
  }
  return SO3(q);
}

Vec3 SO3::log() const {
  Eigen::Quaterniond q = q_;
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const double vn = q.vec().norm();
  if (vn < kSmallAngle) {
    // angle ~ 2*vn/w for small rotations
    return (2.0 / q.w()) * q.vec();
  }
  const double angle = 2.0 * std::atan2(vn, q.w());
  return (angle / vn) * q.vec();
}

bool NavState::is_finite() const {
  return rot.is_finite() && ext_rot.is_finite() && pos.allFinite() &&
         ext_pos.allFinite() && vel.allFinite() && bg.allFinite() &&
         ba.allFinite() && grav.allFinite();
}

NavState boxplus(const NavState& x, const StateDelta& d) {
  if (!d.allFinite() || !x.is_finite()) {
    throw std::invalid_argument("boxplus: non-finite input");
  }
  NavState out = x;
  out.rot = x.rot * SO3::exp(d.segment<3>(blk::kRot));
  out.pos += d.segment<3>(blk::kPos);
  out.ext_rot = x.ext_rot * SO3::exp(d.segment<3>(blk::kExtRot));
  out.ext_pos += d.segment<3>(blk::kExtPos);
  out.vel += d.segment<3>(blk::kVel);
  out.bg += d.segment<3>(blk::kBg);
  out.ba += d.segment<3>(blk::kBa);
  out.grav += d.segment<3>(blk::kGrav);
  return out;
}

StateDelta boxminus(const NavState& a, const NavState& b) {
  StateDelta d;
  d.segment<3>(blk::kRot) = (b.rot.inverse() * a.rot).log();
  d.segment<3>(blk::kPos) = a.pos - b.pos;
  d.segment<3>(blk::kExtRot) = (b.ext_rot.inverse() * a.ext_rot).log();
  d.segment<3>(blk::kExtPos) = a.ext_pos - b.ext_pos;
  d.segment<3>(blk::kVel) = a.vel - b.vel;
  d.segment<3>(blk::kBg) = a.bg - b.bg;
  d.segment<3>(blk::kBa) = a.ba - b.ba;
  d.segment<3>(blk::kGrav) = a.grav - b.grav;
  return d;
}

}  // namespace doppio
