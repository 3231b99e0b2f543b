#include "doppio/propagation.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>

#include "test_util.hpp"

namespace doppio {
namespace {

using test::random_state;
using test::random_vec;

std::vector<ImuSample> constant_imu(const Vec3& gyro, const Vec3& accel,
                                    double duration, double rate_hz) {
  std::vector<ImuSample> out;
  const double dt = 1.0 / rate_hz;
  const int n = static_cast<int>(std::round(duration * rate_hz));
  for (int i = 0; i <= n; ++i) out.push_back({i * dt, gyro, accel});
  return out;
}

StateWithCov rest_state() {
  StateWithCov swc;
  swc.state.grav = Vec3(0, 0, -9.81);
  swc.cov = Mat24::Identity() * 1e-4;
  return swc;
}

TEST(Propagation, StaticEquilibrium) {
  auto [out, log] = propagate_forward(
      rest_state(), constant_imu(Vec3::Zero(), Vec3(0, 0, 9.81), 1.0, 100),
      ProcessNoise{});
  EXPECT_LT(out.state.vel.norm(), 1e-12);
  EXPECT_LT(out.state.pos.norm(), 1e-12);
  EXPECT_LT(out.state.rot.log().norm(), 1e-12);
  EXPECT_EQ(log.records.size(), 101u);
}

TEST(Propagation, ConstantAcceleration) {
  auto [out, log] = propagate_forward(
      rest_state(), constant_imu(Vec3::Zero(), Vec3(1, 0, 9.81), 1.0, 100),
      ProcessNoise{});
  EXPECT_LT((out.state.vel - Vec3(1, 0, 0)).norm(), 1e-3);
  EXPECT_LT((out.state.pos - Vec3(0.5, 0, 0)).norm(), 1e-3);
}

TEST(Propagation, ConstantYawRate) {
  // Gravity-cancelling accel while spinning needs body-frame compensation;
  // use zero gravity instead to isolate the rotation.
  StateWithCov swc;
  swc.state.grav = Vec3::Zero();
  auto [out, log] = propagate_forward(
      swc, constant_imu(Vec3(0, 0, 0.5), Vec3::Zero(), 2.0, 100),
      ProcessNoise{});
  EXPECT_LT((out.state.rot.log() - Vec3(0, 0, 1.0)).norm(), 1e-9);
}

TEST(Propagation, BiasCorrectionApplied) {
  StateWithCov swc = rest_state();
  swc.state.bg = Vec3(0.02, -0.01, 0.005);
  swc.state.ba = Vec3(0.1, 0, -0.05);
  // Measurements carrying exactly the bias keep the state still.
  auto [out, log] = propagate_forward(
      swc,
      constant_imu(swc.state.bg, Vec3(0.1, 0, 9.76), 1.0, 100),
      ProcessNoise{});
  EXPECT_LT(out.state.vel.norm(), 1e-12);
  EXPECT_LT(out.state.rot.log().norm(), 1e-12);
}

TEST(Propagation, JacobiansMatchFiniteDifferences) {
  std::mt19937 rng(71);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    NavState x = random_state(rng);
    Vec3 gyro = random_vec(rng, 1.0);
    Vec3 accel = random_vec(rng, 5.0) + Vec3(0, 0, 9.8);
    double dt = 0.005 + 0.01 * trial / 20.0;

    MatF F_x;
    MatG F_w;
    imu_step_jacobians(x, gyro, accel, dt, &F_x, &F_w);

    for (int k = 0; k < blk::kDim; ++k) {
      StateDelta e = StateDelta::Zero();
      e[k] = h;
      StateDelta fd = boxminus(imu_step(boxplus(x, e), gyro, accel, dt),
                               imu_step(boxplus(x, -e), gyro, accel, dt)) /
                      (2 * h);
      StateDelta col = F_x.col(k);
      EXPECT_LT((fd - col).norm() / std::max(1.0, col.norm()), 1e-5)
          << "F_x col " << k << " trial " << trial;
    }
    for (int k = 0; k < blk::kNoiseDim; ++k) {
      NoiseVec w = NoiseVec::Zero();
      w[k] = h;
      StateDelta fd = boxminus(imu_step_noisy(x, gyro, accel, dt, w),
                               imu_step_noisy(x, gyro, accel, dt, -w)) /
                      (2 * h);
      StateDelta col = F_w.col(k);
      EXPECT_LT((fd - col).norm() / std::max(1.0, col.norm()), 1e-5)
          << "F_w col " << k << " trial " << trial;
    }
  }
}

TEST(Propagation, CovarianceGrowsAndStaysSymmetric) {
  std::mt19937 rng(73);
  StateWithCov swc;
  swc.state = random_state(rng);
  swc.cov = Mat24::Identity() * 1e-6;
  ProcessNoise noise;
  auto [out, log] = propagate_forward(
      swc, constant_imu(Vec3(0.1, 0.2, -0.1), Vec3(0.5, 0, 9.8), 1.0, 100),
      noise);
  EXPECT_GT(out.cov.trace(), swc.cov.trace());
  EXPECT_LT((out.cov - out.cov.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  Eigen::SelfAdjointEigenSolver<Mat24> eig(out.cov);
  EXPECT_GT(eig.eigenvalues().minCoeff(), -1e-9);
}

TEST(Propagation, ExtrinsicAndGravityProcessNoiseOffByDefault) {
  StateWithCov swc = rest_state();
  swc.cov = Mat24::Zero();
  auto [out, log] = propagate_forward(
      swc, constant_imu(Vec3::Zero(), Vec3(0, 0, 9.81), 0.5, 100),
      ProcessNoise{});
  EXPECT_EQ(out.cov.block(blk::kExtRot, blk::kExtRot, 3, 3).norm(), 0.0);
  EXPECT_EQ(out.cov.block(blk::kExtPos, blk::kExtPos, 3, 3).norm(), 0.0);
  EXPECT_EQ(out.cov.block(blk::kGrav, blk::kGrav, 3, 3).norm(), 0.0);

  ProcessNoise with_rw;
  with_rw.extrinsic_rot_rw = 1e-3;
  with_rw.extrinsic_pos_rw = 1e-3;
  with_rw.gravity_rw = 1e-3;
  auto [out2, log2] = propagate_forward(
      swc, constant_imu(Vec3::Zero(), Vec3(0, 0, 9.81), 0.5, 100), with_rw);
  EXPECT_GT(out2.cov.block(blk::kExtRot, blk::kExtRot, 3, 3).trace(), 0.0);
  EXPECT_GT(out2.cov.block(blk::kGrav, blk::kGrav, 3, 3).trace(), 0.0);
}

TEST(Propagation, RejectsNonPositiveStep) {
  auto imu = constant_imu(Vec3::Zero(), Vec3(0, 0, 9.81), 0.1, 100);
  imu[5].t = imu[4].t;
  EXPECT_THROW(propagate_forward(rest_state(), imu, ProcessNoise{}),
               std::invalid_argument);
}

TEST(Propagation, Deterministic) {
  std::mt19937 rng(79);
  StateWithCov swc;
  swc.state = random_state(rng);
  swc.cov = Mat24::Identity() * 1e-3;
  auto imu = constant_imu(Vec3(0.3, -0.1, 0.2), Vec3(1, -2, 9.5), 0.5, 100);
  auto [a, la] = propagate_forward(swc, imu, ProcessNoise{});
  auto [b, lb] = propagate_forward(swc, imu, ProcessNoise{});
  EXPECT_EQ(memcmp(a.cov.data(), b.cov.data(), sizeof(double) * 24 * 24), 0);
  EXPECT_EQ(boxminus(a.state, b.state).norm(), 0.0);
}

TEST(Backward, IdentityAtScanEnd) {
  auto [out, log] = propagate_forward(
      rest_state(), constant_imu(Vec3::Zero(), Vec3(0, 0, 9.81), 0.1, 100),
      ProcessNoise{});
  SE3 rel = propagate_backward(log, log.end_time());
  EXPECT_LT(rel.trans.norm(), 1e-12);
  EXPECT_LT(rel.rot.log().norm(), 1e-12);
}

TEST(Backward, ConstantVelocityTranslation) {
  StateWithCov swc = rest_state();
  swc.state.vel = Vec3(1, 0, 0);
  auto [out, log] = propagate_forward(
      swc, constant_imu(Vec3::Zero(), Vec3(0, 0, 9.81), 0.1, 100),
      ProcessNoise{});
  SE3 rel = propagate_backward(log, log.end_time() - 0.05);
  EXPECT_LT((rel.trans - Vec3(-0.05, 0, 0)).norm(), 1e-6);
}

TEST(Backward, RecoversIntermediateStatesExactly) {
  std::mt19937 rng(83);
  StateWithCov swc;
  swc.state = random_state(rng);
  auto imu = constant_imu(Vec3(0.2, -0.3, 0.4), Vec3(0.5, 1, 9.0), 0.1, 100);
  // perturb rates per sample so the trajectory is not a pure screw
  for (auto& s : imu) {
    s.gyro += random_vec(rng, 0.05);
    s.accel += random_vec(rng, 0.2);
  }
  auto [out, log] = propagate_forward(swc, imu, ProcessNoise{});
  for (const auto& rec : log.records) {
    SE3 rel = propagate_backward(log, rec.t);
    SE3 expect =
        log.end_state().body_to_world().inverse() * rec.state.body_to_world();
    EXPECT_LT((rel.trans - expect.trans).norm(), 1e-12);
    EXPECT_LT((rel.rot.inverse() * expect.rot).log().norm(), 1e-12);
  }
  // mid-interval query sits between snapshots
  double mid = (log.records[3].t + log.records[4].t) / 2;
  SE3 rel = propagate_backward(log, mid);
  EXPECT_TRUE(rel.trans.allFinite());
}

TEST(Backward, RejectsOutOfRangeTarget) {
  auto [out, log] = propagate_forward(
      rest_state(), constant_imu(Vec3::Zero(), Vec3(0, 0, 9.81), 0.1, 100),
      ProcessNoise{});
  EXPECT_THROW(propagate_backward(log, -0.5), std::invalid_argument);
  EXPECT_THROW(propagate_backward(log, log.end_time() + 0.5),
               std::invalid_argument);
}

TEST(PredictedVelocity, ReducesToBodyVelocity) {
  StateWithCov swc = rest_state();
  swc.state.rot = SO3::exp(Vec3(0, 0, M_PI / 4));
  swc.state.vel = Vec3(2, 0, 0);
  auto [out, log] = propagate_forward(
      swc, constant_imu(Vec3::Zero(), swc.state.rot.inv_rotate(Vec3(0, 0, 9.81)),
                        0.1, 100),
      ProcessNoise{});
  Vec3 v = predicted_velocity_at(log, out.state, log.end_time());
  EXPECT_LT((v - out.state.rot.inv_rotate(out.state.vel)).norm(), 1e-9);
}

TEST(PredictedVelocity, LeverArm) {
  StateWithCov swc;
  swc.state.grav = Vec3::Zero();
  swc.state.ext_pos = Vec3(1, 0, 0);
  auto [out, log] = propagate_forward(
      swc, constant_imu(Vec3(0, 0, 1), Vec3::Zero(), 0.01, 1000),
      ProcessNoise{});
  Vec3 v = predicted_velocity_at(log, out.state, log.begin_time());
  EXPECT_LT((v - Vec3(0, 1, 0)).norm(), 1e-6);
}

TEST(PredictedVelocity, UsesZeroOrderHoldGyro) {
  StateWithCov swc;
  swc.state.grav = Vec3::Zero();
  swc.state.ext_pos = Vec3(1, 0, 0);
  std::vector<ImuSample> imu;
  imu.push_back({0.0, Vec3(0, 0, 1), Vec3::Zero()});
  imu.push_back({0.01, Vec3(0, 0, 3), Vec3::Zero()});
  auto [out, log] = propagate_forward(swc, imu, ProcessNoise{});
  // t inside [0, 0.01) is driven by the sample at 0
  Vec3 v_mid = predicted_velocity_at(log, out.state, 0.005);
  EXPECT_NEAR(v_mid.y(), 1.0, 1e-9);
  // at the end the sample at the end time applies
  Vec3 v_end = predicted_velocity_at(log, out.state, 0.01);
  EXPECT_NEAR(v_end.y(), 3.0, 1e-9);
}

}  // namespace
}  // namespace doppio
