#include "doppio/estimator.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <random>

#include "doppio/doppler.hpp"
#include "test_util.hpp"

namespace doppio {
namespace {

using test::TempDir;
using test::random_vec;
using test::random_rotation;

MapIndex plane_map(const SO3& orientation, double spacing = 0.8,
                   int half = 8) {
  MapIndex index;
  std::vector<Vec3> pts;
  for (int i = -half; i <= half; ++i) {
    for (int j = -half; j <= half; ++j) {
      pts.push_back(orientation * Vec3(i * spacing, j * spacing, 0));
    }
  }
  index.insert_scan(pts, 0);
  return index;
}

SensorPoint sensor_point_for_world(const NavState& x, const Vec3& world,
                                   double doppler) {
  SensorPoint p;
  p.position = x.sensor_to_world().inverse() * world;
  p.doppler = doppler;
  p.label = PointLabel::kStatic;
  return p;
}

TEST(BuildResiduals, PointOnMappedPlaneHasZeroGeometryResidual) {
  MapIndex index = plane_map(SO3::identity());
  NavState x;
  x.pos = Vec3(0.1, -0.2, 1.0);
  x.ext_rot = SO3::exp(Vec3(0.02, -0.01, 0.03));
  x.ext_pos = Vec3(0.9, 0.12, 0.25);
  Scan scan;
  scan.kind = ScanKind::kRadar;
  scan.end_time = 0.1;
  scan.points.push_back(sensor_point_for_world(x, Vec3(0.37, 0.81, 0), 0.0));
  UpdateConfig cfg;
  cfg.min_valid_points = 1;
  auto rows = build_residuals(scan, x, index, Vec3::Zero(), 0.1, cfg);
  ASSERT_EQ(rows.size(), 1u);
  ASSERT_TRUE(rows[0].geo_valid);
  EXPECT_NEAR(rows[0].geo_residual, 0.0, 1e-12);
}

TEST(BuildResiduals, ZeroMotionZeroDopplerResidual) {
  MapIndex index = plane_map(SO3::identity());
  NavState x;
  x.pos = Vec3(0, 0, 1.2);
  x.ext_pos = Vec3(0.5, 0, 0);
  Scan scan;
  scan.kind = ScanKind::kRadar;
  scan.end_time = 0.1;
  for (int i = 0; i < 3; ++i) {
    scan.points.push_back(
        sensor_point_for_world(x, Vec3(1.3 * i - 2, 0.4, 0), 0.0));
  }
  UpdateConfig cfg;
  cfg.min_valid_points = 1;
  auto rows = build_residuals(scan, x, index, Vec3::Zero(), 0.1, cfg);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    ASSERT_TRUE(r.dop_valid);
    EXPECT_NEAR(r.dop_residual, 0.0, 1e-12);
  }
}

TEST(BuildResiduals, DynamicPointsExcludedAndFloorEnforced) {
  MapIndex index = plane_map(SO3::identity());
  NavState x;
  x.pos = Vec3(0, 0, 1);
  Scan scan;
  scan.end_time = 0.1;
  for (int i = 0; i < 12; ++i) {
    SensorPoint p = sensor_point_for_world(x, Vec3(0.3 * i - 2, 0, 0), 0.0);
    p.label = i < 4 ? PointLabel::kDynamic : PointLabel::kStatic;
    scan.points.push_back(p);
  }
  UpdateConfig cfg;
  cfg.min_valid_points = 8;
  auto rows = build_residuals(scan, x, index, Vec3::Zero(), 0.1, cfg);
  EXPECT_EQ(rows.size(), 8u);
  cfg.min_valid_points = 9;
  EXPECT_THROW(build_residuals(scan, x, index, Vec3::Zero(), 0.1, cfg),
               InsufficientCorrespondences);
}

TEST(BuildResiduals, JacobiansMatchFiniteDifferences) {
  std::mt19937 rng(41);
  UpdateConfig cfg;
  cfg.min_valid_points = 1;
  const double h = 1e-6;
  for (int trial = 0; trial < 12; ++trial) {
    const SO3 plane_rot = random_rotation(rng);
    MapIndex index = plane_map(plane_rot);
    NavState x;
    x.rot = random_rotation(rng);
    x.pos = random_vec(rng, 2.0);
    x.ext_rot = random_rotation(rng);
    x.ext_pos = random_vec(rng, 0.4);
    x.vel = random_vec(rng, 4.0);
    x.bg = random_vec(rng, 0.02);
    x.grav = Vec3(0, 0, -9.81) + random_vec(rng, 0.1);
    // world target slightly off the plane so the patch normal sign is stable
    const Vec3 target = plane_rot * Vec3(0.11, -0.27, 0.04);
    Scan scan;
    scan.kind = ScanKind::kFmcwLidar;
    scan.end_time = 1.0;
    scan.points.push_back(sensor_point_for_world(x, target, -1.3));
    const Vec3 gyro = random_vec(rng, 0.6);
    const double dt = 0.08;

    auto rows = build_residuals(scan, x, index, gyro, dt, cfg);
    ASSERT_EQ(rows.size(), 1u);
    ASSERT_TRUE(rows[0].geo_valid);
    ASSERT_TRUE(rows[0].dop_valid);

    for (int dim = 0; dim < blk::kDim; ++dim) {
      StateDelta d = StateDelta::Zero();
      d(dim) = h;
      auto plus = build_residuals(scan, boxplus(x, d), index, gyro, dt, cfg);
      d(dim) = -h;
      auto minus = build_residuals(scan, boxplus(x, d), index, gyro, dt, cfg);
      ASSERT_TRUE(plus[0].geo_valid && minus[0].geo_valid);
      const double fd_geo =
          (plus[0].geo_residual - minus[0].geo_residual) / (2 * h);
      const double an_geo = rows[0].geo_jacobian(dim);
      EXPECT_LE(std::abs(fd_geo - an_geo),
                1e-5 * std::max({1.0, std::abs(an_geo), std::abs(fd_geo)}))
          << "trial " << trial << " geo dim " << dim;
      const double fd_dop =
          (plus[0].dop_residual - minus[0].dop_residual) / (2 * h);
      const double an_dop = rows[0].dop_jacobian(dim);
      EXPECT_LE(std::abs(fd_dop - an_dop),
                1e-5 * std::max({1.0, std::abs(an_dop), std::abs(fd_dop)}))
          << "trial " << trial << " dop dim " << dim;
    }
  }
}

// Front-end prior: loose on pose/velocity/biases, pinned extrinsic and
// gravity (geometry alone cannot separate body pose from the extrinsic, so
// leaving both loose creates a gauge freedom the update cannot resolve).
Mat24 frontend_prior_cov(double loose = 0.1) {
  Mat24 cov = loose * Mat24::Identity();
  cov.block<3, 3>(blk::kExtRot, blk::kExtRot) = 1e-10 * Mat3::Identity();
  cov.block<3, 3>(blk::kExtPos, blk::kExtPos) = 1e-10 * Mat3::Identity();
  cov.block<3, 3>(blk::kGrav, blk::kGrav) = 1e-10 * Mat3::Identity();
  return cov;
}

Scan consistent_plane_scan(const NavState& x, int n = 40) {
  Scan scan;
  scan.kind = ScanKind::kRadar;
  scan.end_time = 0.1;
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < n; ++i) {
    scan.points.push_back(
        sensor_point_for_world(x, Vec3(u(rng), u(rng), 0), 0.0));
  }
  return scan;
}

TEST(IekfUpdate, ZeroResidualsKeepStateAndShrinkObservedCovariance) {
  MapIndex index = plane_map(SO3::identity(), 0.7, 12);
  NavState x;
  x.pos = Vec3(0, 0, 1.5);
  x.grav = Vec3(0, 0, -9.81);
  StateWithCov prior;
  prior.state = x;
  prior.cov = frontend_prior_cov();
  UpdateDiagnostics diag;
  StateWithCov post = iekf_update(prior, consistent_plane_scan(x), index,
                                  Vec3::Zero(), 0.1, UpdateConfig{}, &diag);
  EXPECT_TRUE(diag.converged);
  EXPECT_EQ(diag.iterations, 1);
  const StateDelta moved = boxminus(post.state, x);
  EXPECT_LT(moved.norm(), 1e-10);
  // observed: z translation, roll/pitch, velocity; untouched: the rest
  EXPECT_LT(post.cov(blk::kPos + 2, blk::kPos + 2), 0.001);
  EXPECT_LT(post.cov(blk::kVel, blk::kVel), 0.001);
  EXPECT_NEAR(post.cov(blk::kPos, blk::kPos), 0.1, 1e-9);
  EXPECT_NEAR(post.cov(blk::kBa, blk::kBa), 0.1, 1e-9);
  EXPECT_NEAR(post.cov(blk::kGrav, blk::kGrav), 1e-10, 1e-12);
  EXPECT_NEAR(post.cov(blk::kBg, blk::kBg), 0.1, 1e-9);
  // symmetric PSD
  Eigen::SelfAdjointEigenSolver<Mat24> eig(post.cov);
  EXPECT_GT(eig.eigenvalues().minCoeff(), -1e-9);
}

TEST(IekfUpdate, SinglePlaneNullspacePreserved) {
  MapIndex index = plane_map(SO3::identity(), 0.7, 14);
  NavState truth;
  truth.pos = Vec3(0, 0, 1.0);
  truth.grav = Vec3(0, 0, -9.81);
  Scan scan = consistent_plane_scan(truth);

  StateWithCov prior;
  prior.state = truth;
  prior.state.pos += Vec3(0.05, 0, 0.04);  // in-plane + out-of-plane offset
  prior.cov = frontend_prior_cov(0.01);
  UpdateDiagnostics diag;
  StateWithCov post = iekf_update(prior, scan, index, Vec3::Zero(), 0.1,
                                  UpdateConfig{}, &diag);
  EXPECT_GT(diag.geometry_rows, 20);
  EXPECT_NEAR(post.state.pos.z(), 1.0, 5e-3);          // corrected
  EXPECT_NEAR(post.state.pos.x(), 0.05, 1e-9);         // nullspace kept
  EXPECT_NEAR(post.state.pos.y(), 0.0, 1e-9);
}

TEST(IekfUpdate, DopplerDisabledIsPurePointToPlane) {
  MapIndex index = plane_map(SO3::identity(), 0.7, 14);
  NavState truth;
  truth.pos = Vec3(0, 0, 1.0);
  truth.grav = Vec3(0, 0, -9.81);
  Scan scan = consistent_plane_scan(truth);
  StateWithCov prior;
  prior.state = truth;
  prior.state.pos.z() += 0.03;
  prior.cov = frontend_prior_cov(0.01);
  UpdateConfig cfg;
  cfg.use_doppler = false;
  UpdateDiagnostics diag;
  StateWithCov post =
      iekf_update(prior, scan, index, Vec3::Zero(), 0.1, cfg, &diag);
  EXPECT_EQ(diag.doppler_rows, 0);
  EXPECT_GT(diag.geometry_rows, 20);
  EXPECT_NEAR(post.state.pos.z(), 1.0, 5e-3);
  // velocity is unobserved without doppler rows
  EXPECT_NEAR(post.cov(blk::kVel, blk::kVel), 0.01, 1e-9);
}

TEST(IekfUpdate, SkippedWhenTooFewCorrespondences) {
  MapIndex index = plane_map(SO3::identity());
  NavState x;
  x.pos = Vec3(0, 0, 1);
  StateWithCov prior;
  prior.state = x;
  prior.cov = 0.1 * Mat24::Identity();
  Scan scan = consistent_plane_scan(x, 3);
  UpdateDiagnostics diag;
  StateWithCov post = iekf_update(prior, scan, index, Vec3::Zero(), 0.1,
                                  UpdateConfig{}, &diag);
  EXPECT_TRUE(diag.skipped);
  EXPECT_LT(boxminus(post.state, prior.state).norm(), 1e-15);
  EXPECT_EQ(post.cov, prior.cov);
}

TEST(IekfUpdate, IllConditionedProblemDampedNotExploding) {
  // huge prior uncertainty and a map too sparse for geometry leaves most of
  // the state unconstrained; the solver must report damping and stay finite
  MapIndex index;
  index.insert_scan({Vec3(5, 0, 0)}, 0);
  NavState x;
  x.grav = Vec3(0, 0, -9.81);
  StateWithCov prior;
  prior.state = x;
  prior.cov = 1e12 * Mat24::Identity();
  Scan scan;
  scan.kind = ScanKind::kRadar;
  scan.end_time = 0.1;
  std::mt19937 rng(9);
  for (int i = 0; i < 15; ++i) {
    SensorPoint p;
    p.position = Vec3(5, 0, 0) + random_vec(rng, 0.01);
    p.doppler = 0.0;
    p.label = PointLabel::kStatic;
    scan.points.push_back(p);
  }
  UpdateDiagnostics diag;
  StateWithCov post = iekf_update(prior, scan, index, Vec3::Zero(), 0.1,
                                  UpdateConfig{}, &diag);
  EXPECT_TRUE(diag.damped);
  EXPECT_GT(diag.condition_number, 1e12);
  EXPECT_TRUE(post.state.is_finite());
  EXPECT_TRUE(post.cov.allFinite());
}

// Condensed odometry loop on a 30 s noiseless recording: propagate, label,
// update against the accumulated map, insert. Post-update pose must track
// the true trajectory within a millimeter / milliradian everywhere.
TEST(IekfUpdate, NoiselessSequenceTracksTruth) {
  TempDir dir("iekf_seq");
  SimScenario sc = make_noiseless(scenario_by_name("straight_const_v"));
  sc.trajectory[2].duration = 24.0;  // 30 s total
  GroundTruth gt = simulate(sc, dir.str());
  LogMeta meta;
  auto packets = read_packets(dir.str(), &meta);
  ASSERT_GT(packets.size(), 280u);

  StateWithCov swc;
  swc.state.grav = Vec3(0, 0, -9.81);
  swc.state.ext_rot = gt.ext_rot;
  swc.state.ext_pos = gt.ext_pos;
  swc.cov = frontend_prior_cov(1e-4);
  ProcessNoise noise;
  noise.imu = meta.noise;
  UpdateConfig cfg;
  MapIndex map;
  double max_pos_err = 0, max_rot_err = 0;
  std::optional<ImuSample> carry;  // sample at the previous window's end
  for (const auto& pkt : packets) {
    std::vector<ImuSample> imu;
    if (carry) imu.push_back(*carry);
    imu.insert(imu.end(), pkt.imu_window.begin(), pkt.imu_window.end());
    carry = imu.back();
    auto [pred, log] = propagate_forward(swc, imu, noise);
    Scan labeled = classify_points(pkt.scan, log, pred.state,
                                   VelocityFilterConfig{});
    UpdateDiagnostics diag;
    StateWithCov post = iekf_update(pred, labeled, map, log.end_gyro(),
                                    meta.scan_period, cfg, &diag);
    EXPECT_FALSE(diag.reverted);
    swc = post;

    const SE3 t_ws = post.state.sensor_to_world();
    std::vector<Vec3> world;
    world.reserve(labeled.points.size());
    for (const auto& p : labeled.points) {
      if (p.label == PointLabel::kStatic) world.push_back(t_ws * p.position);
    }
    map.insert_scan(world, 0.5);

    const GroundTruthSample& g = gt.sample_at(pkt.scan.end_time);
    const double pos_err = (post.state.pos - g.pos).norm();
    const double rot_err = (g.rot.inverse() * post.state.rot).log().norm();
    max_pos_err = std::max(max_pos_err, pos_err);
    max_rot_err = std::max(max_rot_err, rot_err);

    Eigen::SelfAdjointEigenSolver<Mat24> eig(post.cov);
    ASSERT_GT(eig.eigenvalues().minCoeff(), -1e-9);
  }
  EXPECT_LT(max_pos_err, 1e-3) << "worst position error " << max_pos_err;
  EXPECT_LT(max_rot_err, 1e-3) << "worst attitude error " << max_rot_err;
}

}  // namespace
}  // namespace doppio
