#include "doppio/compensation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "doppio/simulator.hpp"
#include "test_util.hpp"

namespace doppio {
namespace {

using test::TempDir;
using test::truth_windows;

void expect_bits_equal(const Scan& a, const Scan& b) {
  ASSERT_EQ(a.points.size(), b.points.size());
  EXPECT_EQ(a.end_time, b.end_time);
  EXPECT_EQ(a.kind, b.kind);
  for (size_t i = 0; i < a.points.size(); ++i) {
    EXPECT_EQ(a.points[i].offset_t, b.points[i].offset_t) << i;
    EXPECT_EQ(a.points[i].position.x(), b.points[i].position.x()) << i;
    EXPECT_EQ(a.points[i].position.y(), b.points[i].position.y()) << i;
    EXPECT_EQ(a.points[i].position.z(), b.points[i].position.z()) << i;
    EXPECT_EQ(a.points[i].doppler, b.points[i].doppler) << i;
    EXPECT_EQ(a.points[i].label, b.points[i].label) << i;
  }
}

PropagationLog make_log(const NavState& x0, const Vec3& gyro,
                        const Vec3& accel, double t0, double t1) {
  StateWithCov swc;
  swc.state = x0;
  std::vector<ImuSample> imu;
  for (double t = t0; t <= t1 + 1e-12; t += 0.01) {
    imu.push_back({t, gyro, accel});
  }
  return propagate_forward(swc, imu, ProcessNoise{}).second;
}

NavState level_state() {
  NavState x;
  x.grav = Vec3(0, 0, -9.81);
  return x;
}

Scan lidar_scan(double end_time) {
  Scan s;
  s.kind = ScanKind::kFmcwLidar;
  s.end_time = end_time;
  return s;
}

TEST(Geometry, RadarPassThroughBitIdentical) {
  NavState x0 = level_state();
  x0.vel = Vec3(8, 0, 0);
  PropagationLog log = make_log(x0, Vec3(0, 0, 0.4), Vec3(0, 0, 9.81), 0, 0.1);
  Scan scan;
  scan.kind = ScanKind::kRadar;
  scan.end_time = 0.1;
  scan.points.push_back({0.0, Vec3(3.7, -1.2, 0.5), -4.4, 55.0,
                         PointLabel::kStatic});
  scan.points.push_back({0.0, Vec3(12.1, 8.8, -0.3), 1.9, 10.0,
                         PointLabel::kDynamic});
  expect_bits_equal(compensate_geometry(scan, log), scan);
  expect_bits_equal(compensate_doppler(scan, log, log.end_state()), scan);
}

TEST(Geometry, StationaryLidarBitIdentical) {
  PropagationLog log =
      make_log(level_state(), Vec3::Zero(), Vec3(0, 0, 9.81), 0, 0.1);
  Scan scan = lidar_scan(0.1);
  scan.points.push_back({-0.08, Vec3(5, 2, 1), 0.0, {}, PointLabel::kStatic});
  scan.points.push_back({-0.03, Vec3(9, -4, 0.2), 0.0, {},
                         PointLabel::kUnclassified});
  expect_bits_equal(compensate_geometry(scan, log), scan);
  expect_bits_equal(compensate_doppler(scan, log, log.end_state()), scan);
}

TEST(Geometry, OffsetOutsideLogThrowsNamingIndex) {
  PropagationLog log =
      make_log(level_state(), Vec3::Zero(), Vec3(0, 0, 9.81), 1.0, 1.1);
  Scan scan = lidar_scan(1.1);
  scan.points.push_back({-0.05, Vec3(5, 0, 0), 0.0, {}, {}});
  scan.points.push_back({-0.25, Vec3(5, 0, 0), 0.0, {}, {}});
  try {
    compensate_geometry(scan, log);
    FAIL() << "expected out_of_range";
  } catch (const std::out_of_range& e) {
    EXPECT_NE(std::string(e.what()).find("point 1"), std::string::npos)
        << e.what();
  }
  EXPECT_THROW(compensate_doppler(scan, log, log.end_state()),
               std::out_of_range);
}

TEST(Geometry, PreservesCountOrderAndLabels) {
  NavState x0 = level_state();
  x0.vel = Vec3(5, 1, 0);
  x0.ext_rot = SO3::exp(Vec3(0.02, -0.01, 0.03));
  x0.ext_pos = Vec3(0.9, 0.12, 0.25);
  PropagationLog log =
      make_log(x0, Vec3(0, 0, 0.3), Vec3(0.4, 0, 9.81), 0, 0.1);
  Scan scan = lidar_scan(0.1);
  for (int i = 0; i < 10; ++i) {
    SensorPoint p;
    p.offset_t = -0.01 * i;
    p.position = Vec3(10 + i, i - 5, 0.5);
    p.doppler = -3.0 + 0.1 * i;
    p.intensity = 7.0 * i;
    p.label = i % 3 == 0 ? PointLabel::kDynamic : PointLabel::kStatic;
    scan.points.push_back(p);
  }
  Scan comp = compensate_doppler(compensate_geometry(scan, log), log,
                                 log.end_state());
  ASSERT_EQ(comp.points.size(), scan.points.size());
  for (size_t i = 0; i < comp.points.size(); ++i) {
    EXPECT_EQ(comp.points[i].offset_t, scan.points[i].offset_t);
    EXPECT_EQ(comp.points[i].label, scan.points[i].label);
    ASSERT_TRUE(comp.points[i].intensity.has_value());
    EXPECT_EQ(*comp.points[i].intensity, *scan.points[i].intensity);
  }
  // points captured before scan end actually moved
  EXPECT_GT((comp.points[9].position - scan.points[9].position).norm(), 0.1);
  // the point captured exactly at scan end is (numerically) unchanged
  EXPECT_LT((comp.points[0].position - scan.points[0].position).norm(), 1e-12);
}

TEST(Deskew, MatchesReferenceOnNoiselessRun) {
  TempDir dir("comp_clean");
  SimScenario sc = make_noiseless(scenario_by_name("highspeed_lidar"));
  GroundTruth gt = simulate(sc, dir.str());
  auto windows = truth_windows(dir.str(), gt);
  ASSERT_EQ(windows.size(), gt.reference_scans.size());
  double worst_pos = 0, worst_dop = 0;
  for (size_t i = 0; i < windows.size(); ++i) {
    Scan geo = compensate_geometry(windows[i].scan, windows[i].log);
    Scan comp =
        compensate_doppler(geo, windows[i].log, windows[i].end.state);
    const ReferenceScan& ref = gt.reference_scans[i];
    ASSERT_EQ(comp.points.size(), ref.points.size());
    for (size_t j = 0; j < comp.points.size(); ++j) {
      worst_pos = std::max(
          worst_pos, (comp.points[j].position - ref.points[j].position).norm());
      worst_dop = std::max(
          worst_dop, std::abs(comp.points[j].doppler - ref.points[j].doppler));
    }
  }
  EXPECT_LT(worst_pos, 1e-9);
  EXPECT_LT(worst_dop, 1e-9);
}

TEST(Deskew, NoisyRunWithinTwoSigmaRms) {
  TempDir dir("comp_noisy");
  SimScenario sc = scenario_by_name("highspeed_lidar");
  GroundTruth gt = simulate(sc, dir.str());
  auto windows = truth_windows(dir.str(), gt);
  double pos_sq = 0, raw_sq = 0, dop_sq = 0, accel_dop_sq = 0;
  long n = 0, n_accel = 0;
  for (size_t i = 0; i < windows.size(); ++i) {
    Scan geo = compensate_geometry(windows[i].scan, windows[i].log);
    Scan comp =
        compensate_doppler(geo, windows[i].log, windows[i].end.state);
    const ReferenceScan& ref = gt.reference_scans[i];
    for (size_t j = 0; j < comp.points.size(); ++j) {
      pos_sq +=
          (comp.points[j].position - ref.points[j].position).squaredNorm();
      raw_sq += (windows[i].scan.points[j].position - ref.points[j].position)
                    .squaredNorm();
      const double dd = comp.points[j].doppler - ref.points[j].doppler;
      dop_sq += dd * dd;
      ++n;
      if (windows[i].scan.end_time > 1.2 && windows[i].scan.end_time < 7.0) {
        accel_dop_sq += dd * dd;
        ++n_accel;
      }
    }
  }
  const double rms_pos = std::sqrt(pos_sq / n);
  const double rms_raw = std::sqrt(raw_sq / n);
  const double rms_dop = std::sqrt(dop_sq / n);
  EXPECT_LE(rms_pos, 2 * sc.noise.point_sigma) << "rms " << rms_pos;
  EXPECT_GT(rms_raw, 10 * rms_pos);  // de-skew removed real distortion
  EXPECT_LE(rms_dop, 2 * sc.noise.doppler_sigma) << "rms " << rms_dop;
  ASSERT_GT(n_accel, 1000);
  EXPECT_LE(std::sqrt(accel_dop_sq / n_accel), 2 * sc.noise.doppler_sigma);
}

TEST(DopplerStage, AxialTargetUnchangedAtConstantVelocity) {
  NavState x0 = level_state();
  x0.vel = Vec3(10, 0, 0);
  PropagationLog log =
      make_log(x0, Vec3::Zero(), Vec3(0, 0, 9.81), 0, 0.1);
  Scan scan = lidar_scan(0.1);
  scan.points.push_back({-0.05, Vec3(20, 0, 0), -10.0, {}, {}});
  Scan geo = compensate_geometry(scan, log);
  EXPECT_NEAR(geo.points[0].position.x(), 19.5, 1e-12);
  Scan comp = compensate_doppler(geo, log, log.end_state());
  EXPECT_NEAR(comp.points[0].doppler, -10.0, 1e-12);
}

TEST(DopplerStage, LateralTargetCorrectedForDirectionChange) {
  // constant speed, yet the bearing to an off-axis target rotates between
  // capture and scan end; the compensated value must equal the scan-end
  // doppler of the same world point, not the raw one
  NavState x0 = level_state();
  x0.vel = Vec3(10, 0, 0);
  PropagationLog log =
      make_log(x0, Vec3::Zero(), Vec3(0, 0, 9.81), 0, 0.1);
  const Vec3 target_w(2, 10, 0);
  const double t_p = 0.02;
  const Vec3 pos_tp = target_w - Vec3(10 * t_p, 0, 0);
  const Vec3 pos_end = target_w - Vec3(10 * 0.1, 0, 0);
  Scan scan = lidar_scan(0.1);
  scan.points.push_back({t_p - 0.1, pos_tp,
                         -pos_tp.normalized().dot(x0.vel), {}, {}});
  Scan comp = compensate_doppler(compensate_geometry(scan, log), log,
                                 log.end_state());
  const double want = -pos_end.normalized().dot(x0.vel);
  EXPECT_NE(want, scan.points[0].doppler);
  EXPECT_NEAR(comp.points[0].doppler, want, 1e-9);
  EXPECT_LT((comp.points[0].position - pos_end).norm(), 1e-9);
}

TEST(DopplerStage, SecondPassWithZeroMotionLogIsNoOp) {
  NavState x0 = level_state();
  x0.vel = Vec3(6, -1, 0);
  PropagationLog moving =
      make_log(x0, Vec3(0, 0, 0.5), Vec3(1, 0, 9.81), 0, 0.1);
  Scan scan = lidar_scan(0.1);
  std::mt19937 rng(5);
  for (int i = 0; i < 30; ++i) {
    SensorPoint p;
    p.offset_t = -0.001 * (3 * i);
    p.position = test::random_vec(rng, 20) + Vec3(30, 0, 0);
    p.doppler = -p.position.normalized().dot(x0.vel);
    scan.points.push_back(p);
  }
  Scan once_geo = compensate_geometry(scan, moving);
  Scan once = compensate_doppler(once_geo, moving, moving.end_state());

  PropagationLog still =
      make_log(level_state(), Vec3::Zero(), Vec3(0, 0, 9.81), 0, 0.1);
  expect_bits_equal(compensate_geometry(once, still), once);
  expect_bits_equal(compensate_doppler(once, still, moving.end_state()), once);
}

TEST(DumpCompensation, WritesRawAndCompensatedColumns) {
  TempDir dir("comp_dump");
  Scan raw = lidar_scan(0.1);
  raw.points.push_back({-0.05, Vec3(1, 2, 3), -4.0, {}, {}});
  Scan comp = raw;
  comp.points[0].position = Vec3(1.5, 2, 3);
  comp.points[0].doppler = -4.5;
  dump_compensation((dir.path() / "comp.csv").string(), raw, comp);
  std::ifstream in(dir.path() / "comp.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "dt,x_raw,y_raw,z_raw,doppler_raw,x,y,z,doppler");
  EXPECT_EQ(row, "-0.05,1,2,3,-4,1.5,2,3,-4.5");
}

}  // namespace
}  // namespace doppio
