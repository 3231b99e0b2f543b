// Sensor data model: IMU samples, per-point Doppler measurements, scans
// and the measurement packets handed to the front end.
#pragma once

#include <optional>
#include <vector>

#include "doppio/manifold.hpp"

namespace doppio {

struct ImuSample {
  double t = 0;            // seconds, shared clock
  Vec3 gyro = Vec3::Zero();   // rad/s, body frame
  Vec3 accel = Vec3::Zero();  // m/s^2, body frame (specific force)
};

enum class PointLabel { kUnclassified, kStatic, kDynamic };

struct SensorPoint {
  double offset_t = 0;     // seconds relative to scan end, always <= 0
  Vec3 position = Vec3::Zero();  // sensor frame at sample time
  double doppler = 0;      // m/s, signed radial velocity; negative = closing
  std::optional<double> intensity;
  PointLabel label = PointLabel::kUnclassified;

  Vec3 direction() const { return position.normalized(); }
  double range() const { return position.norm(); }
};

enum class ScanKind { kRadar, kFmcwLidar };

struct Scan {
  double end_time = 0;     // seconds; points are expressed at sample time
  ScanKind kind = ScanKind::kRadar;
  std::vector<SensorPoint> points;
};

// IMU noise densities and measurement sigmas. All strictly positive.
struct NoiseParams {
  double gyro_noise = 1e-3;       // rad/s/sqrt(Hz)
  double accel_noise = 1e-2;      // m/s^2/sqrt(Hz)
  double gyro_bias_rw = 1e-5;     // rad/s^2/sqrt(Hz)
  double accel_bias_rw = 1e-4;    // m/s^3/sqrt(Hz)
  double point_sigma = 0.02;      // m, isotropic position noise
  double doppler_sigma = 0.05;    // m/s

  void validate() const;
};

// One scan plus the IMU samples received since the previous scan end.
struct MeasurementPacket {
  Scan scan;
  std::vector<ImuSample> imu_window;  // t in (previous end, this end]
};

}  // namespace doppio
