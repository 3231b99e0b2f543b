// Velocity filter and ego-velocity estimation. Every point carries a
// radial (doppler) velocity; a static point seen from a sensor moving at
// v_s must show doppler -direction.v_s. Points violating that beyond a
// threshold are dynamic. The same relation, stacked over static points,
// yields a least-squares ego-velocity estimate.
#pragma once

#include <string>
#include <vector>

#include "doppio/propagation.hpp"
#include "doppio/sensor_types.hpp"

namespace doppio {

struct VelocityFilterConfig {
  double upsilon = 0.5;       // m/s gate between predicted and measured
  int min_static_points = 10; // below this the scan is flagged degraded
};

struct ClassifyStats {
  int static_count = 0;
  int dynamic_count = 0;
};

struct EgoVelocityEstimate {
  Vec3 v_s = Vec3::Zero();  // sensor frame
  Mat3 cov = Mat3::Identity();
  int inlier_count = 0;
};

// Direction set too close to coplanar for a 3-dof velocity solve.
class DegenerateGeometryError : public std::runtime_error {
 public:
  DegenerateGeometryError(const std::string& msg, double condition)
      : std::runtime_error(msg), condition_number(condition) {}
  double condition_number;
};

// Expected doppler of a static point seen from a sensor moving at v_s.
double predict_doppler(const SensorPoint& point, const Vec3& v_s);

// Labels every point static/dynamic by comparing measured doppler with
// the prediction from the propagated motion at the point's own timestamp.
Scan classify_points(const Scan& scan, const PropagationLog& log,
                     const NavState& state, const VelocityFilterConfig& cfg,
                     ClassifyStats* stats = nullptr);

// Per-point predictions used by classify_points; exposed for diagnostics.
std::vector<double> predicted_dopplers(const Scan& scan,
                                       const PropagationLog& log,
                                       const NavState& state);

// Least-squares ego velocity from doppler returns. With use_labels, only
// static-labeled points vote; otherwise a seeded random-sample consensus
// loop picks the inlier set first (the label-free baseline).
EgoVelocityEstimate estimate_ego_velocity_lsq(const Scan& scan,
                                              bool use_labels);

// Debug dump: dt,x,y,z,doppler,predicted,label per point.
void dump_classified_scan(const std::string& path, const Scan& scan,
                          const std::vector<double>& predicted);

}  // namespace doppio
