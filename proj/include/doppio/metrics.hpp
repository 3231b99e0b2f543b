// Trajectory error evaluation: TUM-format trajectory IO, timestamp
// association, optional closed-form rigid alignment, and APE/RPE
// statistics with per-frame series. A numpy reference implementation
// (scripts/eval_check.py) computes the same numbers independently; the
// two must agree within 1e-6 on shared inputs.
#pragma once

#include <string>
#include <vector>

#include "doppio/manifold.hpp"

namespace doppio {

struct TimedPose {
  double t = 0;
  SE3 pose;
};

enum class AlignMode { kNone, kRigid };

struct EvalOptions {
  AlignMode align = AlignMode::kNone;
  bool planar = false;     // zero z before alignment and APE
  double max_dt = 0.01;    // association window, seconds
};

struct MetricsReport {
  double ape_rmse = 0;          // m, translational, after optional alignment
  double rpe_trans_rmse = 0;    // m, per consecutive frame pair
  double rpe_rot_deg_rmse = 0;  // degrees, per consecutive frame pair
  double trajectory_length = 0; // m, ground-truth path over associated span
  int associated = 0;

  std::vector<double> times;             // association timestamps (estimate)
  std::vector<double> ape_series;        // per-pose translational error
  std::vector<double> rpe_trans_series;  // size associated-1
  std::vector<double> rpe_rot_series;    // degrees

  std::string to_text() const;
  void save_series_csv(const std::string& path) const;
};

// TUM text: `t x y z qx qy qz qw`, '#' comments. Throws
// std::runtime_error on unreadable files or malformed rows.
std::vector<TimedPose> load_tum(const std::string& path);
void save_tum(const std::string& path, const std::vector<TimedPose>& traj);

// Simulator ground truth. Accepts the csv layout with header
// `t,x,y,z,qw,qx,qy,qz,...` as well as plain TUM rows.
std::vector<TimedPose> load_trajectory_any(const std::string& path);

// Nearest-timestamp association: walk the estimate in time order, pair
// each pose with its closest ground-truth sample within max_dt (ties to
// the earlier one); ground-truth indices strictly increase.
std::vector<std::pair<int, int>> associate(const std::vector<TimedPose>& est,
                                           const std::vector<TimedPose>& gt,
                                           double max_dt);

// Least-squares rotation+translation (no scale) taking src onto dst.
SE3 rigid_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

// Full evaluation. Throws std::runtime_error when fewer than two poses
// associate.
MetricsReport evaluate(const std::vector<TimedPose>& est,
                       const std::vector<TimedPose>& gt,
                       const EvalOptions& opt = {});

}  // namespace doppio
