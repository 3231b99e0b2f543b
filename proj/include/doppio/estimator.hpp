// Iterated Kalman measurement update: stacks scalar point-to-plane rows and
// per-point radial-velocity rows against the propagated prior and solves the
// manifold-consistent information-form correction.
#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "doppio/mapping.hpp"
#include "doppio/propagation.hpp"
#include "doppio/sensor_types.hpp"

namespace doppio {

// Too few usable rows to attempt an update; the caller keeps the
// propagation-only state for this frame.
class InsufficientCorrespondences : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using JacobianRow = Eigen::Matrix<double, 1, blk::kDim>;

// Scalar measurement rows contributed by one scan point: a signed
// point-to-plane distance and a radial-velocity mismatch, each with its row
// Jacobian and noise variance. A row only participates when its valid flag
// is set (e.g. no geometry row when the local patch was rejected).
struct ResidualBlock {
  int point_index = -1;
  double geo_residual = 0;
  JacobianRow geo_jacobian = JacobianRow::Zero();
  double geo_variance = 0;
  bool geo_valid = false;
  double dop_residual = 0;
  JacobianRow dop_jacobian = JacobianRow::Zero();
  double dop_variance = 0;
  bool dop_valid = false;
};

struct UpdateConfig {
  int max_iterations = 4;
  double convergence_eps = 1e-4;
  int min_valid_points = 10;
  int neighbors = 5;
  double plane_threshold = 0.1;       // max point-to-plane distance (m)
  double plane_planarity = 0.05;      // max out-of-plane / in-plane spread
  double max_neighbor_dist = 2.0;     // neighborhood radius for a usable patch
  double point_sigma = 0.02;          // per-point position noise (m)
  double doppler_sigma = 0.05;        // per-point doppler noise (m/s)
  bool use_doppler = true;            // off: pure point-to-plane update
  bool scale_doppler_by_dt = true;    // weight doppler rows by the frame dt
  std::optional<double> huber_delta;  // robust loss on whitened residuals
};

struct UpdateDiagnostics {
  int iterations = 0;
  int geometry_rows = 0;
  int doppler_rows = 0;
  int rejected_points = 0;  // static points without a usable plane patch
  double final_cost = 0;
  double condition_number = 0;
  bool converged = false;
  bool damped = false;    // conditioning beyond 1e12 triggered damping
  bool reverted = false;  // cost rose three times in a row; prior kept
  bool skipped = false;   // not enough correspondences; prior kept
};

// One row pair per usable point of `scan` (points labeled dynamic are
// excluded), evaluated at `state`. `gyro_at_end` is the raw angular rate at
// scan end; `frame_dt` is the time since the previous frame and scales the
// doppler rows when configured. Throws InsufficientCorrespondences when
// fewer than cfg.min_valid_points points yield any row.
std::vector<ResidualBlock> build_residuals(const Scan& scan,
                                           const NavState& state,
                                           const MapIndex& index,
                                           const Vec3& gyro_at_end,
                                           double frame_dt,
                                           const UpdateConfig& cfg);

// Iterated update of the propagated prior against one compensated scan.
// Re-linearizes the rows at every accepted iterate, keeps the objective
// non-increasing via step halving, damps near-singular normal matrices and
// reverts to the prior after three consecutive cost increases. Posterior
// covariance is the symmetrized inverse of the final information matrix.
// Map insertion is left to the caller.
StateWithCov iekf_update(const StateWithCov& prior, const Scan& scan,
                         const MapIndex& index, const Vec3& gyro_at_end,
                         double frame_dt, const UpdateConfig& cfg,
                         UpdateDiagnostics* diag = nullptr);

}  // namespace doppio
