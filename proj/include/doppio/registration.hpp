// Point-to-plane registration of two point sets, used to verify loop
// candidates. Gauss-Newton on SE(3) against plane patches fitted in the
// target set, with a fitness gate (inlier RMS, coverage and normal
// diversity) deciding acceptance.
#pragma once

#include <vector>

#include <Eigen/Core>

#include "doppio/manifold.hpp"

namespace doppio {

struct RegistrationConfig {
  int max_iterations = 30;
  double convergence_eps = 1e-6;   // step norm
  int neighbors = 5;
  double max_corr_dist = 2.0;      // m, neighborhood radius for a patch
  double plane_threshold = 0.3;    // m, patch validity and final inlier gate
  double inlier_rms_max = 0.5;     // m, acceptance: RMS over correspondences
  double min_inlier_fraction = 0.4;
  // Acceptance: smallest eigenvalue of the mean inlier-normal outer product.
  // A scan dominated by one plane (e.g. ground only) slides freely along it
  // yet scores a perfect RMS; requiring normal diversity rejects such
  // degenerate fits.
  double min_normal_spread = 0.05;
};

struct RegistrationResult {
  SE3 transform;              // maps source coordinates into target frame
  bool accepted = false;      // fitness gate passed
  bool converged = false;
  double inlier_rms = 0;      // m, point-to-plane RMS over correspondences
  double inlier_fraction = 0; // correspondences / source points
  double normal_spread = 0;   // see RegistrationConfig::min_normal_spread
  int iterations = 0;
  Eigen::Matrix<double, 6, 6> information =
      Eigen::Matrix<double, 6, 6>::Identity();  // [rot, trans] ordering
};

// Estimates the rigid transform taking `source` onto `target`, starting
// from `seed`. The information matrix is the final Gauss-Newton normal
// matrix scaled by the residual variance.
RegistrationResult register_point_to_plane(const std::vector<Vec3>& source,
                                           const std::vector<Vec3>& target,
                                           const SE3& seed,
                                           const RegistrationConfig& cfg = {});

}  // namespace doppio
