// Batch optimization over keyframe poses plus one shared sensor-to-body
// extrinsic: damped Gauss-Newton on the manifold with a sparse normal
// solver. Pose-only graphs (prior + relative-pose + loop factors) cover
// the plain mapping case; enabling the extrinsic adds per-keyframe
// velocity and bias nodes tied by IMU preintegration, ego-velocity and
// random-walk factors.
#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "doppio/keyframe.hpp"
#include "doppio/manifold.hpp"

namespace doppio {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

struct FactorGraph {
  // nodes; poses are body-in-world, one per keyframe
  std::vector<SE3> poses;
  SO3 ext_rot;                  // sensor-in-body
  Vec3 ext_pos = Vec3::Zero();
  std::vector<Vec3> velocities; // world frame, used when with_extrinsic
  std::vector<Vec3> gyro_bias;
  std::vector<Vec3> accel_bias;
  bool with_extrinsic = false;  // activates ext/vel/bias columns
  Vec3 gravity = Vec3(0, 0, -9.81);

  // factors; sigma vectors are per-component standard deviations
  struct PosePrior {
    int node = 0;
    SE3 value;
    Vec6 sigma = Vec6::Ones();  // [rot rad, trans m]
  };
  struct RelPose {
    int a = 0, b = 0;
    SE3 rel;  // pose of b in a's frame
    Vec6 sigma = Vec6::Ones();
    bool is_loop = false;
  };
  struct Preint {
    int a = 0, b = 0;
    Preintegration delta;
  };
  struct EgoVel {
    int node = 0;
    Vec3 measured = Vec3::Zero();  // sensor frame
    Vec3 gyro = Vec3::Zero();      // raw body rate at the keyframe
    Vec3 sigma = Vec3::Constant(0.1);
  };
  struct ExtPrior {
    SO3 rot;
    Vec3 pos = Vec3::Zero();
    Vec6 sigma = Vec6::Ones();
  };
  struct BiasPrior {
    int node = 0;
    Vec3 bg = Vec3::Zero(), ba = Vec3::Zero();
    Vec6 sigma = Vec6::Constant(1e-2);
  };
  struct BiasWalk {
    int a = 0, b = 0;
    Vec6 sigma = Vec6::Constant(1e-3);
  };

  std::vector<PosePrior> pose_priors;
  std::vector<RelPose> rel_poses;
  std::vector<Preint> preints;
  std::vector<EgoVel> ego_vels;
  std::vector<ExtPrior> ext_priors;
  std::vector<BiasPrior> bias_priors;
  std::vector<BiasWalk> bias_walks;

  int factor_count() const;
  // plain-text factor listing for debugging
  std::string dump() const;
};

struct OptimizeOptions {
  int max_iterations = 50;
  double rel_cost_tol = 1e-6;
  double init_lambda = 1e-6;
  double lambda_ceiling = 1e8;
};

struct OptimizeStats {
  int iterations = 0;
  double initial_cost = 0;
  double final_cost = 0;
  bool converged = false;
  bool failed = false;  // damping ceiling hit; nodes left at input values
};

// Levenberg-Marquardt until the relative cost change drops below
// rel_cost_tol. Deterministic given identical input. Nodes are updated in
// place; on failure they keep their input values.
OptimizeStats optimize(FactorGraph& graph, const OptimizeOptions& opt = {});

// Marginal covariance of the extrinsic node ([rot, trans]) at the current
// linearization point. Requires with_extrinsic.
Mat6 extrinsic_covariance(const FactorGraph& graph);

}  // namespace doppio
