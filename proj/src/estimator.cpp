#include "doppio/estimator.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>

namespace doppio {
namespace {

constexpr double kConditionLimit = 1e12;

double sigma_interval(double frame_dt, const UpdateConfig& cfg) {
  if (!cfg.scale_doppler_by_dt) return 1.0;
  if (!(frame_dt > 0)) {
    throw std::invalid_argument("iekf: frame dt must be > 0");
  }
  return frame_dt;
}

// Huber weight on the whitened residual; 1 when the loss is disabled.
double robust_weight(double whitened, const UpdateConfig& cfg) {
  if (!cfg.huber_delta) return 1.0;
  const double a = std::abs(whitened);
  return a <= *cfg.huber_delta ? 1.0 : *cfg.huber_delta / a;
}

double robust_cost(double whitened, const UpdateConfig& cfg) {
  if (!cfg.huber_delta) return whitened * whitened;
  const double d = *cfg.huber_delta;
  const double a = std::abs(whitened);
  return a <= d ? a * a : 2 * d * a - d * d;
}

double measurement_cost(const std::vector<ResidualBlock>& rows,
                        const UpdateConfig& cfg) {
  double cost = 0;
  for (const ResidualBlock& b : rows) {
    if (b.geo_valid) {
      cost += robust_cost(b.geo_residual / std::sqrt(b.geo_variance), cfg);
    }
    if (b.dop_valid) {
      cost += robust_cost(b.dop_residual / std::sqrt(b.dop_variance), cfg);
    }
  }
  return cost;
}

// d/ddelta of (x_j boxplus delta) boxminus x_hat at delta = 0: inverse right
// Jacobians on the rotation blocks, identity elsewhere.
Mat24 boxminus_chain_jacobian(const StateDelta& z) {
  Mat24 j = Mat24::Identity();
  j.block<3, 3>(blk::kRot, blk::kRot) =
      so3_right_jacobian_inv(z.segment<3>(blk::kRot));
  j.block<3, 3>(blk::kExtRot, blk::kExtRot) =
      so3_right_jacobian_inv(z.segment<3>(blk::kExtRot));
  return j;
}

}  // namespace

std::vector<ResidualBlock> build_residuals(const Scan& scan,
                                           const NavState& state,
                                           const MapIndex& index,
                                           const Vec3& gyro_at_end,
                                           double frame_dt,
                                           const UpdateConfig& cfg) {
  const double sigma_i = sigma_interval(frame_dt, cfg);
  const Mat3 rot_b = state.rot.matrix();
  const Mat3 rot_sb = state.ext_rot.matrix();
  const Vec3 omega = gyro_at_end - state.bg;
  const Vec3 vel_body = rot_b.transpose() * state.vel;
  const Vec3 lever = omega.cross(state.ext_pos);

  std::vector<ResidualBlock> out;
  out.reserve(scan.points.size());
  for (std::size_t i = 0; i < scan.points.size(); ++i) {
    const SensorPoint& p = scan.points[i];
    if (p.label == PointLabel::kDynamic) continue;
    const double range = p.range();
    if (!(range > 0) || !p.position.allFinite()) continue;

    ResidualBlock block;
    block.point_index = int(i);

    const Vec3 in_body = rot_sb * p.position + state.ext_pos;
    const Vec3 in_world = rot_b * in_body + state.pos;
    if (!index.empty()) {
      const std::vector<Vec3> nn = index.knn(in_world, cfg.neighbors);
      // all neighbors must be local to the query: a sparse map region (or a
      // freshly entered one) has no usable surface model, and far-flung
      // neighbors would stitch together unrelated structures
      if (int(nn.size()) == cfg.neighbors &&
          (nn.back() - in_world).norm() <= cfg.max_neighbor_dist) {
        const PlanePatch patch =
            fit_plane(nn, cfg.plane_threshold, in_world, cfg.plane_planarity);
        // the patch models a surface to within the validity threshold; a
        // query farther away than that is not on the surface, so no
        // correspondence (re-evaluated every iteration as the state moves)
        const double dist = patch.normal.dot(in_world - patch.centroid);
        if (patch.valid && std::abs(dist) <= cfg.plane_threshold) {
          const Vec3 u = patch.normal;
          block.geo_residual = dist;
          block.geo_jacobian.segment<3>(blk::kRot) =
              -u.transpose() * rot_b * skew(in_body);
          block.geo_jacobian.segment<3>(blk::kPos) = u;
          block.geo_jacobian.segment<3>(blk::kExtRot) =
              -u.transpose() * rot_b * rot_sb * skew(p.position);
          block.geo_jacobian.segment<3>(blk::kExtPos) =
              u.transpose() * rot_b;
          block.geo_variance = cfg.point_sigma * cfg.point_sigma;
          block.geo_valid = true;
        }
      }
    }

    if (cfg.use_doppler) {
      const Vec3 dir = p.position / range;
      const Vec3 w_body = vel_body + lever;  // sensor velocity, body axes
      // residual: measured minus predicted radial velocity, where the
      // prediction is -dir . (sensor-frame sensor velocity)
      block.dop_residual =
          sigma_i * (p.doppler + dir.dot(rot_sb.transpose() * w_body));
      const Eigen::RowVector3d dir_s = sigma_i * dir.transpose() *
                                       rot_sb.transpose();
      block.dop_jacobian.segment<3>(blk::kRot) = dir_s * skew(vel_body);
      block.dop_jacobian.segment<3>(blk::kVel) = dir_s * rot_b.transpose();
      block.dop_jacobian.segment<3>(blk::kBg) = dir_s * skew(state.ext_pos);
      block.dop_jacobian.segment<3>(blk::kExtRot) =
          sigma_i * dir.transpose() * skew(rot_sb.transpose() * w_body);
      block.dop_jacobian.segment<3>(blk::kExtPos) = dir_s * skew(omega);
      block.dop_variance =
          sigma_i * sigma_i * cfg.doppler_sigma * cfg.doppler_sigma;
      block.dop_valid = true;
    }

    if (block.geo_valid || block.dop_valid) out.push_back(block);
  }
  if (int(out.size()) < cfg.min_valid_points) {
    throw InsufficientCorrespondences(
        "iekf: only " + std::to_string(out.size()) + " usable points, need " +
        std::to_string(cfg.min_valid_points));
  }
  return out;
}

StateWithCov iekf_update(const StateWithCov& prior, const Scan& scan,
                         const MapIndex& index, const Vec3& gyro_at_end,
                         double frame_dt, const UpdateConfig& cfg,
                         UpdateDiagnostics* diag) {
  UpdateDiagnostics local;
  if (!diag) diag = &local;
  *diag = UpdateDiagnostics{};

  Mat24 prior_info;
  {
    Eigen::LDLT<Mat24> ldlt(prior.cov);
    if (ldlt.info() != Eigen::Success) {
      Mat24 jittered = prior.cov + 1e-12 * Mat24::Identity();
      ldlt.compute(jittered);
    }
    prior_info = ldlt.solve(Mat24::Identity());
  }

  NavState x = prior.state;
  std::vector<ResidualBlock> rows;
  try {
    rows = build_residuals(scan, x, index, gyro_at_end, frame_dt, cfg);
  } catch (const InsufficientCorrespondences&) {
    diag->skipped = true;
    return prior;
  }

  auto total_cost = [&](const NavState& at,
                        const std::vector<ResidualBlock>& r) {
    const StateDelta z = boxminus(at, prior.state);
    return z.dot(prior_info * z) + measurement_cost(r, cfg);
  };

  double accepted_cost = total_cost(x, rows);
  int strikes = 0;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    diag->iterations = iter + 1;
    const StateDelta z = boxminus(x, prior.state);
    const Mat24 j = boxminus_chain_jacobian(z);
    const Mat24 jt_pinv = j.transpose() * prior_info;

    Mat24 a = jt_pinv * j;
    StateDelta b = jt_pinv * z;
    for (const ResidualBlock& blk_row : rows) {
      if (blk_row.geo_valid) {
        const double w =
            robust_weight(blk_row.geo_residual / std::sqrt(blk_row.geo_variance),
                          cfg) /
            blk_row.geo_variance;
        a.noalias() +=
            blk_row.geo_jacobian.transpose() * (w * blk_row.geo_jacobian);
        b.noalias() += blk_row.geo_jacobian.transpose() *
                       (w * blk_row.geo_residual);
      }
      if (blk_row.dop_valid) {
        const double w =
            robust_weight(blk_row.dop_residual / std::sqrt(blk_row.dop_variance),
                          cfg) /
            blk_row.dop_variance;
        a.noalias() +=
            blk_row.dop_jacobian.transpose() * (w * blk_row.dop_jacobian);
        b.noalias() += blk_row.dop_jacobian.transpose() *
                       (w * blk_row.dop_residual);
      }
    }

    Eigen::SelfAdjointEigenSolver<Mat24> eig(a);
    const double lam_max = eig.eigenvalues().maxCoeff();
    const double lam_min = eig.eigenvalues().minCoeff();
    diag->condition_number = lam_max / std::max(lam_min, 1e-300);
    if (!(lam_min > 0) || diag->condition_number > kConditionLimit) {
      diag->damped = true;
      a += (lam_max / kConditionLimit) * Mat24::Identity();
    }
    StateDelta delta = a.ldlt().solve(-b);

    bool accepted = false;
    for (int halving = 0; halving < 3; ++halving) {
      const NavState trial = boxplus(x, delta);
      std::vector<ResidualBlock> trial_rows;
      try {
        trial_rows =
            build_residuals(scan, trial, index, gyro_at_end, frame_dt, cfg);
      } catch (const InsufficientCorrespondences&) {
        delta *= 0.5;
        continue;
      }
      const double trial_cost = total_cost(trial, trial_rows);
      // absolute floor keeps float jitter from registering as an increase
      // when the cost is already numerically zero
      if (trial_cost <= accepted_cost * (1 + 1e-12) + 1e-16) {
        x = trial;
        rows = std::move(trial_rows);
        accepted_cost = trial_cost;
        accepted = true;
        break;
      }
      delta *= 0.5;
    }
    if (accepted) {
      strikes = 0;
      if (delta.norm() < cfg.convergence_eps) {
        diag->converged = true;
        break;
      }
    } else {
      if (++strikes >= 3) {
        diag->reverted = true;
        diag->final_cost = accepted_cost;
        for (const ResidualBlock& r : rows) {
          diag->geometry_rows += r.geo_valid ? 1 : 0;
          diag->doppler_rows += r.dop_valid ? 1 : 0;
          diag->rejected_points += r.geo_valid ? 0 : 1;
        }
        return prior;
      }
    }
  }

  for (const ResidualBlock& r : rows) {
    diag->geometry_rows += r.geo_valid ? 1 : 0;
    diag->doppler_rows += r.dop_valid ? 1 : 0;
    diag->rejected_points += r.geo_valid ? 0 : 1;
  }
  diag->final_cost = accepted_cost;

  // info was built at the last linearization point; refresh it at the final
  // iterate so the posterior covariance matches the converged state
  {
    const StateDelta z = boxminus(x, prior.state);
    const Mat24 j = boxminus_chain_jacobian(z);
    Mat24 a = j.transpose() * prior_info * j;
    for (const ResidualBlock& r : rows) {
      if (r.geo_valid) {
        const double w =
            robust_weight(r.geo_residual / std::sqrt(r.geo_variance), cfg) /
            r.geo_variance;
        a.noalias() += r.geo_jacobian.transpose() * (w * r.geo_jacobian);
      }
      if (r.dop_valid) {
        const double w =
            robust_weight(r.dop_residual / std::sqrt(r.dop_variance), cfg) /
            r.dop_variance;
        a.noalias() += r.dop_jacobian.transpose() * (w * r.dop_jacobian);
      }
    }
    StateWithCov out;
    out.state = x;
    out.cov = a.ldlt().solve(Mat24::Identity());
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
  }
}

}  // namespace doppio
