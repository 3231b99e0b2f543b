#include "doppio/registration.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "doppio/mapping.hpp"

namespace doppio {

namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

struct PassStats {
  Mat6 h = Mat6::Zero();
  Vec6 b = Vec6::Zero();
  Mat3 normal_outer = Mat3::Zero();
  double sum_sq = 0;
  int rows = 0;
};

// One linearization pass at `t`. Right perturbation: R <- R Exp(dtheta),
// p <- p + R dt, so the residual jacobian of n.(R q + p) w.r.t.
// [dtheta, dt] is [-n^T R [q]x, n^T R]. `residual_bound` gates the
// point-to-plane distance: loose while iterating (a misaligned seed needs
// its far-but-correct correspondences to pull it in), tight for the final
// fitness pass.
PassStats accumulate(const std::vector<Vec3>& source, const MapIndex& index,
                     const SE3& t, const RegistrationConfig& cfg,
                     double residual_bound) {
  PassStats out;
  const Mat3 rot = t.rot.matrix();
  for (const Vec3& q : source) {
    const Vec3 in_target = t * q;
    const std::vector<Vec3> nn = index.knn(in_target, cfg.neighbors);
    if (int(nn.size()) < cfg.neighbors ||
        (nn.back() - in_target).norm() > cfg.max_corr_dist)
      continue;
    const PlanePatch patch = fit_plane(nn, cfg.plane_threshold, in_target);
    if (!patch.valid) continue;
    const double r = patch.normal.dot(in_target - patch.centroid);
    if (std::abs(r) > residual_bound) continue;

    Vec6 j;
    j.head<3>() = -(patch.normal.transpose() * rot * skew(q)).transpose();
    j.tail<3>() = rot.transpose() * patch.normal;
    out.h += j * j.transpose();
    out.b += -j * r;
    out.normal_outer += patch.normal * patch.normal.transpose();
    out.sum_sq += r * r;
    ++out.rows;
  }
  return out;
}

}  // namespace

RegistrationResult register_point_to_plane(const std::vector<Vec3>& source,
                                           const std::vector<Vec3>& target,
                                           const SE3& seed,
                                           const RegistrationConfig& cfg) {
  RegistrationResult res;
  res.transform = seed;
  if (source.empty() || target.empty()) return res;

  MapIndex index;
  index.insert_scan(target, 0.0);

  PassStats last;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    res.iterations = it + 1;
    last = accumulate(source, index, res.transform, cfg, cfg.max_corr_dist);
    if (last.rows < 6) {
      last.rows = 0;
      break;
    }
    Mat6 h = last.h;
    h.diagonal() += 1e-9 * Vec6::Ones();  // guards rank-deficient geometry
    const Vec6 delta = h.ldlt().solve(last.b);
    if (!delta.allFinite()) break;
    res.transform.trans += res.transform.rot * delta.tail<3>();
    res.transform.rot = res.transform.rot * SO3::exp(delta.head<3>());
    if (delta.norm() < cfg.convergence_eps) {
      res.converged = true;
      break;
    }
  }
  if (last.rows == 0) return res;

  // fitness at the final pose
  const PassStats fin =
      accumulate(source, index, res.transform, cfg, cfg.plane_threshold);
  if (fin.rows == 0) return res;
  res.inlier_rms = std::sqrt(fin.sum_sq / fin.rows);
  res.inlier_fraction = fin.rows / double(source.size());
  res.normal_spread =
      Eigen::SelfAdjointEigenSolver<Mat3>(fin.normal_outer / fin.rows)
          .eigenvalues()(0);
  res.accepted = res.inlier_rms <= cfg.inlier_rms_max &&
                 res.inlier_fraction >= cfg.min_inlier_fraction &&
                 res.normal_spread >= cfg.min_normal_spread;
  const double var = std::max(fin.sum_sq / fin.rows, 1e-6);
  res.information = fin.h / var;
  return res;
}

}  // namespace doppio
