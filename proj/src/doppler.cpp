#include "doppio/doppler.hpp"

#include <Eigen/Dense>

#include <fstream>
#include <random>

namespace doppio {

double predict_doppler(const SensorPoint& point, const Vec3& v_s) {
  const double range = point.range();
  if (!(range > 0)) {
    throw std::invalid_argument("predict_doppler: zero-range point");
  }
  return -(point.position / range).dot(v_s);
}

std::vector<double> predicted_dopplers(const Scan& scan,
                                       const PropagationLog& log,
                                       const NavState& state) {
  std::vector<double> out;
  out.reserve(scan.points.size());
  // points within one IMU interval share their predicted sensor velocity;
  // cache by interval start to avoid recomputing per point
  double cached_t = std::numeric_limits<double>::quiet_NaN();
  Vec3 cached_v = Vec3::Zero();
  for (const auto& p : scan.points) {
    const double t_p = scan.end_time + p.offset_t;
    const double t_key = log.record_before(t_p).t;
    if (t_key != cached_t) {
      cached_t = t_key;
      cached_v = predicted_velocity_at(log, state, t_key);
    }
    out.push_back(predict_doppler(p, cached_v));
  }
  return out;
}

Scan classify_points(const Scan& scan, const PropagationLog& log,
                     const NavState& state, const VelocityFilterConfig& cfg,
                     ClassifyStats* stats) {
  if (!(cfg.upsilon > 0)) {
    throw std::invalid_argument("velocity filter threshold must be > 0");
  }
  Scan out = scan;
  const std::vector<double> predicted = predicted_dopplers(scan, log, state);
  ClassifyStats local;
  for (size_t i = 0; i < out.points.size(); ++i) {
    const bool is_static =
        std::abs(predicted[i] - out.points[i].doppler) <= cfg.upsilon;
    out.points[i].label =
        is_static ? PointLabel::kStatic : PointLabel::kDynamic;
    (is_static ? local.static_count : local.dynamic_count)++;
  }
  if (stats) *stats = local;
  return out;
}

namespace {

struct Lsq {
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Vec3 atb = Vec3::Zero();
  int n = 0;

  void add(const SensorPoint& p) {
    const Vec3 dir = p.direction();
    ata.noalias() += dir * dir.transpose();
    atb.noalias() += dir * (-p.doppler);
    ++n;
  }
};

// Solves the stacked system; throws on near-coplanar direction sets.
EgoVelocityEstimate solve_selected(const Scan& scan,
                                   const std::vector<int>& idx) {
  Lsq lsq;
  for (int i : idx) lsq.add(scan.points[i]);

  Eigen::SelfAdjointEigenSolver<Mat3> eig(lsq.ata);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  const double cond =
      lmin > 0 ? std::sqrt(lmax / lmin) : std::numeric_limits<double>::infinity();
  if (!(lmin > 0) || cond > 1e6) {
    throw DegenerateGeometryError(
        "ego-velocity directions are rank deficient (condition number " +
            std::to_string(cond) + ")",
        cond);
  }
  EgoVelocityEstimate est;
  est.v_s = lsq.ata.ldlt().solve(lsq.atb);
  est.inlier_count = lsq.n;

  double ssr = 0;
  for (int i : idx) {
    const SensorPoint& p = scan.points[i];
    const double r = p.direction().dot(est.v_s) + p.doppler;
    ssr += r * r;
  }
  const double dof = std::max(1, lsq.n - 3);
  est.cov = (ssr / dof) * lsq.ata.inverse();
  est.cov = 0.5 * (est.cov + est.cov.transpose()).eval();
  return est;
}

}  // namespace

EgoVelocityEstimate estimate_ego_velocity_lsq(const Scan& scan,
                                              bool use_labels) {
  std::vector<int> selected;
  if (use_labels) {
    for (size_t i = 0; i < scan.points.size(); ++i) {
      if (scan.points[i].label == PointLabel::kStatic) {
        selected.push_back(static_cast<int>(i));
      }
    }
  } else {
    selected.resize(scan.points.size());
    std::iota(selected.begin(), selected.end(), 0);
  }
  if (selected.size() < 3) {
    throw std::invalid_argument(
        "ego-velocity estimation needs at least 3 points, got " +
        std::to_string(selected.size()));
  }

  if (!use_labels) {
    // label-free baseline: consensus over 3-point minimal fits
    constexpr int kIterations = 17;
    constexpr double kInlierGate = 0.2;  // m/s
    std::mt19937 rng(12345);  // fixed seed: deterministic per call
    std::uniform_int_distribution<int> pick(
        0, static_cast<int>(selected.size()) - 1);

    std::vector<int> best;
    for (int it = 0; it < kIterations; ++it) {
      int a = pick(rng), b = pick(rng), c = pick(rng);
      if (a == b || b == c || a == c) continue;
      EgoVelocityEstimate minimal;
      try {
        minimal = solve_selected(scan, {selected[a], selected[b], selected[c]});
      } catch (const DegenerateGeometryError&) {
        continue;
      }
      std::vector<int> inliers;
      for (int i : selected) {
        const SensorPoint& p = scan.points[i];
        if (std::abs(p.direction().dot(minimal.v_s) + p.doppler) <=
            kInlierGate) {
          inliers.push_back(i);
        }
      }
      if (inliers.size() > best.size()) best = std::move(inliers);
    }
    if (best.size() >= 3) selected = std::move(best);
  }
  return solve_selected(scan, selected);
}

void dump_classified_scan(const std::string& path, const Scan& scan,
                          const std::vector<double>& predicted) {
  std::ofstream out(path);
  out << "dt,x,y,z,doppler,predicted,label\n";
  char buf[256];
  for (size_t i = 0; i < scan.points.size(); ++i) {
    const SensorPoint& p = scan.points[i];
    const double pred = i < predicted.size() ? predicted[i] : 0.0;
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d\n",
                  p.offset_t, p.position.x(), p.position.y(), p.position.z(),
                  p.doppler, pred,
                  p.label == PointLabel::kDynamic
                      ? 1
                      : (p.label == PointLabel::kStatic ? 0 : -1));
    out << buf;
  }
}

}  // namespace doppio
