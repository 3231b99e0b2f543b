#include "doppio/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

namespace doppio {

namespace {

bool parse_line(const std::string& line, TimedPose* out) {
  std::string s = line;
  const bool csv = s.find(',') != std::string::npos;
  if (csv) std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream ss(s);
  std::vector<double> v;
  double x;
  while (ss >> x) v.push_back(x);
  if (v.size() < 8) return false;
  out->t = v[0];
  out->pose.trans = Vec3(v[1], v[2], v[3]);
  // TUM stores xyzw, the ground-truth csv wxyz
  Eigen::Quaterniond q = csv ? Eigen::Quaterniond(v[4], v[5], v[6], v[7])
                             : Eigen::Quaterniond(v[7], v[4], v[5], v[6]);
  if (q.norm() < 1e-9) return false;
  out->pose.rot = SO3(q);
  return true;
}

std::vector<TimedPose> load_any(const std::string& path, bool tum_only) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open trajectory file: " + path);
  std::vector<TimedPose> traj;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!line.empty() && (std::isalpha(line[0]) != 0)) continue;  // header
    if (tum_only && line.find(',') != std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected TUM row");
    TimedPose p;
    if (!parse_line(line, &p))
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed trajectory row");
    traj.push_back(p);
  }
  if (traj.empty()) throw std::runtime_error("no poses in " + path);
  return traj;
}

double rotation_angle_deg(const Mat3& m) {
  const double c = std::clamp((m.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

}  // namespace

std::vector<TimedPose> load_tum(const std::string& path) {
  return load_any(path, true);
}

std::vector<TimedPose> load_trajectory_any(const std::string& path) {
  return load_any(path, false);
}

void save_tum(const std::string& path, const std::vector<TimedPose>& traj) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write trajectory file: " + path);
  char buf[256];
  for (const TimedPose& p : traj) {
    const Eigen::Quaterniond& q = p.pose.rot.quat();
    std::snprintf(buf, sizeof(buf),
                  "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", p.t,
                  p.pose.trans.x(), p.pose.trans.y(), p.pose.trans.z(), q.x(),
                  q.y(), q.z(), q.w());
    f << buf;
  }
}

std::vector<std::pair<int, int>> associate(const std::vector<TimedPose>& est,
                                           const std::vector<TimedPose>& gt,
                                           double max_dt) {
  std::vector<std::pair<int, int>> pairs;
  int last_j = -1;
  for (int i = 0; i < int(est.size()); ++i) {
    const double t = est[i].t;
    // first gt index with time >= t; candidates are it and its predecessor
    int lo = 0, hi = int(gt.size());
    while (lo < hi) {
      const int mid = (lo + hi) / 2;
      if (gt[mid].t < t)
        lo = mid + 1;
      else
        hi = mid;
    }
    int best = -1;
    double best_dt = max_dt;
    for (int cand : {lo - 1, lo}) {
      if (cand < 0 || cand >= int(gt.size())) continue;
      const double dt = std::abs(gt[cand].t - t);
      if (dt <= best_dt && (best < 0 || dt < best_dt)) {
        best = cand;
        best_dt = dt;
      }
    }
    if (best > last_j) {
      pairs.emplace_back(i, best);
      last_j = best;
    }
  }
  return pairs;
}

SE3 rigid_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size() || src.size() < 3)
    throw std::runtime_error("rigid_align needs >= 3 paired points");
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= double(src.size());
  mu_d /= double(src.size());
  Mat3 cov = Mat3::Zero();
  for (size_t i = 0; i < src.size(); ++i)
    cov += (dst[i] - mu_d) * (src[i] - mu_s).transpose();
  cov /= double(src.size());
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0)
    s(2, 2) = -1;
  const Mat3 rot = svd.matrixU() * s * svd.matrixV().transpose();
  return SE3(SO3(rot), mu_d - rot * mu_s);
}

MetricsReport evaluate(const std::vector<TimedPose>& est,
                       const std::vector<TimedPose>& gt,
                       const EvalOptions& opt) {
  const auto pairs = associate(est, gt, opt.max_dt);
  if (pairs.size() < 2)
    throw std::runtime_error("fewer than two associated poses (got " +
                             std::to_string(pairs.size()) + ")");
  MetricsReport rep;
  rep.associated = int(pairs.size());

  std::vector<Vec3> pe, pg;
  pe.reserve(pairs.size());
  pg.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    Vec3 a = est[i].pose.trans, b = gt[j].pose.trans;
    if (opt.planar) {
      a.z() = 0;
      b.z() = 0;
    }
    pe.push_back(a);
    pg.push_back(b);
    rep.times.push_back(est[i].t);
  }
  for (size_t k = 0; k + 1 < pairs.size(); ++k)
    rep.trajectory_length += (gt[pairs[k + 1].second].pose.trans -
                              gt[pairs[k].second].pose.trans)
                                 .norm();

  SE3 align;
  if (opt.align == AlignMode::kRigid) align = rigid_align(pe, pg);

  double sum_sq = 0;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const double e = (align * pe[k] - pg[k]).norm();
    rep.ape_series.push_back(e);
    sum_sq += e * e;
  }
  rep.ape_rmse = std::sqrt(sum_sq / double(pairs.size()));

  // relative errors are invariant to a common left transform, so the raw
  // poses are used regardless of the alignment mode
  double sum_t = 0, sum_r = 0;
  for (size_t k = 0; k + 1 < pairs.size(); ++k) {
    const SE3& pa = est[pairs[k].first].pose;
    const SE3& pb = est[pairs[k + 1].first].pose;
    const SE3& qa = gt[pairs[k].second].pose;
    const SE3& qb = gt[pairs[k + 1].second].pose;
    const SE3 d_est = pa.inverse() * pb;
    const SE3 d_gt = qa.inverse() * qb;
    const SE3 err = d_gt.inverse() * d_est;
    const double et = err.trans.norm();
    const double er = rotation_angle_deg(err.rot.matrix());
    rep.rpe_trans_series.push_back(et);
    rep.rpe_rot_series.push_back(er);
    sum_t += et * et;
    sum_r += er * er;
  }
  rep.rpe_trans_rmse = std::sqrt(sum_t / double(pairs.size() - 1));
  rep.rpe_rot_deg_rmse = std::sqrt(sum_r / double(pairs.size() - 1));
  return rep;
}

std::string MetricsReport::to_text() const {
  std::ostringstream ss;
  ss.precision(12);
  ss << "ape_rmse = " << ape_rmse << "\n"
     << "rpe_trans_rmse = " << rpe_trans_rmse << "\n"
     << "rpe_rot_deg_rmse = " << rpe_rot_deg_rmse << "\n"
     << "trajectory_length = " << trajectory_length << "\n"
     << "associated = " << associated << "\n";
  return ss.str();
}

void MetricsReport::save_series_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write series csv: " + path);
  f << "t,ape,rpe_trans,rpe_rot_deg\n";
  f.precision(9);
  f << std::fixed;
  for (size_t k = 0; k < times.size(); ++k) {
    f << times[k] << "," << ape_series[k] << ",";
    if (k < rpe_trans_series.size())
      f << rpe_trans_series[k] << "," << rpe_rot_series[k];
    else
      f << ",";
    f << "\n";
  }
}

}  // namespace doppio
