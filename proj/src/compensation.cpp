#include "doppio/compensation.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace doppio {
namespace {

bool is_exact_identity(const SE3& t) {
  const Eigen::Quaterniond& q = t.rot.quat();
  return q.w() == 1.0 && q.x() == 0.0 && q.y() == 0.0 && q.z() == 0.0 &&
         t.trans.x() == 0.0 && t.trans.y() == 0.0 && t.trans.z() == 0.0;
}

double point_time_checked(const Scan& scan, const PropagationLog& log,
                          size_t index) {
  const double t_p = scan.end_time + scan.points[index].offset_t;
  if (t_p < log.begin_time() - 1e-9 || t_p > log.end_time() + 1e-9) {
    std::ostringstream os;
    os << "motion compensation: point " << index << " at t=" << t_p
       << " outside propagation log [" << log.begin_time() << ", "
       << log.end_time() << "]";
    throw std::out_of_range(os.str());
  }
  return t_p;
}

}  // namespace

Scan compensate_geometry(const Scan& scan, const PropagationLog& log) {
  if (scan.kind == ScanKind::kRadar) return scan;
  Scan out = scan;
  const SE3 t_bs = log.end_state().sensor_to_body();
  const SE3 t_sb = t_bs.inverse();
  for (size_t i = 0; i < out.points.size(); ++i) {
    const double t_p = point_time_checked(scan, log, i);
    const SE3 rel = propagate_backward(log, t_p);
    if (is_exact_identity(rel)) continue;
    out.points[i].position = t_sb * (rel * (t_bs * out.points[i].position));
  }
  return out;
}

Scan compensate_doppler(const Scan& scan, const PropagationLog& log,
                        const NavState& state) {
  if (scan.kind == ScanKind::kRadar) return scan;
  Scan out = scan;
  const SE3 t_bs = state.sensor_to_body();
  const SE3 t_sb = t_bs.inverse();
  const Vec3 v_end = predicted_velocity_at(log, state, log.end_time());
  for (size_t i = 0; i < out.points.size(); ++i) {
    const double t_p = point_time_checked(scan, log, i);
    const SE3 rel = propagate_backward(log, t_p);
    const Vec3& m_end = out.points[i].position;
    const Vec3 m_tp =
        is_exact_identity(rel) ? m_end : t_sb * (rel.inverse() * (t_bs * m_end));
    const double r_end = m_end.norm();
    const double r_tp = m_tp.norm();
    if (!(r_end > 0) || !(r_tp > 0)) {
      std::ostringstream os;
      os << "motion compensation: point " << i << " has zero range";
      throw std::invalid_argument(os.str());
    }
    const Vec3 v_tp = predicted_velocity_at(log, state, t_p);
    const double delta =
        (m_tp / r_tp).dot(v_tp) - (m_end / r_end).dot(v_end);
    if (delta != 0) out.points[i].doppler += delta;
  }
  return out;
}

void dump_compensation(const std::string& path, const Scan& raw,
                       const Scan& compensated) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "dt,x_raw,y_raw,z_raw,doppler_raw,x,y,z,doppler\n";
  char buf[64];
  auto put = [&](double v, char sep) {
    std::snprintf(buf, sizeof(buf), "%.9g%c", v, sep);
    os << buf;
  };
  const size_t n = std::min(raw.points.size(), compensated.points.size());
  for (size_t i = 0; i < n; ++i) {
    const SensorPoint& a = raw.points[i];
    const SensorPoint& b = compensated.points[i];
    put(a.offset_t, ',');
    put(a.position.x(), ',');
    put(a.position.y(), ',');
    put(a.position.z(), ',');
    put(a.doppler, ',');
    put(b.position.x(), ',');
    put(b.position.y(), ',');
    put(b.position.z(), ',');
    put(b.doppler, '\n');
  }
}

}  // namespace doppio
