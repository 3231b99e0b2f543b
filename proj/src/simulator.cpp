#include "doppio/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace doppio {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

constexpr double kMinEmitRange = 0.6;  // stay clear of the reader's cutoff

// Uniform Catmull-Rom spline resampled into (arc length -> heading) tables.
struct SplineTable {
  std::vector<double> arc;
  std::vector<double> heading;  // unwrapped tangent heading
  double total_length = 0;

  static SplineTable build(const std::vector<Vec3>& control) {
    if (control.size() < 2) {
      throw std::invalid_argument("spline needs at least 2 control points");
    }
    std::vector<Eigen::Vector2d> pts;
    pts.reserve(control.size() + 2);
    auto xy = [](const Vec3& v) { return Eigen::Vector2d(v.x(), v.y()); };
    pts.push_back(xy(control.front()) * 2 - xy(control[1]));
    for (const auto& c : control) pts.push_back(xy(c));
    pts.push_back(xy(control.back()) * 2 - xy(control[control.size() - 2]));

    SplineTable out;
    const int spans = static_cast<int>(pts.size()) - 3;
    const int kSamplesPerSpan = 400;
    double acc = 0;
    double prev_heading = 0;
    Eigen::Vector2d prev_pos;
    bool first = true;
    for (int s = 0; s < spans; ++s) {
      const Eigen::Vector2d& p0 = pts[s];
      const Eigen::Vector2d& p1 = pts[s + 1];
      const Eigen::Vector2d& p2 = pts[s + 2];
      const Eigen::Vector2d& p3 = pts[s + 3];
      for (int i = (s == 0 ? 0 : 1); i <= kSamplesPerSpan; ++i) {
        const double u = static_cast<double>(i) / kSamplesPerSpan;
        Eigen::Vector2d pos =
            0.5 * (2 * p1 + (-p0 + p2) * u +
                   (2 * p0 - 5 * p1 + 4 * p2 - p3) * u * u +
                   (-p0 + 3 * p1 - 3 * p2 + p3) * u * u * u);
        Eigen::Vector2d der =
            0.5 * ((-p0 + p2) + 2 * (2 * p0 - 5 * p1 + 4 * p2 - p3) * u +
                   3 * (-p0 + 3 * p1 - 3 * p2 + p3) * u * u);
        double h = std::atan2(der.y(), der.x());
        if (!first) {
          acc += (pos - prev_pos).norm();
          while (h - prev_heading > M_PI) h -= 2 * M_PI;
          while (h - prev_heading < -M_PI) h += 2 * M_PI;
        }
        out.arc.push_back(acc);
        out.heading.push_back(h);
        prev_pos = pos;
        prev_heading = h;
        first = false;
      }
    }
    out.total_length = acc;
    if (out.total_length <= 0) {
      throw std::invalid_argument("spline has zero length");
    }
    return out;
  }

  double heading_at(double a) const {
    a = std::clamp(a, 0.0, total_length);
    auto it = std::lower_bound(arc.begin(), arc.end(), a);
    if (it == arc.begin()) return heading.front();
    size_t i = it - arc.begin();
    if (i >= arc.size()) return heading.back();
    const double a0 = arc[i - 1], a1 = arc[i];
    const double w = a1 > a0 ? (a - a0) / (a1 - a0) : 0.0;
    return heading[i - 1] + w * (heading[i] - heading[i - 1]);
  }
};

// Continuous heading/speed reference assembled from the segments. Only
// this profile is sampled; the trajectory itself is the discrete
// recursion in simulate().
class MotionProfile {
 public:
  explicit MotionProfile(const std::vector<TrajectorySegment>& segments) {
    double t = 0, speed = 0, psi = 0;
    for (size_t i = 0; i < segments.size(); ++i) {
      const TrajectorySegment& seg = segments[i];
      Entry e;
      e.t0 = t;
      e.s0 = speed;
      e.psi0 = psi;
      e.kind = seg.kind;
      e.accel = seg.accel;
      e.yaw_rate = seg.yaw_rate;
      double duration = seg.duration;
      double exit_speed = 0;
      switch (seg.kind) {
        case TrajectorySegment::Kind::kStationary:
          if (std::abs(speed) > 1e-6) {
            throw std::invalid_argument(
                "trajectory speed jump: stationary segment " +
                std::to_string(i) + " entered at " + std::to_string(speed) +
                " m/s");
          }
          e.accel = 0;
          e.yaw_rate = 0;
          exit_speed = 0;
          break;
        case TrajectorySegment::Kind::kStraight:
          e.yaw_rate = 0;
          exit_speed = speed + seg.accel * duration;
          break;
        case TrajectorySegment::Kind::kArc:
          exit_speed = speed + seg.accel * duration;
          break;
        case TrajectorySegment::Kind::kSpline: {
          if (seg.speed <= 0) {
            throw std::invalid_argument("spline segment needs speed > 0");
          }
          if (std::abs(speed - seg.speed) > 1e-6) {
            throw std::invalid_argument(
                "trajectory speed jump: spline segment " + std::to_string(i) +
                " at " + std::to_string(seg.speed) + " m/s entered at " +
                std::to_string(speed) + " m/s");
          }
          e.spline = SplineTable::build(seg.control_points);
          e.spline_speed = seg.speed;
          duration = e.spline.total_length / seg.speed;
          exit_speed = seg.speed;
          break;
        }
      }
      if (!(duration > 0)) {
        throw std::invalid_argument("segment duration must be > 0");
      }
      if (exit_speed < -1e-9 || speed < -1e-9) {
        throw std::invalid_argument("trajectory speed became negative");
      }
      e.duration = duration;
      entries_.push_back(std::move(e));
      t += duration;
      // heading at segment end
      psi = entries_.back().psi_at(duration);
      speed = exit_speed;
    }
    total_ = t;
  }

  double total_duration() const { return total_; }

  double speed_at(double t) const {
    const Entry& e = entry(t);
    const double tau = std::clamp(t - e.t0, 0.0, e.duration);
    if (e.kind == TrajectorySegment::Kind::kSpline) return e.spline_speed;
    if (e.kind == TrajectorySegment::Kind::kStationary) return 0;
    return e.s0 + e.accel * tau;
  }

  double heading_at(double t) const {
    const Entry& e = entry(t);
    return e.psi_at(std::clamp(t - e.t0, 0.0, e.duration));
  }

 private:
  struct Entry {
    double t0 = 0, duration = 0, s0 = 0, psi0 = 0;
    TrajectorySegment::Kind kind = TrajectorySegment::Kind::kStationary;
    double accel = 0, yaw_rate = 0;
    SplineTable spline;
    double spline_speed = 0;

    double psi_at(double tau) const {
      if (kind == TrajectorySegment::Kind::kArc) return psi0 + yaw_rate * tau;
      if (kind == TrajectorySegment::Kind::kSpline) {
        return psi0 + (spline.heading_at(spline_speed * tau) -
                       spline.heading_at(0));
      }
      return psi0;
    }
  };

  const Entry& entry(double t) const {
    for (const auto& e : entries_) {
      if (t < e.t0 + e.duration) return e;
    }
    return entries_.back();
  }

  std::vector<Entry> entries_;
  double total_ = 0;
};

void plane_basis(const Vec3& normal, Vec3* e_u, Vec3* e_v) {
  Vec3 n = normal.normalized();
  Vec3 ref = std::abs(n.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  *e_u = n.cross(ref).normalized();
  *e_v = n.cross(*e_u);
}

}  // namespace

Vec3 Actor::position_at(double t) const {
  Vec3 p = start;
  double rem = t;
  for (const auto& [dur, vel] : motion) {
    if (rem <= dur) return p + vel * rem;
    p += vel * dur;
    rem -= dur;
  }
  // hold the last velocity past the profile end
  if (!motion.empty()) return p + motion.back().second * rem;
  return p;
}

Vec3 Actor::velocity_at(double t) const {
  double rem = t;
  for (const auto& [dur, vel] : motion) {
    if (rem <= dur) return vel;
    rem -= dur;
  }
  return motion.empty() ? Vec3::Zero() : motion.back().second;
}

double SimScenario::total_duration() const {
  return MotionProfile(trajectory).total_duration();
}

void SimScenario::validate() const {
  if (trajectory.empty()) {
    throw std::invalid_argument("scenario has no trajectory segments");
  }
  if (trajectory.front().kind != TrajectorySegment::Kind::kStationary ||
      trajectory.front().duration < 0.4) {
    throw std::invalid_argument(
        "trajectory must begin with a stationary segment of at least 0.4 s "
        "(initialization window)");
  }
  MotionProfile profile(trajectory);  // validates continuity
  if (!(imu_rate > 0) || !(scan_rate > 0)) {
    throw std::invalid_argument("imu_rate and scan_rate must be > 0");
  }
  const double period_steps = imu_rate / scan_rate;
  if (std::abs(period_steps - std::round(period_steps)) > 1e-6) {
    throw std::invalid_argument(
        "scan period must be an integer multiple of the IMU period");
  }
  if (!(fov_deg > 0) || fov_deg > 360) {
    throw std::invalid_argument("fov_deg must be in (0, 360]");
  }
  if (!(max_range > 1)) {
    throw std::invalid_argument("max_range must be > 1 m");
  }
  if (noise_scale < 0 || outlier_fraction < 0 || outlier_fraction > 0.5) {
    throw std::invalid_argument("bad noise_scale or outlier_fraction");
  }
  noise.validate();
  for (const auto& a : actors) {
    for (const auto& [dur, vel] : a.motion) {
      (void)vel;
      if (!(dur > 0)) {
        throw std::invalid_argument("actor motion durations must be > 0");
      }
    }
  }
  int world_points = 0;
  for (const auto& s : surfaces) world_points += s.points_per_scan;
  for (const auto& c : clusters) world_points += c.points_per_scan;
  for (const auto& a : actors) world_points += a.points_per_scan;
  if (world_points <= 0) {
    throw std::invalid_argument("scenario world generates no points");
  }
}

const GroundTruthSample& GroundTruth::sample_at(double t) const {
  if (samples.empty()) throw std::invalid_argument("empty ground truth");
  auto it = std::upper_bound(
      samples.begin(), samples.end(), t,
      [](double v, const GroundTruthSample& s) { return v < s.t; });
  if (it == samples.begin()) return samples.front();
  return *(it - 1);
}

void GroundTruth::interpolate(double t, SO3* rot, Vec3* pos, Vec3* vel) const {
  const GroundTruthSample& s = sample_at(t);
  const double tau = t - s.t;
  if (rot) *rot = tau > 0 ? s.rot * SO3::exp(s.body_rate * tau) : s.rot;
  if (vel) *vel = s.vel + s.world_accel * tau;
  if (pos) *pos = s.pos + s.vel * tau + 0.5 * tau * tau * s.world_accel;
}

Vec3 GroundTruth::sensor_velocity(double t) const {
  SO3 rot;
  Vec3 pos, vel;
  interpolate(t, &rot, &pos, &vel);
  const Vec3 omega = sample_at(t).body_rate;
  const Vec3 v_world = vel + rot * omega.cross(ext_pos);
  return (rot * ext_rot).inv_rotate(v_world);
}

GroundTruth simulate(const SimScenario& sc, const std::string& out_dir) {
  sc.validate();
  MotionProfile profile(sc.trajectory);

  const double dt = 1.0 / sc.imu_rate;
  const double period = 1.0 / sc.scan_rate;
  const int n_steps =
      static_cast<int>(std::llround(profile.total_duration() * sc.imu_rate));
  const int steps_per_scan = static_cast<int>(std::llround(period / dt));
  const int n_scans = n_steps / steps_per_scan;

  std::mt19937 rng(sc.seed);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto n3 = [&]() { return Vec3(gauss(rng), gauss(rng), gauss(rng)); };

  // Scatterers are fixed physical targets: sample each cluster/actor layout
  // once up front so a rescan revisits the same points instead of drawing a
  // fresh interior sample every frame.
  auto ball = [&]() {
    Vec3 dir = n3();
    const double dn = dir.norm();
    dir = dn > 1e-12 ? Vec3(dir / dn) : Vec3::UnitX();
    return Vec3(dir * std::cbrt(unit(rng)));
  };
  std::vector<std::vector<Vec3>> cluster_pts(sc.clusters.size());
  for (size_t i = 0; i < sc.clusters.size(); ++i) {
    for (int j = 0; j < sc.clusters[i].points_per_scan; ++j) {
      cluster_pts[i].push_back(sc.clusters[i].center +
                               sc.clusters[i].radius * ball());
    }
  }
  std::vector<std::vector<Vec3>> actor_pts(sc.actors.size());
  for (size_t i = 0; i < sc.actors.size(); ++i) {
    for (int j = 0; j < sc.actors[i].points_per_scan; ++j) {
      actor_pts[i].push_back(sc.actors[i].radius * ball());
    }
  }

  const Vec3 grav_world(0, 0, -sc.gravity_magnitude);
  const double gyro_std = sc.noise.gyro_noise / std::sqrt(dt) * sc.noise_scale;
  const double accel_std =
      sc.noise.accel_noise / std::sqrt(dt) * sc.noise_scale;
  const double bg_walk = sc.noise.gyro_bias_rw * std::sqrt(dt) * sc.noise_scale;
  const double ba_walk =
      sc.noise.accel_bias_rw * std::sqrt(dt) * sc.noise_scale;
  const double pos_std = sc.noise.point_sigma * sc.noise_scale;
  const double dop_std = sc.noise.doppler_sigma * sc.noise_scale;

  LogMeta meta;
  meta.kind = sc.kind;
  meta.scan_period = period;
  meta.extrinsic_rot_guess = sc.ext_rot_guess;
  meta.extrinsic_pos_guess = sc.ext_pos_guess;
  meta.noise = sc.noise;
  meta.gravity_magnitude = sc.gravity_magnitude;
  LogWriter writer(out_dir, meta);

  GroundTruth gt;
  gt.ext_rot = sc.ext_rot_true;
  gt.ext_pos = sc.ext_pos_true;
  gt.true_bg = sc.true_bg;
  gt.true_ba = sc.true_ba;
  gt.gravity_magnitude = sc.gravity_magnitude;
  gt.samples.reserve(n_steps + 1);

  // Trajectory recursion on the IMU grid: body rate and world-frame
  // acceleration are constant over each interval, so the emitted IMU and
  // the emitted poses are exactly consistent under zero-order hold.
  SO3 rot;
  Vec3 pos = Vec3::Zero(), vel = Vec3::Zero();
  Vec3 bg = sc.true_bg, ba = sc.true_ba;
  Vec3 omega = Vec3::Zero(), acc_w = Vec3::Zero();
  for (int k = 0; k <= n_steps; ++k) {
    const double t0 = k * dt;
    if (k < n_steps) {
      const double t1 = (k + 1) * dt;
      const double dpsi = profile.heading_at(t1) - profile.heading_at(t0);
      omega = Vec3(0, 0, dpsi / dt);
      const SO3 rot_next = rot * SO3::exp(omega * dt);
      const Vec3 vel_des_next =
          rot_next * Vec3(profile.speed_at(t1), 0, 0);
      acc_w = (vel_des_next - vel) / dt;
    }
    gt.samples.push_back({t0, rot, pos, vel, omega, acc_w});

    ImuSample imu;
    imu.t = t0;
    imu.gyro = omega + bg + gyro_std * n3();
    imu.accel = rot.inv_rotate(acc_w - grav_world) + ba + accel_std * n3();
    writer.write_imu(imu);

    if (k < n_steps) {
      pos = pos + vel * dt + 0.5 * dt * dt * acc_w;
      vel = vel + acc_w * dt;
      rot = rot * SO3::exp(omega * dt);
      bg += bg_walk * n3();
      ba += ba_walk * n3();
    }
  }

  // Sensor pose / world velocity at any time, from the grid recursion.
  auto body_at = [&](double t, SO3* r, Vec3* p, Vec3* v, Vec3* w) {
    const GroundTruthSample& s = gt.sample_at(t);
    const double tau = t - s.t;
    SO3 rt = tau > 0 ? s.rot * SO3::exp(s.body_rate * tau) : s.rot;
    if (r) *r = rt;
    if (p) *p = s.pos + s.vel * tau + 0.5 * tau * tau * s.world_accel;
    if (v) *v = s.vel + s.world_accel * tau;
    if (w) *w = s.body_rate;
  };

  const double fov_half = sc.fov_deg * M_PI / 180.0 / 2.0;
  fs::create_directories(fs::path(out_dir) / "gt_labels");

  struct Generated {
    SensorPoint meas;
    ReferencePoint ref;
    double t_p = 0;
    int order = 0;
  };

  for (int s = 0; s < n_scans; ++s) {
    const double t_end = (s + 1) * steps_per_scan * dt;

    SO3 rot_se;  // sensor at scan end
    Vec3 pos_b_end, vel_b_end, omega_end;
    body_at(t_end, &rot_se, &pos_b_end, &vel_b_end, &omega_end);
    const SO3 rot_s_end = rot_se * sc.ext_rot_true;
    const Vec3 pos_s_end = rot_se * sc.ext_pos_true + pos_b_end;
    const Vec3 vel_s_end =
        vel_b_end + rot_se * omega_end.cross(sc.ext_pos_true);

    // candidate world targets in a fixed order
    struct Candidate {
      int source;  // 0 surface, 1 cluster, 2 actor
      int index;
      int sub;
    };
    std::vector<Candidate> candidates;
    for (size_t i = 0; i < sc.surfaces.size(); ++i) {
      for (int j = 0; j < sc.surfaces[i].points_per_scan; ++j) {
        candidates.push_back({0, static_cast<int>(i), j});
      }
    }
    for (size_t i = 0; i < sc.clusters.size(); ++i) {
      for (int j = 0; j < sc.clusters[i].points_per_scan; ++j) {
        candidates.push_back({1, static_cast<int>(i), j});
      }
    }
    for (size_t i = 0; i < sc.actors.size(); ++i) {
      for (int j = 0; j < sc.actors[i].points_per_scan; ++j) {
        candidates.push_back({2, static_cast<int>(i), j});
      }
    }
    const int m_total = static_cast<int>(candidates.size());

    std::vector<Generated> out;
    out.reserve(m_total);
    for (int j = 0; j < m_total; ++j) {
      const double t_p =
          sc.kind == ScanKind::kRadar
              ? t_end
              : t_end - period + period * (j + 0.5) / m_total;
      Vec3 target_w, target_vel = Vec3::Zero();
      PointLabel label = PointLabel::kStatic;
      const Candidate& c = candidates[j];
      if (c.source == 0) {
        const PlanarSurface& srf = sc.surfaces[c.index];
        Vec3 e_u, e_v;
        plane_basis(srf.normal, &e_u, &e_v);
        const double du = (2 * unit(rng) - 1) * srf.half_u;
        const double dv = (2 * unit(rng) - 1) * srf.half_v;
        target_w = srf.center + du * e_u + dv * e_v;
      } else if (c.source == 1) {
        target_w = cluster_pts[c.index][c.sub];
      } else {
        const Actor& actor = sc.actors[c.index];
        target_w = actor.position_at(t_p) + actor_pts[c.index][c.sub];
        target_vel = actor.velocity_at(t_p);
        label = PointLabel::kDynamic;
      }

      SO3 rot_b;
      Vec3 pos_b, vel_b, omega_b;
      body_at(t_p, &rot_b, &pos_b, &vel_b, &omega_b);
      const SO3 rot_sw = rot_b * sc.ext_rot_true;
      const Vec3 pos_sw = rot_b * sc.ext_pos_true + pos_b;
      const Vec3 vel_sw = vel_b + rot_b * omega_b.cross(sc.ext_pos_true);

      const Vec3 x_s = rot_sw.inv_rotate(target_w - pos_sw);
      const double range = x_s.norm();
      if (range < kMinEmitRange || range > sc.max_range) continue;
      if (std::atan2(std::hypot(x_s.y(), x_s.z()), x_s.x()) > fov_half) {
        continue;
      }

      Generated g;
      g.t_p = t_p;
      g.order = j;
      const Vec3 dir_s = x_s / range;
      const double doppler =
          dir_s.dot(rot_sw.inv_rotate(target_vel - vel_sw));
      g.meas.offset_t = sc.kind == ScanKind::kRadar ? 0.0 : t_p - t_end;
      g.meas.position = x_s + pos_std * n3();
      g.meas.doppler = doppler + dop_std * gauss(rng);
      g.meas.intensity = 100.0 * unit(rng);
      g.meas.label = PointLabel::kUnclassified;

      g.ref.position = rot_s_end.inv_rotate(target_w - pos_s_end);
      const Vec3 dir_ref = g.ref.position.normalized();
      g.ref.doppler =
          dir_ref.dot(rot_s_end.inv_rotate(target_vel - vel_s_end));
      g.ref.label = label;
      g.ref.world_velocity = target_vel;
      out.push_back(std::move(g));
    }

    // injected outliers, labeled dynamic
    const int n_out = static_cast<int>(
        std::llround(sc.outlier_fraction * static_cast<double>(out.size())));
    for (int j = 0; j < n_out; ++j) {
      const double cos_min = std::cos(fov_half);
      const double ct = cos_min + (1 - cos_min) * unit(rng);
      const double st = std::sqrt(std::max(0.0, 1 - ct * ct));
      const double phi = 2 * M_PI * unit(rng);
      const Vec3 dir(ct, st * std::cos(phi), st * std::sin(phi));
      const double range = 2.0 + (0.9 * sc.max_range - 2.0) * unit(rng);
      const double t_p = sc.kind == ScanKind::kRadar
                             ? t_end
                             : t_end - period * unit(rng);
      Generated g;
      g.t_p = t_p;
      g.order = m_total + j;
      g.meas.offset_t = sc.kind == ScanKind::kRadar ? 0.0 : t_p - t_end;
      g.meas.position = dir * range;
      g.meas.doppler = (2 * unit(rng) - 1) * 8.0;
      g.meas.intensity = 100.0 * unit(rng);

      SO3 rot_b;
      Vec3 pos_b;
      body_at(t_p, &rot_b, &pos_b, nullptr, nullptr);
      const SO3 rot_sw = rot_b * sc.ext_rot_true;
      const Vec3 pos_sw = rot_b * sc.ext_pos_true + pos_b;
      const Vec3 target_w = rot_sw * g.meas.position + pos_sw;
      g.ref.position = rot_s_end.inv_rotate(target_w - pos_s_end);
      g.ref.doppler =
          g.ref.position.normalized().dot(rot_s_end.inv_rotate(-vel_s_end));
      g.ref.label = PointLabel::kDynamic;
      out.push_back(std::move(g));
    }

    if (sc.kind == ScanKind::kFmcwLidar) {
      std::stable_sort(out.begin(), out.end(),
                       [](const Generated& a, const Generated& b) {
                         if (a.t_p != b.t_p) return a.t_p < b.t_p;
                         return a.order < b.order;
                       });
    }

    Scan scan;
    scan.end_time = t_end;
    scan.kind = sc.kind;
    ReferenceScan ref_scan;
    ref_scan.end_time = t_end;
    for (const auto& g : out) {
      scan.points.push_back(g.meas);
      ref_scan.points.push_back(g.ref);
    }
    writer.write_scan(scan);
    gt.reference_scans.push_back(std::move(ref_scan));

    std::ofstream labels(fs::path(out_dir) / "gt_labels" /
                         scan_file_name(s, t_end));
    labels << "label\n";
    for (const auto& g : out) {
      labels << (g.ref.label == PointLabel::kDynamic ? 1 : 0) << "\n";
    }
  }
  writer.finish();

  std::ofstream traj(fs::path(out_dir) / "gt_trajectory.csv");
  traj << "t,x,y,z,qw,qx,qy,qz,vx,vy,vz\n";
  for (const auto& s : gt.samples) {
    const auto& q = s.rot.quat();
    traj << fmt(s.t) << ',' << fmt(s.pos.x()) << ',' << fmt(s.pos.y()) << ','
         << fmt(s.pos.z()) << ',' << fmt(q.w()) << ',' << fmt(q.x()) << ','
         << fmt(q.y()) << ',' << fmt(q.z()) << ',' << fmt(s.vel.x()) << ','
         << fmt(s.vel.y()) << ',' << fmt(s.vel.z()) << '\n';
  }
  return gt;
}

SimScenario make_noiseless(SimScenario sc) {
  sc.noise_scale = 0;
  sc.true_bg = Vec3::Zero();
  sc.true_ba = Vec3::Zero();
  sc.outlier_fraction = 0;
  return sc;
}

// ---------------------------------------------------------------------------
// scenario <-> config text

namespace {

std::vector<double> to_array(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec3_of(const std::vector<double>& a, const char* what) {
  if (a.size() != 3) {
    throw ConfigError(std::string(what) + " needs 3 entries");
  }
  return Vec3(a[0], a[1], a[2]);
}

SO3 quat_of(const std::vector<double>& a, const char* what) {
  if (a.size() != 4) {
    throw ConfigError(std::string(what) + " needs 4 entries (w x y z)");
  }
  return SO3(Eigen::Quaterniond(a[0], a[1], a[2], a[3]));
}

std::string arr_text(const std::vector<double>& a) {
  std::string out = "[";
  for (size_t i = 0; i < a.size(); ++i) {
    if (i) out += ", ";
    out += fmt(a[i]);
  }
  return out + "]";
}

ConfigValue arr_value(std::vector<double> a) {
  ConfigValue v;
  v.v = std::move(a);
  return v;
}

const char* segment_kind_name(TrajectorySegment::Kind k) {
  switch (k) {
    case TrajectorySegment::Kind::kStationary: return "stationary";
    case TrajectorySegment::Kind::kStraight: return "straight";
    case TrajectorySegment::Kind::kArc: return "arc";
    case TrajectorySegment::Kind::kSpline: return "spline";
  }
  return "stationary";
}

TrajectorySegment::Kind segment_kind_of(const std::string& s) {
  if (s == "stationary") return TrajectorySegment::Kind::kStationary;
  if (s == "straight") return TrajectorySegment::Kind::kStraight;
  if (s == "arc") return TrajectorySegment::Kind::kArc;
  if (s == "spline") return TrajectorySegment::Kind::kSpline;
  throw ConfigError("unknown segment kind: " + s);
}

}  // namespace

SimScenario SimScenario::from_config(const ConfigTable& cfg) {
  SimScenario sc;
  sc.name = cfg.get_string("name", "unnamed");
  sc.seed = static_cast<uint32_t>(cfg.get_int("seed", 1));
  sc.noise_scale = cfg.get_double("noise_scale", 1.0);
  sc.outlier_fraction = cfg.get_double("outlier_fraction", 0.0);

  sc.kind = cfg.get_string("sensor.kind", "radar") == "radar"
                ? ScanKind::kRadar
                : ScanKind::kFmcwLidar;
  sc.scan_rate = cfg.get_double("sensor.scan_rate", 10.0);
  sc.fov_deg = cfg.get_double("sensor.fov_deg", 360.0);
  sc.max_range = cfg.get_double("sensor.max_range", 60.0);
  if (cfg.has("sensor.extrinsic_rot_true")) {
    sc.ext_rot_true = quat_of(cfg.get_array("sensor.extrinsic_rot_true"),
                              "sensor.extrinsic_rot_true");
    sc.ext_pos_true = vec3_of(cfg.get_array("sensor.extrinsic_pos_true"),
                              "sensor.extrinsic_pos_true");
  }
  sc.ext_rot_guess = cfg.has("sensor.extrinsic_rot_guess")
                         ? quat_of(cfg.get_array("sensor.extrinsic_rot_guess"),
                                   "sensor.extrinsic_rot_guess")
                         : sc.ext_rot_true;
  sc.ext_pos_guess = cfg.has("sensor.extrinsic_pos_guess")
                         ? vec3_of(cfg.get_array("sensor.extrinsic_pos_guess"),
                                   "sensor.extrinsic_pos_guess")
                         : sc.ext_pos_true;

  sc.imu_rate = cfg.get_double("imu.rate", 100.0);
  if (cfg.has("imu.true_bg")) {
    sc.true_bg = vec3_of(cfg.get_array("imu.true_bg"), "imu.true_bg");
  }
  if (cfg.has("imu.true_ba")) {
    sc.true_ba = vec3_of(cfg.get_array("imu.true_ba"), "imu.true_ba");
  }
  sc.gravity_magnitude = cfg.get_double("imu.gravity_magnitude", 9.81);
  sc.noise.gyro_noise = cfg.get_double("noise.gyro_noise", sc.noise.gyro_noise);
  sc.noise.accel_noise =
      cfg.get_double("noise.accel_noise", sc.noise.accel_noise);
  sc.noise.gyro_bias_rw =
      cfg.get_double("noise.gyro_bias_rw", sc.noise.gyro_bias_rw);
  sc.noise.accel_bias_rw =
      cfg.get_double("noise.accel_bias_rw", sc.noise.accel_bias_rw);
  sc.noise.point_sigma =
      cfg.get_double("noise.point_sigma", sc.noise.point_sigma);
  sc.noise.doppler_sigma =
      cfg.get_double("noise.doppler_sigma", sc.noise.doppler_sigma);

  for (const auto& b : cfg.blocks("segment")) {
    TrajectorySegment seg;
    seg.kind = segment_kind_of(b.get_string("kind", "straight"));
    seg.duration = b.get_double("duration", 1.0);
    seg.accel = b.get_double("accel", 0.0);
    seg.yaw_rate = b.get_double("yaw_rate", 0.0);
    seg.speed = b.get_double("speed", 0.0);
    if (b.has("control_points")) {
      auto flat = b.get_array("control_points");
      if (flat.size() % 3 != 0) {
        throw ConfigError("control_points length must be a multiple of 3");
      }
      for (size_t i = 0; i + 2 < flat.size(); i += 3) {
        seg.control_points.emplace_back(flat[i], flat[i + 1], flat[i + 2]);
      }
    }
    sc.trajectory.push_back(std::move(seg));
  }
  for (const auto& b : cfg.blocks("surface")) {
    PlanarSurface s;
    s.center = vec3_of(b.get_array("center"), "surface.center");
    s.normal = vec3_of(b.get_array("normal"), "surface.normal");
    s.half_u = b.get_double("half_u", 1.0);
    s.half_v = b.get_double("half_v", 1.0);
    s.points_per_scan = b.get_int("points_per_scan", 0);
    sc.surfaces.push_back(s);
  }
  for (const auto& b : cfg.blocks("cluster")) {
    ScatterCluster c;
    c.center = vec3_of(b.get_array("center"), "cluster.center");
    c.radius = b.get_double("radius", 0.5);
    c.points_per_scan = b.get_int("points_per_scan", 0);
    sc.clusters.push_back(c);
  }
  for (const auto& b : cfg.blocks("actor")) {
    Actor a;
    a.start = vec3_of(b.get_array("start"), "actor.start");
    a.radius = b.get_double("radius", 1.0);
    a.points_per_scan = b.get_int("points_per_scan", 0);
    auto flat = b.get_array("motion");
    if (flat.size() % 4 != 0) {
      throw ConfigError("actor motion length must be a multiple of 4");
    }
    for (size_t i = 0; i + 3 < flat.size(); i += 4) {
      a.motion.emplace_back(flat[i], Vec3(flat[i + 1], flat[i + 2],
                                          flat[i + 3]));
    }
    sc.actors.push_back(std::move(a));
  }
  return sc;
}

std::string SimScenario::to_config_text() const {
  std::ostringstream os;
  os << "name = \"" << name << "\"\n";
  os << "seed = " << seed << "\n";
  os << "noise_scale = " << fmt(noise_scale) << "\n";
  os << "outlier_fraction = " << fmt(outlier_fraction) << "\n\n";
  const auto& qt = ext_rot_true.quat();
  const auto& qg = ext_rot_guess.quat();
  os << "[sensor]\n";
  os << "kind = \"" << (kind == ScanKind::kRadar ? "radar" : "fmcw_lidar")
     << "\"\n";
  os << "scan_rate = " << fmt(scan_rate) << "\n";
  os << "fov_deg = " << fmt(fov_deg) << "\n";
  os << "max_range = " << fmt(max_range) << "\n";
  os << "extrinsic_rot_true = "
     << arr_text({qt.w(), qt.x(), qt.y(), qt.z()}) << "\n";
  os << "extrinsic_pos_true = " << arr_text(to_array(ext_pos_true)) << "\n";
  os << "extrinsic_rot_guess = "
     << arr_text({qg.w(), qg.x(), qg.y(), qg.z()}) << "\n";
  os << "extrinsic_pos_guess = " << arr_text(to_array(ext_pos_guess))
     << "\n\n";
  os << "[imu]\n";
  os << "rate = " << fmt(imu_rate) << "\n";
  os << "true_bg = " << arr_text(to_array(true_bg)) << "\n";
  os << "true_ba = " << arr_text(to_array(true_ba)) << "\n";
  os << "gravity_magnitude = " << fmt(gravity_magnitude) << "\n\n";
  os << "[noise]\n";
  os << "gyro_noise = " << fmt(noise.gyro_noise) << "\n";
  os << "accel_noise = " << fmt(noise.accel_noise) << "\n";
  os << "gyro_bias_rw = " << fmt(noise.gyro_bias_rw) << "\n";
  os << "accel_bias_rw = " << fmt(noise.accel_bias_rw) << "\n";
  os << "point_sigma = " << fmt(noise.point_sigma) << "\n";
  os << "doppler_sigma = " << fmt(noise.doppler_sigma) << "\n";
  for (const auto& seg : trajectory) {
    os << "\n[[segment]]\n";
    os << "kind = \"" << segment_kind_name(seg.kind) << "\"\n";
    os << "duration = " << fmt(seg.duration) << "\n";
    os << "accel = " << fmt(seg.accel) << "\n";
    os << "yaw_rate = " << fmt(seg.yaw_rate) << "\n";
    os << "speed = " << fmt(seg.speed) << "\n";
    if (!seg.control_points.empty()) {
      std::vector<double> flat;
      for (const auto& c : seg.control_points) {
        flat.push_back(c.x());
        flat.push_back(c.y());
        flat.push_back(c.z());
      }
      os << "control_points = " << arr_text(flat) << "\n";
    }
  }
  for (const auto& s : surfaces) {
    os << "\n[[surface]]\n";
    os << "center = " << arr_text(to_array(s.center)) << "\n";
    os << "normal = " << arr_text(to_array(s.normal)) << "\n";
    os << "half_u = " << fmt(s.half_u) << "\n";
    os << "half_v = " << fmt(s.half_v) << "\n";
    os << "points_per_scan = " << s.points_per_scan << "\n";
  }
  for (const auto& c : clusters) {
    os << "\n[[cluster]]\n";
    os << "center = " << arr_text(to_array(c.center)) << "\n";
    os << "radius = " << fmt(c.radius) << "\n";
    os << "points_per_scan = " << c.points_per_scan << "\n";
  }
  for (const auto& a : actors) {
    os << "\n[[actor]]\n";
    os << "start = " << arr_text(to_array(a.start)) << "\n";
    os << "radius = " << fmt(a.radius) << "\n";
    os << "points_per_scan = " << a.points_per_scan << "\n";
    std::vector<double> flat;
    for (const auto& [dur, vel] : a.motion) {
      flat.push_back(dur);
      flat.push_back(vel.x());
      flat.push_back(vel.y());
      flat.push_back(vel.z());
    }
    os << "motion = " << arr_text(flat) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// built-in scenarios

namespace {

TrajectorySegment seg_stationary(double duration) {
  TrajectorySegment s;
  s.kind = TrajectorySegment::Kind::kStationary;
  s.duration = duration;
  return s;
}

TrajectorySegment seg_straight(double duration, double accel) {
  TrajectorySegment s;
  s.kind = TrajectorySegment::Kind::kStraight;
  s.duration = duration;
  s.accel = accel;
  return s;
}

TrajectorySegment seg_arc(double duration, double yaw_rate,
                          double accel = 0.0) {
  TrajectorySegment s;
  s.kind = TrajectorySegment::Kind::kArc;
  s.duration = duration;
  s.yaw_rate = yaw_rate;
  s.accel = accel;
  return s;
}

PlanarSurface wall(const Vec3& center, const Vec3& normal, double half_u,
                   double half_v, int pts) {
  PlanarSurface s;
  s.center = center;
  s.normal = normal;
  s.half_u = half_u;
  s.half_v = half_v;
  s.points_per_scan = pts;
  return s;
}

void add_ground(SimScenario& sc, const Vec3& center, double half_x,
                double half_y, int pts) {
  sc.surfaces.push_back(
      wall(Vec3(center.x(), center.y(), -1.0), Vec3::UnitZ(), half_x, half_y,
           pts));
}

// Panels facing the center, plus scatter clusters, ringing an area.
void add_ring_world(SimScenario& sc, const Vec3& center, double radius,
                    int n_panels, int pts_per_panel, int n_clusters,
                    int pts_per_cluster, uint32_t layout_seed) {
  std::mt19937 gen(layout_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // panels stay separated along the ring, and clear of the ground plane, by
  // more than the estimator's neighborhood radius so no query straddles two
  // surfaces or sits near the infinite extension of a neighboring one
  for (int i = 0; i < n_panels; ++i) {
    const double ang = 2 * M_PI * i / n_panels + 0.15 * (u(gen) - 0.5);
    const double r = radius * (0.92 + 0.16 * u(gen));
    const Vec3 c = center + Vec3(r * std::cos(ang), r * std::sin(ang),
                                 2.4 + 1.2 * u(gen));
    const Vec3 normal(-std::cos(ang), -std::sin(ang), 0);
    const double half_u =
        std::min(2.0 + 1.5 * u(gen), M_PI * radius / n_panels - 2.0);
    const double half_v = std::min(1.5 + 1.0 * u(gen), c.z() - 1.2);
    sc.surfaces.push_back(
        wall(c, normal, std::max(half_u, 1.0), half_v, pts_per_panel));
  }
  for (int i = 0; i < n_clusters; ++i) {
    const double ang = 2 * M_PI * u(gen);
    const double r = radius * (0.35 + 0.6 * u(gen));
    ScatterCluster cl;
    cl.center = center + Vec3(r * std::cos(ang), r * std::sin(ang),
                              0.2 + 1.5 * u(gen));
    cl.radius = 0.3 + 0.3 * u(gen);
    cl.points_per_scan = pts_per_cluster;
    sc.clusters.push_back(cl);
  }
}

// Staggered panels and clusters lining a straight corridor along +x.
void add_corridor_world(SimScenario& sc, double x0, double x1, double lat,
                        int pts_per_panel, int n_clusters,
                        int pts_per_cluster, uint32_t layout_seed) {
  std::mt19937 gen(layout_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // panels stay separated, from each other and from the ground plane, by
  // more than the estimator's neighborhood radius: a query on one surface
  // must never pull neighbors from (or sit near the infinite extension of)
  // another
  for (double x = x0; x < x1; x += 10.0) {
    for (int side = -1; side <= 1; side += 2) {
      const double y = side * (lat * (0.8 + 0.5 * u(gen)));
      const Vec3 c(x + 2.0 * u(gen), y, 2.4 + 1.6 * u(gen));
      const double half_v = std::min(1.0 + 1.2 * u(gen), c.z() - 1.2);
      sc.surfaces.push_back(wall(c, Vec3(0.3 * (u(gen) - 0.5), -side, 0),
                                 1.5 + 1.25 * u(gen), half_v,
                                 pts_per_panel));
    }
  }
  for (int i = 0; i < n_clusters; ++i) {
    ScatterCluster cl;
    cl.center = Vec3(x0 + (x1 - x0) * u(gen),
                     (u(gen) < 0.5 ? -1 : 1) * (4.0 + lat * u(gen)),
                     0.2 + 1.8 * u(gen));
    cl.radius = 0.25 + 0.35 * u(gen);
    cl.points_per_scan = pts_per_cluster;
    sc.clusters.push_back(cl);
  }
}

SimScenario base_scenario(const std::string& name) {
  SimScenario sc;
  sc.name = name;
  sc.kind = ScanKind::kRadar;
  sc.scan_rate = 10;
  sc.imu_rate = 100;
  sc.fov_deg = 140;
  sc.max_range = 70;
  sc.ext_rot_true = SO3::exp(Vec3(0.02, -0.01, 0.03));
  sc.ext_pos_true = Vec3(0.9, 0.12, 0.25);
  sc.ext_rot_guess = sc.ext_rot_true;
  sc.ext_pos_guess = sc.ext_pos_true;
  sc.true_bg = Vec3(0.0012, -0.0008, 0.0015);
  sc.true_ba = Vec3(0.02, -0.015, 0.025);
  sc.seed = 1;
  return sc;
}

SimScenario build_static_room() {
  SimScenario sc = base_scenario("static_room");
  sc.fov_deg = 360;
  sc.max_range = 40;
  sc.trajectory = {seg_stationary(10.0)};
  const double hx = 10, hy = 7, z0 = -1, z1 = 3;
  add_ground(sc, Vec3::Zero(), hx, hy, 80);
  sc.surfaces.push_back(wall(Vec3(hx, 0, 1), Vec3(-1, 0, 0), hy, 2, 60));
  sc.surfaces.push_back(wall(Vec3(-hx, 0, 1), Vec3(1, 0, 0), hy, 2, 60));
  sc.surfaces.push_back(wall(Vec3(0, hy, 1), Vec3(0, -1, 0), hx, 2, 60));
  sc.surfaces.push_back(wall(Vec3(0, -hy, 1), Vec3(0, 1, 0), hx, 2, 60));
  sc.surfaces.push_back(wall(Vec3(0, 0, z1), Vec3(0, 0, -1), hx, hy, 40));
  (void)z0;
  std::mt19937 gen(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 8; ++i) {
    ScatterCluster cl;
    cl.center = Vec3((2 * u(gen) - 1) * (hx - 2), (2 * u(gen) - 1) * (hy - 2),
                     u(gen) * 2);
    if (cl.center.head<2>().norm() < 2.0) cl.center.x() += 3.0;
    cl.radius = 0.3;
    cl.points_per_scan = 8;
    sc.clusters.push_back(cl);
  }
  return sc;
}

SimScenario build_straight_const_v() {
  SimScenario sc = base_scenario("straight_const_v");
  sc.max_range = 60;
  sc.trajectory = {seg_stationary(1.0), seg_straight(5.0, 1.0),
                   seg_straight(34.0, 0.0)};
  add_ground(sc, Vec3(90, 0, 0), 110, 25, 90);
  add_corridor_world(sc, -5.0, 195.0, 11.0, 14, 0, 0, 21);
  return sc;
}

SimScenario build_figure_eight_loop() {
  SimScenario sc = base_scenario("figure_eight_loop");
  const double circle = 2 * M_PI / 0.25;  // 25.13 s per full circle
  sc.trajectory = {seg_stationary(1.0), seg_straight(4.0, 1.0),
                   seg_arc(circle, 0.25), seg_arc(circle, -0.25),
                   seg_straight(4.0, 0.0)};
  add_ground(sc, Vec3(8, 0, 0), 60, 50, 110);
  add_ring_world(sc, Vec3(8, 0, 0), 46, 16, 22, 30, 8, 23);
  return sc;
}

SimScenario build_dynamic_crossing() {
  SimScenario sc = base_scenario("dynamic_crossing");
  sc.trajectory = {seg_stationary(1.0), seg_straight(1.0, 2.0),
                   seg_straight(18.0, 0.0)};
  add_ground(sc, Vec3(20, 0, 0), 45, 20, 50);
  add_ring_world(sc, Vec3(20, 0, 0), 38, 8, 10, 10, 5, 29);
  Actor a;
  a.start = Vec3(45, 10, 0.6);
  a.motion = {{30.0, Vec3(-3.5, -0.8, 0)}};
  a.radius = 1.5;
  a.points_per_scan = 450;
  sc.actors.push_back(a);
  sc.outlier_fraction = 0.02;
  return sc;
}

SimScenario build_calib_perturbed() {
  SimScenario sc = base_scenario("calib_perturbed");
  sc.max_range = 60;
  sc.trajectory = {seg_stationary(1.0), seg_straight(2.0, 1.5)};
  for (int i = 0; i < 7; ++i) {
    sc.trajectory.push_back(seg_arc(8.0, i % 2 == 0 ? 0.35 : -0.35));
  }
  // the guess written to the log meta is off by 5 degrees / 0.1 m
  const Vec3 axis = Vec3(1, 2, 2).normalized();
  sc.ext_rot_guess = sc.ext_rot_true * SO3::exp(axis * (5.0 * M_PI / 180.0));
  sc.ext_pos_guess = sc.ext_pos_true + Vec3(0.0577, -0.0577, 0.0577);
  add_ground(sc, Vec3::Zero(), 55, 55, 100);
  add_ring_world(sc, Vec3::Zero(), 40, 14, 20, 24, 8, 31);
  return sc;
}

SimScenario build_highspeed_lidar() {
  SimScenario sc = base_scenario("highspeed_lidar");
  sc.kind = ScanKind::kFmcwLidar;
  sc.fov_deg = 130;
  sc.max_range = 110;
  sc.noise.point_sigma = 0.02;
  sc.trajectory = {seg_stationary(1.0), seg_straight(6.0, 5.0),
                   seg_straight(8.0, 0.0)};
  add_ground(sc, Vec3(165, 0, 0), 190, 20, 140);
  add_corridor_world(sc, -5.0, 345.0, 13.0, 16, 70, 6, 37);
  return sc;
}

SimScenario build_perf_dense() {
  SimScenario sc = base_scenario("perf_dense");
  sc.fov_deg = 360;
  sc.max_range = 90;
  sc.trajectory = {seg_stationary(1.0), seg_straight(4.0, 1.0),
                   seg_straight(7.0, 0.0)};
  const double hx = 45, hy = 35;
  add_ground(sc, Vec3(22, 0, 0), hx + 10, hy + 5, 1200);
  sc.surfaces.push_back(wall(Vec3(22 + hx, 0, 2), Vec3(-1, 0, 0), hy, 3, 700));
  sc.surfaces.push_back(wall(Vec3(22 - hx, 0, 2), Vec3(1, 0, 0), hy, 3, 700));
  sc.surfaces.push_back(wall(Vec3(22, hy, 2), Vec3(0, -1, 0), hx, 3, 700));
  sc.surfaces.push_back(wall(Vec3(22, -hy, 2), Vec3(0, 1, 0), hx, 3, 700));
  std::mt19937 gen(41);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 40; ++i) {
    ScatterCluster cl;
    cl.center = Vec3(22 + (2 * u(gen) - 1) * (hx - 5),
                     (2 * u(gen) - 1) * (hy - 5), 0.3 + 1.5 * u(gen));
    if ((cl.center - Vec3(22, 0, 1)).head<2>().norm() < 6.0) {
      cl.center.y() += 8.0;
    }
    cl.radius = 0.4;
    cl.points_per_scan = 25;
    sc.clusters.push_back(cl);
  }
  return sc;
}

}  // namespace

std::vector<std::string> scenario_names() {
  return {"static_room",      "straight_const_v", "figure_eight_loop",
          "dynamic_crossing", "calib_perturbed",  "highspeed_lidar",
          "perf_dense"};
}

SimScenario scenario_by_name(const std::string& name) {
  if (name == "static_room") return build_static_room();
  if (name == "straight_const_v") return build_straight_const_v();
  if (name == "figure_eight_loop") return build_figure_eight_loop();
  if (name == "dynamic_crossing") return build_dynamic_crossing();
  if (name == "calib_perturbed") return build_calib_perturbed();
  if (name == "highspeed_lidar") return build_highspeed_lidar();
  if (name == "perf_dense") return build_perf_dense();
  throw std::invalid_argument("unknown scenario: " + name);
}

}  // namespace doppio
