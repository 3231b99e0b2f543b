#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "doppio/log_io.hpp"
#include "doppio/manifold.hpp"
#include "doppio/propagation.hpp"
#include "doppio/simulator.hpp"

namespace doppio::test {

inline Vec3 random_vec(std::mt19937& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

inline SO3 random_rotation(std::mt19937& rng) {
  std::uniform_real_distribution<double> angle(0.0, M_PI * 0.99);
  Vec3 axis = random_vec(rng);
  while (axis.norm() < 1e-6) axis = random_vec(rng);
  return SO3::exp(axis.normalized() * angle(rng));
}

inline NavState random_state(std::mt19937& rng) {
  NavState x;
  x.rot = random_rotation(rng);
  x.pos = random_vec(rng, 10.0);
  x.ext_rot = random_rotation(rng);
  x.ext_pos = random_vec(rng, 0.5);
  x.vel = random_vec(rng, 5.0);
  x.bg = random_vec(rng, 0.01);
  x.ba = random_vec(rng, 0.1);
  x.grav = random_vec(rng, 1.0) + Vec3(0, 0, -9.8);
  return x;
}

// One scan plus the propagation log over its window, driven by the true
// kinematics recovered from the ground truth (so the log reproduces the
// true trajectory exactly, independent of IMU noise in the recording).
struct TruthWindow {
  Scan scan;
  StateWithCov end;
  PropagationLog log;
};

inline std::vector<TruthWindow> truth_windows(const std::string& dir,
                                              const GroundTruth& gt) {
  LogReader reader(dir);
  std::vector<ImuSample> all_imu;
  std::vector<Scan> scans;
  LogRecord rec;
  while (reader.next(rec)) {
    if (const auto* s = std::get_if<ImuSample>(&rec)) {
      all_imu.push_back(*s);
    } else {
      scans.push_back(std::move(std::get<Scan>(rec)));
    }
  }
  const Vec3 gravity(0, 0, -gt.gravity_magnitude);
  StateWithCov swc;
  swc.state.grav = gravity;
  swc.state.ext_rot = gt.ext_rot;
  swc.state.ext_pos = gt.ext_pos;
  std::vector<TruthWindow> out;
  size_t imu_pos = 0;
  for (auto& scan : scans) {
    std::vector<ImuSample> slice;
    while (imu_pos < all_imu.size() && all_imu[imu_pos].t <= scan.end_time) {
      slice.push_back(all_imu[imu_pos]);
      ++imu_pos;
    }
    if (!slice.empty()) --imu_pos;  // boundary sample re-used next window
    for (auto& s : slice) {
      const GroundTruthSample& g = gt.sample_at(s.t);
      s.gyro = g.body_rate;
      s.accel = g.rot.inv_rotate(g.world_accel - gravity);
    }
    auto [next, log] = propagate_forward(swc, slice, ProcessNoise{});
    out.push_back({std::move(scan), next, std::move(log)});
    swc = next;
  }
  return out;
}

// Scratch directory unique per test, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("doppio_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }

  std::string str() const { return path_.string(); }
  std::filesystem::path path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace doppio::test
