#include "doppio/scan_context.hpp"

#include <algorithm>
#include <cmath>

namespace doppio {

Descriptor make_descriptor(const std::vector<Vec3>& points_body,
                           const ScanContextConfig& cfg) {
  Descriptor d;
  d.grid = Eigen::MatrixXd::Zero(cfg.rings, cfg.sectors);
  Eigen::MatrixXi occupied = Eigen::MatrixXi::Zero(cfg.rings, cfg.sectors);
  for (const Vec3& p : points_body) {
    const double range = std::hypot(p.x(), p.y());
    if (range >= cfg.max_range || range < 1e-9) continue;
    int ring = int(range / cfg.max_range * cfg.rings);
    double angle = std::atan2(p.y(), p.x());
    if (angle < 0) angle += 2 * M_PI;
    int sector = int(angle / (2 * M_PI) * cfg.sectors);
    ring = std::min(ring, cfg.rings - 1);
    sector = std::min(sector, cfg.sectors - 1);
    occupied(ring, sector) = 1;
    if (cfg.stat == ScanContextConfig::Stat::kOccupancy) {
      d.grid(ring, sector) += 1.0;
    } else {
      d.grid(ring, sector) =
          std::max(d.grid(ring, sector), p.z() + cfg.height_offset);
    }
  }
  d.ring_key = occupied.cast<double>().rowwise().sum() / double(cfg.sectors);
  return d;
}

double descriptor_distance(const Descriptor& a, const Descriptor& b,
                           int* best_shift) {
  const int sectors = int(a.grid.cols());
  double best = 1.0;
  int arg = 0;
  for (int shift = 0; shift < sectors; ++shift) {
    double sum = 0;
    int counted = 0;
    for (int j = 0; j < sectors; ++j) {
      const auto ca = a.grid.col(j);
      const auto cb = b.grid.col((j + shift) % sectors);
      const double na = ca.norm(), nb = cb.norm();
      if (na < 1e-9 || nb < 1e-9) continue;
      sum += 1.0 - ca.dot(cb) / (na * nb);
      ++counted;
    }
    const double dist = counted > 0 ? sum / counted : 1.0;
    if (dist < best) {
      best = dist;
      arg = shift;
    }
  }
  if (best_shift) *best_shift = arg;
  return best;
}

std::optional<LoopCandidate> detect_loop(const Descriptor& query,
                                         const std::vector<Descriptor>& history,
                                         const ScanContextConfig& cfg) {
  const int searchable = int(history.size()) - cfg.exclude_recent;
  if (searchable <= 0) return std::nullopt;

  // coarse pass: nearest ring keys
  std::vector<std::pair<double, int>> coarse;
  coarse.reserve(searchable);
  for (int i = 0; i < searchable; ++i)
    coarse.emplace_back((history[i].ring_key - query.ring_key).norm(), i);
  const int keep = std::min<int>(cfg.ring_key_candidates, int(coarse.size()));
  std::partial_sort(coarse.begin(), coarse.begin() + keep, coarse.end());

  LoopCandidate best;
  best.distance = cfg.distance_threshold;
  for (int k = 0; k < keep; ++k) {
    const int i = coarse[k].second;
    int shift = 0;
    const double dist = descriptor_distance(query, history[i], &shift);
    if (dist < best.distance) {
      best.distance = dist;
      best.index = i;
      best.yaw_hint = 2 * M_PI * shift / double(query.grid.cols());
      if (best.yaw_hint > M_PI) best.yaw_hint -= 2 * M_PI;
    }
  }
  if (best.index < 0) return std::nullopt;
  return best;
}

}  // namespace doppio
