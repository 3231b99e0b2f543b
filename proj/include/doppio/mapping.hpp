// Incremental spatial index over the world-frame map: exact k-nearest-
// neighbor queries on a self-balancing k-d tree, voxel-deduplicated scan
// insertion, locality pruning, and local plane fitting for point-to-plane
// residuals.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "doppio/manifold.hpp"

namespace doppio {

// Local planar patch fitted to a neighborhood: unit normal, centroid and
// the RMS point-to-plane distance. `valid` requires every point within the
// validity threshold and a non-degenerate (non-collinear) neighborhood.
struct PlanePatch {
  Vec3 normal = Vec3::UnitZ();
  Vec3 centroid = Vec3::Zero();
  double rms = 0;
  bool valid = false;
};

// Least-squares plane through `points` (centroid plus smallest-eigenvector
// normal). The normal is flipped, if necessary, to face the `toward` point
// (normal . (toward - centroid) >= 0) so residual signs are reproducible.
// A patch is valid only when every point lies within the validity threshold
// AND the neighborhood is plate-like: the out-of-plane spread must stay
// below `planarity_ratio` times the in-plane spread (smallest over middle
// covariance eigenvalue), which rejects isotropic scatter blobs that happen
// to pass the distance gate. Collinear or undersized neighborhoods are
// invalid.
PlanePatch fit_plane(const std::vector<Vec3>& points, double validity_threshold,
                     const Vec3& toward = Vec3::Zero(),
                     double planarity_ratio = 0.05);

// Dynamic k-d tree with subtree-weight rebalancing. Queries are exact:
// results always equal a brute-force scan, with distance ties broken by
// insertion order. Single writer, no concurrent write/read overlap.
class MapIndex {
 public:
  MapIndex() = default;

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  // Voxel-downsamples (first point ever seen in a voxel is kept, across
  // calls) and inserts the survivors. voxel <= 0 disables deduplication.
  // Changing the voxel resolution between calls re-keys the occupancy set.
  void insert_scan(const std::vector<Vec3>& points, double voxel);

  // k nearest points sorted by ascending distance (ties by insertion
  // order). Throws std::logic_error when the index is empty.
  std::vector<Vec3> knn(const Vec3& query, int k) const;

  // Drops every point strictly farther than `radius` from `center`.
  void prune(const Vec3& center, double radius);

  // All points in insertion order.
  std::vector<Vec3> points() const;

  // "x,y,z" CSV and binary little-endian PLY exports.
  void export_csv(const std::string& path) const;
  void export_ply(const std::string& path) const;

 private:
  struct Node {
    Vec3 p;
    std::uint32_t id = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint32_t count = 1;  // subtree size
    std::uint8_t axis = 0;
  };

  void insert_point(const Vec3& p);
  std::int32_t rebuild(std::vector<std::int32_t>& idx, std::size_t lo,
                       std::size_t hi, int axis);
  void collect(std::int32_t node, std::vector<std::int32_t>& out) const;
  void rebuild_occupancy();

  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
  std::uint32_t next_id_ = 0;
  double voxel_ = 0;
  std::unordered_set<std::uint64_t> occupied_;
};

}  // namespace doppio
