#include "doppio/mapping.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <queue>
#include <stdexcept>

namespace doppio {

PlanePatch fit_plane(const std::vector<Vec3>& points,
                     double validity_threshold, const Vec3& toward,
                     double planarity_ratio) {
  PlanePatch patch;
  const std::size_t n = points.size();
  if (n < 3) return patch;
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : points) centroid += p;
  centroid /= double(n);
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : points) {
    const Vec3 d = p - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 evals = eig.eigenvalues();  // ascending
  patch.centroid = centroid;
  patch.normal = eig.eigenvectors().col(0);
  if (patch.normal.dot(toward - centroid) < 0) patch.normal = -patch.normal;

  // (near-)collinear neighborhood: without real lateral spread the normal
  // is free to rotate about the line axis, so no usable plane
  if (evals(1) <= 0.02 * std::max(evals(2), 1e-12)) {
    patch.valid = false;
    return patch;
  }
  double max_dist = 0, sq = 0;
  for (const Vec3& p : points) {
    const double d = std::abs(patch.normal.dot(p - centroid));
    max_dist = std::max(max_dist, d);
    sq += d * d;
  }
  patch.rms = std::sqrt(sq / double(n));
  patch.valid = max_dist <= validity_threshold &&
                evals(0) <= planarity_ratio * evals(1);
  return patch;
}

namespace {

constexpr double kBalanceAlpha = 0.7;

// Exact voxel key: 21 signed bits per axis, coordinates clamped to the
// representable range (about +/-2^20 voxels from the origin).
std::uint64_t voxel_key(const Vec3& p, double voxel) {
  std::uint64_t key = 0;
  for (int a = 0; a < 3; ++a) {
    long long q = (long long)std::floor(p[a] / voxel);
    q = std::clamp(q, -(1ll << 20), (1ll << 20) - 1);
    key = (key << 21) | std::uint64_t(q + (1ll << 20));
  }
  return key;
}

}  // namespace

void MapIndex::insert_scan(const std::vector<Vec3>& points, double voxel) {
  if (voxel > 0 && voxel != voxel_) {
    voxel_ = voxel;
    rebuild_occupancy();
  }
  for (const Vec3& p : points) {
    if (!p.allFinite()) continue;
    if (voxel > 0) {
      const std::uint64_t key = voxel_key(p, voxel);
      if (!occupied_.insert(key).second) continue;
    }
    insert_point(p);
  }
}

void MapIndex::insert_point(const Vec3& p) {
  const std::int32_t fresh = std::int32_t(nodes_.size());
  Node node;
  node.p = p;
  node.id = next_id_++;
  if (root_ < 0) {
    node.axis = 0;
    nodes_.push_back(node);
    root_ = fresh;
    return;
  }
  std::vector<std::int32_t> path;
  std::int32_t cur = root_;
  while (true) {
    path.push_back(cur);
    Node& n = nodes_[cur];
    n.count++;
    std::int32_t& next = p[n.axis] < n.p[n.axis] ? n.left : n.right;
    if (next < 0) {
      node.axis = std::uint8_t((n.axis + 1) % 3);
      next = fresh;
      break;
    }
    cur = next;
  }
  nodes_.push_back(node);

  // rebuild at the highest weight-unbalanced ancestor, if any
  for (std::size_t i = 0; i < path.size(); ++i) {
    const Node& n = nodes_[path[i]];
    const double limit = kBalanceAlpha * double(n.count);
    const double lc = n.left >= 0 ? double(nodes_[n.left].count) : 0.0;
    const double rc = n.right >= 0 ? double(nodes_[n.right].count) : 0.0;
    if (lc > limit || rc > limit) {
      std::vector<std::int32_t> idx;
      idx.reserve(n.count);
      collect(path[i], idx);
      const std::int32_t sub =
          rebuild(idx, 0, idx.size(), nodes_[path[i]].axis);
      if (i == 0) {
        root_ = sub;
      } else {
        Node& parent = nodes_[path[i - 1]];
        (parent.left == path[i] ? parent.left : parent.right) = sub;
      }
      return;
    }
  }
}

void MapIndex::collect(std::int32_t node, std::vector<std::int32_t>& out) const {
  if (node < 0) return;
  collect(nodes_[node].left, out);
  out.push_back(node);
  collect(nodes_[node].right, out);
}

std::int32_t MapIndex::rebuild(std::vector<std::int32_t>& idx, std::size_t lo,
                               std::size_t hi, int axis) {
  if (lo >= hi) return -1;
  const auto by_axis = [this, axis](std::int32_t a, std::int32_t b) {
    if (nodes_[a].p[axis] != nodes_[b].p[axis]) {
      return nodes_[a].p[axis] < nodes_[b].p[axis];
    }
    return nodes_[a].id < nodes_[b].id;
  };
  std::sort(idx.begin() + lo, idx.begin() + hi, by_axis);
  const std::size_t mid = lo + (hi - lo) / 2;
  Node& n = nodes_[idx[mid]];
  n.axis = std::uint8_t(axis);
  n.left = rebuild(idx, lo, mid, (axis + 1) % 3);
  n.right = rebuild(idx, mid + 1, hi, (axis + 1) % 3);
  n.count = std::uint32_t(hi - lo);
  return idx[mid];
}

std::vector<Vec3> MapIndex::knn(const Vec3& query, int k) const {
  if (empty()) throw std::logic_error("knn: empty map index");
  if (k <= 0) return {};
  using Entry = std::pair<double, std::uint32_t>;  // (dist^2, insertion id)
  std::priority_queue<std::pair<Entry, std::int32_t>> heap;  // worst on top

  const std::size_t want = std::min<std::size_t>(std::size_t(k), size());
  // iterative depth-first search with pruning on the splitting planes
  std::vector<std::int32_t> stack;
  stack.reserve(64);
  stack.push_back(root_);
  while (!stack.empty()) {
    const std::int32_t cur = stack.back();
    stack.pop_back();
    if (cur < 0) continue;
    const Node& n = nodes_[cur];
    const double dx = query[n.axis] - n.p[n.axis];
    if (heap.size() == want && dx * dx > heap.top().first.first) {
      // the whole far half-space is out of reach; only descend near side
      stack.push_back(dx < 0 ? n.left : n.right);
    } else {
      stack.push_back(dx < 0 ? n.right : n.left);  // far side later
      stack.push_back(dx < 0 ? n.left : n.right);
    }
    const Entry cand{(query - n.p).squaredNorm(), n.id};
    if (heap.size() < want) {
      heap.push({cand, cur});
    } else if (cand < heap.top().first) {
      heap.pop();
      heap.push({cand, cur});
    }
  }
  std::vector<std::pair<Entry, std::int32_t>> ordered;
  ordered.reserve(heap.size());
  while (!heap.empty()) {
    ordered.push_back(heap.top());
    heap.pop();
  }
  std::vector<Vec3> out(ordered.size());
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    out[ordered.size() - 1 - i] = nodes_[ordered[i].second].p;
  }
  return out;
}

void MapIndex::prune(const Vec3& center, double radius) {
  if (!(radius > 0)) throw std::invalid_argument("prune: radius must be > 0");
  const double r2 = radius * radius;
  std::vector<Node> kept;
  kept.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    if ((n.p - center).squaredNorm() <= r2) kept.push_back(n);
  }
  if (kept.size() == nodes_.size()) return;
  std::sort(kept.begin(), kept.end(),
            [](const Node& a, const Node& b) { return a.id < b.id; });
  nodes_ = std::move(kept);
  std::vector<std::int32_t> idx(nodes_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = std::int32_t(i);
  root_ = rebuild(idx, 0, idx.size(), 0);
  rebuild_occupancy();
}

void MapIndex::rebuild_occupancy() {
  occupied_.clear();
  if (!(voxel_ > 0)) return;
  for (const Node& n : nodes_) occupied_.insert(voxel_key(n.p, voxel_));
}

std::vector<Vec3> MapIndex::points() const {
  std::vector<std::pair<std::uint32_t, const Node*>> tmp;
  tmp.reserve(nodes_.size());
  for (const Node& n : nodes_) tmp.push_back({n.id, &n});
  std::sort(tmp.begin(), tmp.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Vec3> out;
  out.reserve(tmp.size());
  for (const auto& [id, n] : tmp) out.push_back(n->p);
  return out;
}

void MapIndex::export_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "x,y,z\n";
  char buf[96];
  for (const Vec3& p : points()) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", p.x(), p.y(), p.z());
    os << buf;
  }
}

void MapIndex::export_ply(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  const std::vector<Vec3> pts = points();
  os << "ply\nformat binary_little_endian 1.0\nelement vertex " << pts.size()
     << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const Vec3& p : pts) {
    const float xyz[3] = {float(p.x()), float(p.y()), float(p.z())};
    os.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
}

}  // namespace doppio
