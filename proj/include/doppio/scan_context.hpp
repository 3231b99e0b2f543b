// Polar place-recognition descriptor: a rings-by-sectors grid of per-cell
// statistics over a body-frame scan, a per-ring occupancy ring key for
// coarse candidate search, and a column-shift-minimizing distance whose
// best shift doubles as a yaw hint for loop verification.
#pragma once

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "doppio/manifold.hpp"

namespace doppio {

struct ScanContextConfig {
  int rings = 20;
  int sectors = 60;
  double max_range = 60;        // m, outermost ring boundary
  // cell statistic: max point height (offset keeps values positive) or
  // plain occupancy count
  enum class Stat { kMaxHeight, kOccupancy } stat = Stat::kMaxHeight;
  double height_offset = 2.0;   // m, added to z for the height statistic
  int exclude_recent = 30;      // newest keyframes skipped in search
  int ring_key_candidates = 10; // coarse matches kept for full scoring
  double distance_threshold = 0.25;
};

struct Descriptor {
  Eigen::MatrixXd grid;      // rings x sectors
  Eigen::VectorXd ring_key;  // per-ring occupancy ratio

  bool empty() const { return grid.size() == 0; }
};

Descriptor make_descriptor(const std::vector<Vec3>& points_body,
                           const ScanContextConfig& cfg);

// Minimum over cyclic sector shifts of the mean per-column cosine
// distance (columns where either side is empty are skipped). Symmetric in
// its arguments. best_shift receives the minimizing rotation of b's
// columns, in sectors.
double descriptor_distance(const Descriptor& a, const Descriptor& b,
                           int* best_shift = nullptr);

struct LoopCandidate {
  int index = -1;       // position in the history vector
  double distance = 0;  // descriptor distance
  double yaw_hint = 0;  // radians about vertical, seed for registration
};

// Ring-key nearest candidates refined by full descriptor distance. The
// newest cfg.exclude_recent entries of history are not searched. Absence
// of a candidate under the threshold is a normal outcome.
std::optional<LoopCandidate> detect_loop(const Descriptor& query,
                                         const std::vector<Descriptor>& history,
                                         const ScanContextConfig& cfg);

}  // namespace doppio
