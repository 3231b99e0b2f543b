// Two-stage motion compensation for scanning sensors: geometric de-skew of
// each point to the scan-end frame, then removal of the sensor's own motion
// from the measured doppler so every value reads as if captured at scan end.
#pragma once

#include <string>

#include "doppio/propagation.hpp"
#include "doppio/sensor_types.hpp"

namespace doppio {

// Re-express every point in the scan-end sensor frame using the relative
// body motion from `log` composed with the extrinsic of its end state.
// Radar scans are captured instantaneously and are returned unchanged.
// Throws std::out_of_range naming the point index when a point's timestamp
// falls outside the log interval.
Scan compensate_geometry(const Scan& scan, const PropagationLog& log);

// Replace each doppler with its scan-end equivalent: add the sensor-frame
// velocity projected on the measured direction at the point's own timestamp
// and subtract the projection at scan end. Expects the geometrically
// de-skewed scan (positions already in the end frame); the original
// direction is recovered through the inverse of the de-skew transform.
// Radar scans are returned unchanged.
Scan compensate_doppler(const Scan& scan, const PropagationLog& log,
                        const NavState& state);

// Debug dump of raw vs compensated values, one row per point.
void dump_compensation(const std::string& path, const Scan& raw,
                       const Scan& compensated);

}  // namespace doppio
