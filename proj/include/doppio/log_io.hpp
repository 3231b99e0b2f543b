// On-disk log layout:
//   imu.csv                     header: t,gx,gy,gz,ax,ay,az
//   scans/<index>_<ns>.csv      header: dt,x,y,z,doppler,intensity
//   meta.toml                   sensor kind, scan period, extrinsic guess,
//                               noise parameters, gravity magnitude
// Timestamps are seconds in one shared clock. Scan files are named with a
// zero-padded index plus the scan end time in nanoseconds.
#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <variant>

#include "doppio/config.hpp"
#include "doppio/sensor_types.hpp"

namespace doppio {

class LogFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LogMeta {
  ScanKind kind = ScanKind::kRadar;
  double scan_period = 0.1;        // seconds
  SO3 extrinsic_rot_guess;         // sensor-in-body, wxyz in the file
  Vec3 extrinsic_pos_guess = Vec3::Zero();
  NoiseParams noise;
  double gravity_magnitude = 9.81;

  static LogMeta from_config(const ConfigTable& cfg);
  std::string to_config_text() const;
};

using LogRecord = std::variant<ImuSample, Scan>;

// Streams the log in global time order, validating invariants per record.
// Points closer than min_range or with non-finite fields are dropped and
// counted.
class LogReader {
 public:
  explicit LogReader(const std::string& dir, double min_range = 0.5);
  ~LogReader();

  const LogMeta& meta() const;
  bool next(LogRecord& out);

  int dropped_points() const;
  int imu_count() const;
  int scan_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Writes the same layout; used by the simulator and by converters.
class LogWriter {
 public:
  explicit LogWriter(const std::string& dir, const LogMeta& meta);
  ~LogWriter();

  void write_imu(const ImuSample& s);
  void write_scan(const Scan& scan);
  void finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct PacketizerStats {
  int packets = 0;
  int skipped_empty_window = 0;  // scans with no IMU in their window
  int imu_assigned = 0;
};

// Groups a time-ordered record stream into per-scan measurement packets.
class Packetizer {
 public:
  // Feed records in time order; returns a packet when a scan completes.
  // Scans with an empty IMU window are flagged, counted and skipped.
  std::optional<MeasurementPacket> push(const LogRecord& rec);

  const PacketizerStats& stats() const { return stats_; }

 private:
  std::vector<ImuSample> pending_;
  double last_scan_end_ = -std::numeric_limits<double>::infinity();
  double last_imu_t_ = -std::numeric_limits<double>::infinity();
  PacketizerStats stats_;
};

// Convenience: read an entire log into packets.
std::vector<MeasurementPacket> read_packets(const std::string& dir,
                                            LogMeta* meta_out = nullptr,
                                            PacketizerStats* stats = nullptr);

std::string scan_file_name(int index, double end_time);

}  // namespace doppio
