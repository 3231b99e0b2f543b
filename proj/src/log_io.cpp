#include "doppio/log_io.hpp"

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace doppio {

namespace {

double parse_field(const std::string& tok, const std::string& where) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw LogFormatError(where + ": bad numeric field '" + tok + "'");
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  // 17 significant digits round-trips doubles exactly.
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string kind_name(ScanKind k) {
  return k == ScanKind::kRadar ? "radar" : "fmcw_lidar";
}

ScanKind kind_from_name(const std::string& s) {
  if (s == "radar") return ScanKind::kRadar;
  if (s == "fmcw_lidar") return ScanKind::kFmcwLidar;
  throw LogFormatError("unknown sensor kind: " + s);
}

}  // namespace

void NoiseParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) {
      throw LogFormatError(std::string("noise parameter must be > 0: ") + name);
    }
  };
  positive(gyro_noise, "gyro_noise");
  positive(accel_noise, "accel_noise");
  positive(gyro_bias_rw, "gyro_bias_rw");
  positive(accel_bias_rw, "accel_bias_rw");
  positive(point_sigma, "point_sigma");
  positive(doppler_sigma, "doppler_sigma");
}

LogMeta LogMeta::from_config(const ConfigTable& cfg) {
  LogMeta m;
  m.kind = kind_from_name(cfg.get_string("sensor.kind"));
  m.scan_period = cfg.get_double("sensor.scan_period");
  auto q = cfg.get_array("sensor.extrinsic_quat_wxyz");
  if (q.size() != 4) {
    throw LogFormatError("sensor.extrinsic_quat_wxyz needs 4 entries");
  }
  m.extrinsic_rot_guess = SO3(Eigen::Quaterniond(q[0], q[1], q[2], q[3]));
  auto p = cfg.get_array("sensor.extrinsic_pos");
  if (p.size() != 3) throw LogFormatError("sensor.extrinsic_pos needs 3 entries");
  m.extrinsic_pos_guess = Vec3(p[0], p[1], p[2]);
  m.noise.gyro_noise = cfg.get_double("noise.gyro_noise");
  m.noise.accel_noise = cfg.get_double("noise.accel_noise");
  m.noise.gyro_bias_rw = cfg.get_double("noise.gyro_bias_rw");
  m.noise.accel_bias_rw = cfg.get_double("noise.accel_bias_rw");
  m.noise.point_sigma = cfg.get_double("noise.point_sigma");
  m.noise.doppler_sigma = cfg.get_double("noise.doppler_sigma");
  m.noise.validate();
  m.gravity_magnitude = cfg.get_double("gravity_magnitude", 9.81);
  return m;
}

std::string LogMeta::to_config_text() const {
  std::ostringstream os;
  const auto& q = extrinsic_rot_guess.quat();
  os << "# log metadata, version 1\n";
  os << "gravity_magnitude = " << fmt_double(gravity_magnitude) << "\n\n";
  os << "[sensor]\n";
  os << "kind = \"" << kind_name(kind) << "\"\n";
  os << "scan_period = " << fmt_double(scan_period) << "\n";
  os << "extrinsic_quat_wxyz = [" << fmt_double(q.w()) << ", "
     << fmt_double(q.x()) << ", " << fmt_double(q.y()) << ", "
     << fmt_double(q.z()) << "]\n";
  os << "extrinsic_pos = [" << fmt_double(extrinsic_pos_guess.x()) << ", "
     << fmt_double(extrinsic_pos_guess.y()) << ", "
     << fmt_double(extrinsic_pos_guess.z()) << "]\n\n";
  os << "[noise]\n";
  os << "gyro_noise = " << fmt_double(noise.gyro_noise) << "\n";
  os << "accel_noise = " << fmt_double(noise.accel_noise) << "\n";
  os << "gyro_bias_rw = " << fmt_double(noise.gyro_bias_rw) << "\n";
  os << "accel_bias_rw = " << fmt_double(noise.accel_bias_rw) << "\n";
  os << "point_sigma = " << fmt_double(noise.point_sigma) << "\n";
  os << "doppler_sigma = " << fmt_double(noise.doppler_sigma) << "\n";
  return os.str();
}

std::string scan_file_name(int index, double end_time) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%06d_%" PRId64 ".csv", index,
                static_cast<int64_t>(std::llround(end_time * 1e9)));
  return buf;
}

// ---------------------------------------------------------------------------

struct LogReader::Impl {
  std::string dir;
  double min_range;
  LogMeta meta;

  std::ifstream imu_file;
  int imu_lineno = 0;
  std::optional<ImuSample> next_imu;
  double last_imu_t = -std::numeric_limits<double>::infinity();

  std::vector<fs::path> scan_files;
  size_t scan_cursor = 0;
  std::optional<Scan> next_scan;

  int dropped_points = 0;
  int imu_count = 0;
  int scan_count = 0;

  void advance_imu() {
    next_imu.reset();
    std::string line;
    while (std::getline(imu_file, line)) {
      ++imu_lineno;
      if (line.empty() || line == "\r") continue;
      std::string where = dir + "/imu.csv:" + std::to_string(imu_lineno);
      auto f = split_csv(line);
      if (f.size() != 7) {
        throw LogFormatError(where + ": expected 7 fields, got " +
                             std::to_string(f.size()));
      }
      ImuSample s;
      s.t = parse_field(f[0], where);
      s.gyro = Vec3(parse_field(f[1], where), parse_field(f[2], where),
                    parse_field(f[3], where));
      s.accel = Vec3(parse_field(f[4], where), parse_field(f[5], where),
                     parse_field(f[6], where));
      if (!std::isfinite(s.t) || !s.gyro.allFinite() || !s.accel.allFinite()) {
        throw LogFormatError(where + ": non-finite IMU sample");
      }
      if (s.t <= last_imu_t) {
        throw LogFormatError(where + ": IMU time not increasing (" +
                             fmt_double(s.t) + " after " +
                             fmt_double(last_imu_t) + ")");
      }
      last_imu_t = s.t;
      next_imu = s;
      return;
    }
  }

  void advance_scan() {
    next_scan.reset();
    if (scan_cursor >= scan_files.size()) return;
    const fs::path& path = scan_files[scan_cursor++];
    std::string stem = path.stem().string();
    size_t us = stem.find('_');
    if (us == std::string::npos) {
      throw LogFormatError("scan file name must be <index>_<ns>.csv: " +
                           path.string());
    }
    Scan scan;
    scan.kind = meta.kind;
    scan.end_time = std::stoll(stem.substr(us + 1)) * 1e-9;

    std::ifstream in(path);
    if (!in) throw LogFormatError("cannot open scan file: " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1) {
        if (split_csv(line)[0] != "dt") {
          throw LogFormatError(path.string() + ":1: expected header dt,...");
        }
        continue;
      }
      if (line.empty() || line == "\r") continue;
      std::string where = path.string() + ":" + std::to_string(lineno);
      auto f = split_csv(line);
      if (f.size() != 6) {
        throw LogFormatError(where + ": expected 6 fields, got " +
                             std::to_string(f.size()));
      }
      SensorPoint pt;
      pt.offset_t = parse_field(f[0], where);
      pt.position = Vec3(parse_field(f[1], where), parse_field(f[2], where),
                         parse_field(f[3], where));
      pt.doppler = parse_field(f[4], where);
      if (!f[5].empty()) pt.intensity = parse_field(f[5], where);
      if (pt.offset_t > 1e-12 || pt.offset_t < -meta.scan_period - 1e-9) {
        throw LogFormatError(where + ": point offset outside [-scan_period,0]");
      }
      if (meta.kind == ScanKind::kRadar && std::abs(pt.offset_t) > 1e-12) {
        throw LogFormatError(where + ": radar points must have dt = 0");
      }
      if (!pt.position.allFinite() || !std::isfinite(pt.doppler) ||
          pt.range() < min_range) {
        ++dropped_points;
        continue;
      }
      scan.points.push_back(pt);
    }
    next_scan = std::move(scan);
  }
};

LogReader::LogReader(const std::string& dir, double min_range)
    : impl_(std::make_unique<Impl>()) {
  impl_->dir = dir;
  impl_->min_range = min_range;
  if (!fs::exists(fs::path(dir) / "meta.toml")) {
    throw LogFormatError("log directory has no meta.toml: " + dir);
  }
  impl_->meta = LogMeta::from_config(load_config_file(dir + "/meta.toml"));

  impl_->imu_file.open(fs::path(dir) / "imu.csv");
  if (!impl_->imu_file) throw LogFormatError("cannot open " + dir + "/imu.csv");
  std::string header;
  std::getline(impl_->imu_file, header);
  impl_->imu_lineno = 1;
  if (split_csv(header).empty() || split_csv(header)[0] != "t") {
    throw LogFormatError(dir + "/imu.csv:1: expected header t,gx,...");
  }
  impl_->advance_imu();
  if (!impl_->next_imu) throw LogFormatError(dir + "/imu.csv: no IMU data");

  fs::path scans_dir = fs::path(dir) / "scans";
  if (fs::exists(scans_dir)) {
    for (const auto& e : fs::directory_iterator(scans_dir)) {
      if (e.path().extension() == ".csv") impl_->scan_files.push_back(e.path());
    }
    std::sort(impl_->scan_files.begin(), impl_->scan_files.end());
  }
  impl_->advance_scan();
}

LogReader::~LogReader() = default;

const LogMeta& LogReader::meta() const { return impl_->meta; }
int LogReader::dropped_points() const { return impl_->dropped_points; }
int LogReader::imu_count() const { return impl_->imu_count; }
int LogReader::scan_count() const { return impl_->scan_count; }

bool LogReader::next(LogRecord& out) {
  Impl& im = *impl_;
  const bool have_imu = im.next_imu.has_value();
  const bool have_scan = im.next_scan.has_value();
  if (!have_imu && !have_scan) return false;
  // IMU first on equal timestamps so the packet window (prev, end] is
  // complete before its scan is emitted.
  if (have_imu && (!have_scan || im.next_imu->t <= im.next_scan->end_time)) {
    out = *im.next_imu;
    ++im.imu_count;
    im.advance_imu();
  } else {
    out = std::move(*im.next_scan);
    ++im.scan_count;
    im.advance_scan();
  }
  return true;
}

// ---------------------------------------------------------------------------

struct LogWriter::Impl {
  fs::path dir;
  std::ofstream imu;
  int scan_index = 0;
  double last_scan_end = -std::numeric_limits<double>::infinity();
};

LogWriter::LogWriter(const std::string& dir, const LogMeta& meta)
    : impl_(std::make_unique<Impl>()) {
  impl_->dir = dir;
  fs::create_directories(fs::path(dir) / "scans");
  save_config_file((fs::path(dir) / "meta.toml").string(),
                   meta.to_config_text());
  impl_->imu.open(fs::path(dir) / "imu.csv");
  if (!impl_->imu) throw LogFormatError("cannot write " + dir + "/imu.csv");
  impl_->imu << "t,gx,gy,gz,ax,ay,az\n";
}

LogWriter::~LogWriter() = default;

void LogWriter::write_imu(const ImuSample& s) {
  impl_->imu << fmt_double(s.t) << ',' << fmt_double(s.gyro.x()) << ','
             << fmt_double(s.gyro.y()) << ',' << fmt_double(s.gyro.z()) << ','
             << fmt_double(s.accel.x()) << ',' << fmt_double(s.accel.y()) << ','
             << fmt_double(s.accel.z()) << '\n';
}

void LogWriter::write_scan(const Scan& scan) {
  if (scan.end_time <= impl_->last_scan_end) {
    throw LogFormatError("scan end times must be increasing");
  }
  impl_->last_scan_end = scan.end_time;
  fs::path path =
      impl_->dir / "scans" / scan_file_name(impl_->scan_index++, scan.end_time);
  std::ofstream out(path);
  if (!out) throw LogFormatError("cannot write scan file: " + path.string());
  out << "dt,x,y,z,doppler,intensity\n";
  for (const auto& p : scan.points) {
    out << fmt_double(p.offset_t) << ',' << fmt_double(p.position.x()) << ','
        << fmt_double(p.position.y()) << ',' << fmt_double(p.position.z())
        << ',' << fmt_double(p.doppler) << ','
        << fmt_double(p.intensity.value_or(0.0)) << '\n';
  }
}

void LogWriter::finish() { impl_->imu.flush(); }

// ---------------------------------------------------------------------------

std::optional<MeasurementPacket> Packetizer::push(const LogRecord& rec) {
  if (const auto* imu = std::get_if<ImuSample>(&rec)) {
    if (imu->t <= last_imu_t_) {
      throw LogFormatError("packetizer: IMU time not increasing (" +
                           std::to_string(imu->t) + " after " +
                           std::to_string(last_imu_t_) + ")");
    }
    last_imu_t_ = imu->t;
    pending_.push_back(*imu);
    return std::nullopt;
  }
  const Scan& scan = std::get<Scan>(rec);
  if (scan.end_time < last_scan_end_) {
    throw LogFormatError("packetizer: scan at " +
                         std::to_string(scan.end_time) +
                         " precedes last packet at " +
                         std::to_string(last_scan_end_));
  }
  MeasurementPacket pkt;
  pkt.scan = scan;
  auto split = std::partition_point(
      pending_.begin(), pending_.end(),
      [&](const ImuSample& s) { return s.t <= scan.end_time; });
  pkt.imu_window.assign(pending_.begin(), split);
  pending_.erase(pending_.begin(), split);
  if (pkt.imu_window.empty()) {
    ++stats_.skipped_empty_window;
    return std::nullopt;
  }
  last_scan_end_ = scan.end_time;
  ++stats_.packets;
  stats_.imu_assigned += static_cast<int>(pkt.imu_window.size());
  return pkt;
}

std::vector<MeasurementPacket> read_packets(const std::string& dir,
                                            LogMeta* meta_out,
                                            PacketizerStats* stats) {
  LogReader reader(dir);
  if (meta_out) *meta_out = reader.meta();
  Packetizer packetizer;
  std::vector<MeasurementPacket> out;
  LogRecord rec;
  while (reader.next(rec)) {
    if (auto pkt = packetizer.push(rec)) out.push_back(std::move(*pkt));
  }
  if (stats) *stats = packetizer.stats();
  return out;
}

}  // namespace doppio
