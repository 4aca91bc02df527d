#include "legslam/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "legslam/image.hpp"

namespace legslam {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line, const std::string& what) {
  throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line) + ": " + what);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  return out;
}

// Splits on whitespace and/or commas.
std::vector<std::string> tokens(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool to_double(const std::string& s, double& v) {
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  return r.ec == std::errc() && r.ptr == end && std::isfinite(v);
}

// Numeric rows of a text file; comment lines and (optionally) a leading
// non-numeric header are skipped.
std::vector<std::vector<double>> read_numeric_rows(const std::filesystem::path& path, std::size_t columns,
                                                   bool allow_header) {
  std::ifstream in = open_in(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int n = 0;
  bool first_data = true;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto tok = tokens(t);
    std::vector<double> vals(tok.size());
    bool ok = tok.size() == columns;
    for (std::size_t i = 0; ok && i < tok.size(); ++i) ok = to_double(tok[i], vals[i]);
    if (!ok) {
      if (allow_header && first_data && !tok.empty() && !to_double(tok[0], vals[0])) {
        first_data = false;
        continue;
      }
      parse_fail(path, n, "expected " + std::to_string(columns) + " numeric fields");
    }
    first_data = false;
    rows.push_back(std::move(vals));
  }
  return rows;
}

void check_increasing(const std::vector<double>& stamps, const std::filesystem::path& path) {
  for (std::size_t i = 1; i < stamps.size(); ++i) {
    if (!(stamps[i] > stamps[i - 1])) {
      throw Error(ErrorCode::NonMonotonicTimestamps, "timestamps must increase in " + path.string());
    }
  }
}

std::vector<TimedPath> read_index(const std::filesystem::path& dir, const std::string& name) {
  const auto path = dir / name;
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingIndexFile, "missing " + path.string());
  std::ifstream in = open_in(path);
  std::vector<TimedPath> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto tok = tokens(t);
    double ts = 0.0;
    if (tok.size() != 2 || !to_double(tok[0], ts)) parse_fail(path, n, "expected 'timestamp filename'");
    out.push_back({ts, dir / tok[1]});
  }
  return out;
}

Se3d pose_from(const std::vector<double>& v, std::size_t at) {
  const Eigen::Quaterniond q(v[at + 6], v[at + 3], v[at + 4], v[at + 5]);
  return Se3d(q, Vector3d(v[at], v[at + 1], v[at + 2]));
}

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string pose_fields(const Se3d& T, char sep) {
  const auto& t = T.translation();
  Eigen::Quaterniond q = T.quaternion();
  // Canonical sign so that identical rotations print identically.
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  std::string s;
  for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) {
    s += sep;
    s += fmt6(v);
  }
  return s;
}

}  // namespace

std::vector<std::pair<int, int>> associate_timestamps(std::span<const double> a, std::span<const double> b,
                                                      double max_offset) {
  std::vector<std::tuple<double, int, int>> cand;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto it = std::lower_bound(b.begin(), b.end(), a[i] - max_offset);
    for (; it != b.end() && *it <= a[i] + max_offset; ++it) {
      cand.emplace_back(std::abs(*it - a[i]), static_cast<int>(i), static_cast<int>(it - b.begin()));
    }
  }
  std::sort(cand.begin(), cand.end());
  std::vector<char> used_a(a.size(), 0), used_b(b.size(), 0);
  std::vector<std::pair<int, int>> out;
  for (const auto& [d, i, j] : cand) {
    if (used_a[static_cast<std::size_t>(i)] || used_b[static_cast<std::size_t>(j)]) continue;
    used_a[static_cast<std::size_t>(i)] = used_b[static_cast<std::size_t>(j)] = 1;
    out.emplace_back(i, j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

SequenceManifest load_tum_sequence(const std::filesystem::path& dir, double max_offset) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::MissingIndexFile, "not a directory: " + dir.string());
  SequenceManifest m;
  m.root = dir;
  m.rgb = read_index(dir, "rgb.txt");
  m.depth = read_index(dir, "depth.txt");
  std::vector<double> ta, tb;
  for (const auto& r : m.rgb) ta.push_back(r.timestamp);
  for (const auto& d : m.depth) tb.push_back(d.timestamp);
  check_increasing(ta, dir / "rgb.txt");
  check_increasing(tb, dir / "depth.txt");
  const auto pairs = associate_timestamps(ta, tb, max_offset);
  if (pairs.empty()) throw Error(ErrorCode::NoAssociations, "no rgb/depth pairs within tolerance");
  for (const auto& [i, j] : pairs) {
    const auto& r = m.rgb[static_cast<std::size_t>(i)];
    const auto& d = m.depth[static_cast<std::size_t>(j)];
    if (!std::filesystem::exists(r.path) || !std::filesystem::exists(d.path)) {
      throw Error(ErrorCode::IoError, "missing image referenced by index: " + r.path.string());
    }
    m.frames.push_back({r.timestamp, d.timestamp, r.path, d.path});
  }
  m.dropped = static_cast<int>(m.rgb.size() - pairs.size());

  if (std::filesystem::exists(dir / "groundtruth.txt")) m.ground_truth = read_trajectory(dir / "groundtruth.txt");
  if (std::filesystem::exists(dir / "imu.csv")) m.imu = read_imu_csv(dir / "imu.csv");
  if (std::filesystem::exists(dir / "legged.csv")) m.legged = read_legged_csv(dir / "legged.csv");
  const CameraFile cam =
      std::filesystem::exists(dir / "camera.txt") ? read_camera_file(dir / "camera.txt") : tum_default_camera();
  m.camera = cam.camera;
  m.T_b_c = cam.T_b_c;
  return m;
}

void write_trajectory(const Trajectory& trajectory, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& p : trajectory) out << fmt6(p.timestamp) << pose_fields(p.pose, ' ') << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  Trajectory t;
  std::vector<double> stamps;
  for (const auto& row : read_numeric_rows(path, 8, false)) {
    t.push_back({row[0], pose_from(row, 1)});
    stamps.push_back(row[0]);
  }
  check_increasing(stamps, path);
  return t;
}

std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path) {
  std::vector<ImuSample> out;
  std::vector<double> stamps;
  for (const auto& r : read_numeric_rows(path, 7, true)) {
    out.push_back({r[0], Vector3d(r[1], r[2], r[3]), Vector3d(r[4], r[5], r[6])});
    stamps.push_back(r[0]);
  }
  check_increasing(stamps, path);
  return out;
}

void write_imu_csv(std::span<const ImuSample> samples, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "timestamp,wx,wy,wz,ax,ay,az\n";
  char buf[256];
  for (const auto& s : samples) {
    std::snprintf(buf, sizeof buf, "%.6f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", s.timestamp, s.gyro.x(), s.gyro.y(),
                  s.gyro.z(), s.accel.x(), s.accel.y(), s.accel.z());
    out << buf;
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::vector<LeggedOdomSample> read_legged_csv(const std::filesystem::path& path) {
  std::vector<LeggedOdomSample> out;
  std::vector<double> stamps;
  for (const auto& r : read_numeric_rows(path, 8, true)) {
    LeggedOdomSample s;
    s.timestamp = r[0];
    s.pose = pose_from(r, 1);
    out.push_back(s);
    stamps.push_back(r[0]);
  }
  check_increasing(stamps, path);
  return out;
}

void write_legged_csv(std::span<const LeggedOdomSample> samples, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "timestamp,tx,ty,tz,qx,qy,qz,qw\n";
  for (const auto& s : samples) {
    const Eigen::Quaterniond& q = s.pose.quaternion();
    const Vector3d& t = s.pose.translation();
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.6f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f\n", s.timestamp, t.x(), t.y(), t.z(),
                  q.x(), q.y(), q.z(), q.w());
    out << buf;
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::map<std::string, std::string> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    const std::string t = trim(std::string_view(line).substr(0, hash));
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) parse_fail(path, n, "expected 'key = value'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty() || value.empty()) parse_fail(path, n, "empty key or value");
    if (out.count(key)) parse_fail(path, n, "duplicate key '" + key + "'");
    out[key] = value;
  }
  return out;
}

CameraFile tum_default_camera() {
  CameraFile f;
  f.camera.fx = 525.0;
  f.camera.fy = 525.0;
  f.camera.cx = 319.5;
  f.camera.cy = 239.5;
  f.camera.width = 640;
  f.camera.height = 480;
  f.camera.depth_scale = 5000.0;
  return f;
}

CameraFile read_camera_file(const std::filesystem::path& path) {
  const auto kv = read_key_value_file(path);
  CameraFile f = tum_default_camera();
  const auto num = [&](const std::string& key, double& dst) {
    const auto it = kv.find(key);
    if (it == kv.end()) return;
    if (!to_double(it->second, dst)) throw Error(ErrorCode::ParseError, path.string() + ": bad value for " + key);
  };
  double w = f.camera.width, h = f.camera.height;
  num("fx", f.camera.fx);
  num("fy", f.camera.fy);
  num("cx", f.camera.cx);
  num("cy", f.camera.cy);
  num("width", w);
  num("height", h);
  num("depth_scale", f.camera.depth_scale);
  f.camera.width = static_cast<int>(w);
  f.camera.height = static_cast<int>(h);
  if (const auto it = kv.find("body_from_camera"); it != kv.end()) {
    const auto tok = tokens(it->second);
    std::vector<double> v(7);
    bool ok = tok.size() == 7;
    for (std::size_t i = 0; ok && i < 7; ++i) ok = to_double(tok[i], v[i]);
    if (!ok) throw Error(ErrorCode::ParseError, path.string() + ": body_from_camera needs 7 numbers");
    f.T_b_c = pose_from(v, 0);
  }
  for (const auto& [k, v] : kv) {
    static const char* known[] = {"fx", "fy", "cx", "cy", "width", "height", "depth_scale", "body_from_camera"};
    if (std::find(std::begin(known), std::end(known), k) == std::end(known)) {
      throw Error(ErrorCode::ParseError, path.string() + ": unknown key '" + k + "'");
    }
  }
  f.camera.validate();
  return f;
}

void write_camera_file(const CameraFile& f, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  const auto& c = f.camera;
  out << "fx = " << fmt6(c.fx) << "\nfy = " << fmt6(c.fy) << "\ncx = " << fmt6(c.cx) << "\ncy = " << fmt6(c.cy)
      << "\nwidth = " << c.width << "\nheight = " << c.height << "\ndepth_scale = " << fmt6(c.depth_scale) << '\n';
  std::string fields = pose_fields(f.T_b_c, ' ');
  out << "body_from_camera =" << fields << '\n';
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

void write_sequence(const SyntheticSequence& seq, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "rgb");
  std::filesystem::create_directories(dir / "depth");
  std::ofstream rgb = open_out(dir / "rgb.txt");
  std::ofstream depth = open_out(dir / "depth.txt");
  rgb << "# timestamp filename\n";
  depth << "# timestamp filename\n";
  Trajectory gt;
  for (std::size_t i = 0; i < seq.frame_times.size(); ++i) {
    const std::string stamp = fmt6(seq.frame_times[i]);
    write_png(dir / "rgb" / (stamp + ".png"), seq.gray[i]);
    write_png(dir / "depth" / (stamp + ".png"), seq.depth[i]);
    rgb << stamp << " rgb/" << stamp << ".png\n";
    depth << stamp << " depth/" << stamp << ".png\n";
    gt.push_back({seq.frame_times[i], seq.ground_truth[i]});
  }
  write_trajectory(gt, dir / "groundtruth.txt");
  if (!seq.imu.empty()) write_imu_csv(seq.imu, dir / "imu.csv");
  if (!seq.legged.empty()) write_legged_csv(seq.legged, dir / "legged.csv");
  write_camera_file({seq.camera, seq.T_b_c}, dir / "camera.txt");
}

}  // namespace legslam
