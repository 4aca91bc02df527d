#include "legslam/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace legslam {

namespace {

std::uint32_t hash3(std::int64_t i, std::int64_t j, std::uint32_t seed) {
  std::uint64_t h = static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull ^
                    (static_cast<std::uint64_t>(j) + 0x632BE59BD9B4E019ull) * 0xC2B2AE3D27D4EB4Full ^
                    (static_cast<std::uint64_t>(seed) << 32);
  h ^= h >> 33;
  h *= 0xFF51AFD7ED558CCDull;
  h ^= h >> 33;
  h *= 0xC4CEB9FE1A85EC53ull;
  h ^= h >> 33;
  return static_cast<std::uint32_t>(h);
}

double lattice(std::int64_t i, std::int64_t j, std::uint32_t seed) {
  return hash3(i, j, seed) / 4294967296.0;
}

double value_noise(double x, double y, std::uint32_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto i = static_cast<std::int64_t>(fx), j = static_cast<std::int64_t>(fy);
  const double ax = x - fx, ay = y - fy;
  const double v00 = lattice(i, j, seed), v10 = lattice(i + 1, j, seed);
  const double v01 = lattice(i, j + 1, seed), v11 = lattice(i + 1, j + 1, seed);
  return (1 - ay) * ((1 - ax) * v00 + ax * v10) + ay * ((1 - ax) * v01 + ax * v11);
}

TexturedRect make_rect(const Point3& origin, const Vector3d& u, const Vector3d& v, TextureKind tex, double base,
                       std::uint32_t seed) {
  TexturedRect r;
  r.origin = origin;
  r.size_u = u.norm();
  r.size_v = v.norm();
  r.u_axis = u / r.size_u;
  r.v_axis = v / r.size_v;
  r.texture = tex;
  r.base = base;
  r.seed = seed;
  return r;
}

// Floor, ceiling and four walls of an axis-aligned room, all facing inward.
void add_room(SceneSpec& s, const Point3& lo, const Point3& hi, const std::array<TextureKind, 6>& tex,
              const std::array<double, 6>& shade, std::uint32_t seed) {
  const Vector3d ex(hi.x() - lo.x(), 0, 0), ey(0, hi.y() - lo.y(), 0), ez(0, 0, hi.z() - lo.z());
  s.rects.push_back(make_rect(lo, ex, ey, tex[0], shade[0], seed + 1));                              // floor
  s.rects.push_back(make_rect(Point3(lo.x(), lo.y(), hi.z()), ey, ex, tex[1], shade[1], seed + 2));  // ceiling
  s.rects.push_back(make_rect(lo, ez, ex, tex[2], shade[2], seed + 3));                              // y = lo
  s.rects.push_back(make_rect(Point3(lo.x(), hi.y(), lo.z()), ex, ez, tex[3], shade[3], seed + 4));  // y = hi
  s.rects.push_back(make_rect(lo, ey, ez, tex[4], shade[4], seed + 5));                              // x = lo
  s.rects.push_back(make_rect(Point3(hi.x(), lo.y(), lo.z()), ez, ey, tex[5], shade[5], seed + 6));  // x = hi
}

}  // namespace

double texture_value(const TexturedRect& rect, double s, double t) {
  if (rect.texture == TextureKind::Flat) return rect.base;
  const double fine = value_noise(s / rect.cell, t / rect.cell, rect.seed);
  const double coarse = value_noise(s / (4.0 * rect.cell), t / (4.0 * rect.cell), rect.seed ^ 0xA5A5A5u);
  return rect.base + rect.amplitude * (2.0 * (0.7 * fine + 0.3 * coarse) - 1.0);
}

void add_box(SceneSpec& scene, const Point3& lo, const Point3& hi, TextureKind texture, std::uint32_t seed,
             bool with_bottom) {
  const Vector3d ex(hi.x() - lo.x(), 0, 0), ey(0, hi.y() - lo.y(), 0), ez(0, 0, hi.z() - lo.z());
  const double shade = 100.0 + (seed % 7) * 15.0;
  // Outward-facing faces.
  scene.rects.push_back(make_rect(Point3(lo.x(), lo.y(), hi.z()), ex, ey, texture, shade + 20, seed * 11 + 1));
  scene.rects.push_back(make_rect(lo, ex, ez, texture, shade, seed * 11 + 2));
  scene.rects.push_back(make_rect(Point3(lo.x(), hi.y(), lo.z()), ez, ex, texture, shade - 10, seed * 11 + 3));
  scene.rects.push_back(make_rect(lo, ez, ey, texture, shade + 10, seed * 11 + 4));
  scene.rects.push_back(make_rect(Point3(hi.x(), lo.y(), lo.z()), ey, ez, texture, shade - 20, seed * 11 + 5));
  if (with_bottom) scene.rects.push_back(make_rect(lo, ey, ex, texture, shade, seed * 11 + 6));
}

SceneSpec textured_room_scene(std::uint64_t seed) {
  SceneSpec s;
  s.name = "room";
  const auto sd = static_cast<std::uint32_t>(seed * 97);
  using T = TextureKind;
  add_room(s, Point3(-2, -3, 0), Point3(7, 3, 3), {T::Noise, T::Flat, T::Noise, T::Noise, T::Noise, T::Noise},
           {120, 190, 130, 140, 125, 135}, sd);
  for (auto& r : s.rects) r.cell = r.texture == T::Noise ? 0.07 : r.cell;
  s.rects[0].cell = 0.05;
  add_box(s, Point3(3.0, 0.8, 0), Point3(3.8, 1.6, 0.7), T::Noise, sd + 10);
  add_box(s, Point3(4.5, -2.0, 0), Point3(5.3, -1.2, 1.0), T::Noise, sd + 11);
  add_box(s, Point3(1.5, -2.6, 0), Point3(2.3, -1.9, 0.5), T::Noise, sd + 12);
  return s;
}

SceneSpec textureless_corridor_scene(std::uint64_t seed) {
  SceneSpec s;
  s.name = "corridor";
  const auto sd = static_cast<std::uint32_t>(seed * 131);
  using T = TextureKind;
  add_room(s, Point3(-2, -1.0, 0), Point3(10, 1.0, 2.5), {T::Flat, T::Flat, T::Flat, T::Flat, T::Flat, T::Flat},
           {128, 152, 140, 136, 144, 148}, sd);
  // Pillars protruding from both walls give the depth geometry structure
  // along the corridor axis.
  for (int i = 0; i < 3; ++i) {
    const double x = 1.5 + 3.0 * i;
    add_box(s, Point3(x, -1.0, 0), Point3(x + 0.3, -0.7, 2.5), T::Flat, sd + 20 + i);
    add_box(s, Point3(x + 1.5, 0.7, 0), Point3(x + 1.8, 1.0, 2.5), T::Flat, sd + 30 + i);
  }
  // Steps on the floor.
  add_box(s, Point3(3.0, -0.3, 0), Point3(3.4, 0.3, 0.15), T::Flat, sd + 40);
  // Low-contrast shading everywhere so silhouettes and joints rarely make
  // corners.
  for (std::size_t i = 6; i < s.rects.size(); ++i) s.rects[i].base = 134.0 + 5.0 * static_cast<double>(i % 3);
  // A few small posters are the only visual texture.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> px(1.0, 8.5), pz(0.3, 1.2);
  for (int i = 0; i < 4; ++i) {
    const double x = px(rng), z = pz(rng);
    TexturedRect r = make_rect(Point3(x, (i % 2 ? 0.699 : -0.999) + (i % 2 ? 0.3 : 0.0), z),
                               i % 2 ? Vector3d(0.35, 0, 0) : Vector3d(0, 0, 0.35),
                               i % 2 ? Vector3d(0, 0, 0.35) : Vector3d(0.35, 0, 0), T::Noise, 128, sd + 50 + i);
    r.cell = 0.06;
    s.rects.push_back(r);
  }
  return s;
}

SceneSpec planar_plaza_scene(std::uint64_t seed) {
  SceneSpec s;
  s.name = "plaza";
  const auto sd = static_cast<std::uint32_t>(seed * 173);
  using T = TextureKind;
  TexturedRect floor = make_rect(Point3(-5, -8, 0), Vector3d(16, 0, 0), Vector3d(0, 16, 0), T::Noise, 120, sd + 1);
  floor.cell = 0.06;
  s.rects.push_back(floor);
  TexturedRect front = make_rect(Point3(8, -8, 0), Vector3d(0, 0, 6), Vector3d(0, 16, 0), T::Noise, 140, sd + 2);
  front.cell = 0.08;
  s.rects.push_back(front);
  TexturedRect left = make_rect(Point3(-5, 4, 0), Vector3d(13, 0, 0), Vector3d(0, 0, 6), T::Noise, 130, sd + 3);
  left.cell = 0.08;
  s.rects.push_back(left);
  add_box(s, Point3(3, -2.5, 0), Point3(4, -1.5, 1.2), T::Noise, sd + 4);
  return s;
}

SceneSpec mixed_scene(std::uint64_t seed) {
  SceneSpec s;
  s.name = "mixed";
  const auto sd = static_cast<std::uint32_t>(seed * 211);
  std::mt19937_64 rng(seed ^ 0x5EEDull);
  std::bernoulli_distribution coin(0.5);
  using T = TextureKind;
  std::array<TextureKind, 6> tex{};
  for (auto& t : tex) t = coin(rng) ? T::Noise : T::Flat;
  tex[0] = T::Noise;
  tex[5] = T::Noise;
  add_room(s, Point3(-2, -3, 0), Point3(7, 3, 3), tex, {120, 190, 130, 150, 125, 140}, sd);
  std::uniform_real_distribution<double> bx(1.5, 5.5), by(-2.5, 2.0), bs(0.4, 0.9);
  for (int i = 0; i < 4; ++i) {
    const double x = bx(rng), y = by(rng), w = bs(rng), h = bs(rng) * 1.2;
    if (std::abs(y) < 0.6 && x < 3.5) continue;  // keep the walking path clear
    add_box(s, Point3(x, y, 0), Point3(x + w, y + w, h), coin(rng) ? T::Noise : T::Flat, sd + 10 + i);
  }
  return s;
}

SceneSpec scene_by_name(const std::string& name, std::uint64_t seed) {
  if (name == "room") return textured_room_scene(seed);
  if (name == "corridor") return textureless_corridor_scene(seed);
  if (name == "plaza") return planar_plaza_scene(seed);
  if (name == "mixed") return mixed_scene(seed);
  throw Error(ErrorCode::InvalidArgument, "unknown scene '" + name + "'");
}

// ---------------------------------------------------------------------------

double cast_ray(const SceneSpec& scene, const Se3d& T_w_c, const CameraIntrinsics& k, double u, double v, int* hit,
                double* intensity, double time) {
  const Vector3d dc((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
  const Vector3d d = T_w_c.rotation() * dc;
  const Point3 o = T_w_c.translation();
  double best = std::numeric_limits<double>::infinity();
  int best_id = -1;
  double best_s = 0, best_t = 0;
  for (std::size_t i = 0; i < scene.rects.size(); ++i) {
    const TexturedRect& r = scene.rects[i];
    const Vector3d n = r.normal();
    const double den = n.dot(d);
    if (std::abs(den) < 1e-12) continue;
    const Point3 origin = r.origin + r.velocity * time;
    const double lambda = n.dot(origin - o) / den;
    if (!(lambda > 1e-6) || lambda >= best) continue;
    const Vector3d rel = o + lambda * d - origin;
    const double s = rel.dot(r.u_axis), t = rel.dot(r.v_axis);
    if (s < 0 || t < 0 || s > r.size_u || t > r.size_v) continue;
    best = lambda;
    best_id = static_cast<int>(i);
    best_s = s;
    best_t = t;
  }
  if (hit) *hit = best_id;
  if (intensity) {
    *intensity = best_id >= 0 ? texture_value(scene.rects[static_cast<std::size_t>(best_id)], best_s, best_t)
                              : scene.background;
  }
  return best;
}

void render_frame(const SceneSpec& scene, const Se3d& T_w_c, const CameraIntrinsics& k, GrayImage& gray,
                  DepthImage& depth, std::vector<int>* hit_ids, double time) {
  gray.resize(k.height, k.width);
  depth.resize(k.height, k.width);
  if (hit_ids) hit_ids->assign(static_cast<std::size_t>(k.width * k.height), -1);

  // Precompute per-rectangle constants once per frame.
  struct Pre {
    Vector3d n, u, v;
    Point3 origin;
    double su, sv;
  };
  std::vector<Pre> pre;
  pre.reserve(scene.rects.size());
  for (const auto& r : scene.rects) pre.push_back({r.normal(), r.u_axis, r.v_axis, r.origin + r.velocity * time, r.size_u, r.size_v});
  const Matrix3d R = T_w_c.rotation();
  const Point3 o = T_w_c.translation();
  std::vector<double> n_dot_o(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) n_dot_o[i] = pre[i].n.dot(pre[i].origin - o);

  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Vector3d d = R * Vector3d((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
      double best = std::numeric_limits<double>::infinity();
      int id = -1;
      double bs = 0, bt = 0;
      for (std::size_t i = 0; i < pre.size(); ++i) {
        const double den = pre[i].n.dot(d);
        if (std::abs(den) < 1e-12) continue;
        const double lambda = n_dot_o[i] / den;
        if (!(lambda > 1e-6) || lambda >= best) continue;
        const Vector3d rel = o + lambda * d - pre[i].origin;
        const double s = rel.dot(pre[i].u), t = rel.dot(pre[i].v);
        if (s < 0 || t < 0 || s > pre[i].su || t > pre[i].sv) continue;
        best = lambda;
        id = static_cast<int>(i);
        bs = s;
        bt = t;
      }
      if (id < 0) {
        gray(y, x) = static_cast<std::uint8_t>(std::clamp(scene.background, 0.0, 255.0));
        depth(y, x) = 0;
        continue;
      }
      const double g = texture_value(scene.rects[static_cast<std::size_t>(id)], bs, bt);
      gray(y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(g), 0L, 255L));
      const double raw = best * k.depth_scale;
      depth(y, x) = raw < 65535.0 ? static_cast<std::uint16_t>(std::lround(raw)) : 0;
      if (hit_ids) (*hit_ids)[static_cast<std::size_t>(y * k.width + x)] = id;
    }
  }
}

// ---------------------------------------------------------------------------

TrajectorySpline::TrajectorySpline(double t0, double knot_dt, std::vector<Vector3d> positions,
                                   std::vector<Vector3d> euler)
    : t0_(t0), dt_(knot_dt), pos_(std::move(positions)), euler_(std::move(euler)) {
  if (!(knot_dt > 0.0) || pos_.size() < 4 || pos_.size() != euler_.size()) {
    throw Error(ErrorCode::InvalidSpline, "spline needs >= 4 matching control points and a positive knot spacing");
  }
}

double TrajectorySpline::t_end() const { return t0_ + static_cast<double>(pos_.size() - 3) * dt_; }

TrajectorySpline::Eval TrajectorySpline::eval(const std::vector<Vector3d>& c, double t) const {
  const double x = (t - t0_) / dt_;
  const int segs = static_cast<int>(c.size()) - 3;
  const int i = std::clamp(static_cast<int>(std::floor(x)), 0, segs - 1);
  const double u = x - i;
  const double u2 = u * u, u3 = u2 * u, m = 1.0 - u;
  const double b[4] = {m * m * m / 6.0, (3 * u3 - 6 * u2 + 4) / 6.0, (-3 * u3 + 3 * u2 + 3 * u + 1) / 6.0, u3 / 6.0};
  const double d[4] = {-0.5 * m * m, 1.5 * u2 - 2 * u, -1.5 * u2 + u + 0.5, 0.5 * u2};
  const double dd[4] = {m, 3 * u - 2, -3 * u + 1, u};
  Eval e{Vector3d::Zero(), Vector3d::Zero(), Vector3d::Zero()};
  for (int j = 0; j < 4; ++j) {
    const Vector3d& p = c[static_cast<std::size_t>(i + j)];
    e.v += b[j] * p;
    e.d1 += d[j] / dt_ * p;
    e.d2 += dd[j] / (dt_ * dt_) * p;
  }
  return e;
}

namespace {

Matrix3d rot_x(double a) { return Eigen::AngleAxisd(a, Vector3d::UnitX()).toRotationMatrix(); }
Matrix3d rot_y(double a) { return Eigen::AngleAxisd(a, Vector3d::UnitY()).toRotationMatrix(); }
Matrix3d rot_z(double a) { return Eigen::AngleAxisd(a, Vector3d::UnitZ()).toRotationMatrix(); }

}  // namespace

Vector3d TrajectorySpline::position(double t) const { return eval(pos_, t).v; }
Vector3d TrajectorySpline::velocity(double t) const { return eval(pos_, t).d1; }
Vector3d TrajectorySpline::acceleration(double t) const { return eval(pos_, t).d2; }

Matrix3d TrajectorySpline::rotation(double t) const {
  const Vector3d e = eval(euler_, t).v;  // roll, pitch, yaw
  return rot_z(e.z()) * rot_y(e.y()) * rot_x(e.x());
}

Se3d TrajectorySpline::pose(double t) const { return Se3d(rotation(t), position(t)); }

Vector3d TrajectorySpline::angular_velocity_body(double t) const {
  const Eval e = eval(euler_, t);
  const Matrix3d Rx = rot_x(e.v.x()), Ry = rot_y(e.v.y());
  return Rx.transpose() * Ry.transpose() * Vector3d::UnitZ() * e.d1.z() + Rx.transpose() * Vector3d::UnitY() * e.d1.y() +
         Vector3d::UnitX() * e.d1.x();
}

Vector3d TrajectorySpline::specific_force_body(double t, const Vector3d& gravity) const {
  return rotation(t).transpose() * (acceleration(t) - gravity);
}

TrajectorySpline trajectory_by_name(const std::string& name, double duration, std::uint64_t seed, double still) {
  const double dt = 0.2;
  const int still_segments = static_cast<int>(std::ceil(still / dt));
  const int n = static_cast<int>(std::ceil(duration / dt)) + 4;
  std::vector<Vector3d> pos(static_cast<std::size_t>(n)), eul(static_cast<std::size_t>(n));
  std::mt19937_64 rng(seed * 7919 + 13);
  std::normal_distribution<double> g(0.0, 1.0);
  const Vector3d start(0.0, 0.0, 0.45);

  double x = 0.0, yaw = 0.0, yaw_rate = 0.0;
  for (int i = 0; i < n; ++i) {
    const int k = std::max(0, i - (still_segments + 2));  // motion index after the still prefix
    Vector3d p = start, e = Vector3d::Zero();
    if (name == "static") {
    } else if (name == "line") {
      p.x() += 0.3 * dt * k;
    } else if (name == "pan") {
      e.z() = 0.25 * dt * k;
    } else if (name == "walk") {
      if (k > 0) {
        yaw_rate = 0.8 * yaw_rate + 0.06 * g(rng);
        yaw += yaw_rate * dt;
        x += 0.35 * dt;
      }
      // Gait: lateral sway, vertical bounce and small body roll/pitch.
      const double phase = 2.0 * kPi * 0.9 * k * dt;
      p.x() += x * std::cos(0.3 * yaw);
      p.y() += x * std::sin(0.3 * yaw) + (k > 0 ? 0.02 * std::sin(phase) : 0.0);
      p.z() += k > 0 ? 0.01 * std::sin(2.0 * phase) : 0.0;
      e.x() = k > 0 ? deg2rad(1.5) * std::sin(phase) + deg2rad(0.5) * g(rng) : 0.0;
      e.y() = k > 0 ? deg2rad(1.0) * std::sin(2.0 * phase) + deg2rad(0.5) * g(rng) : 0.0;
      e.z() = yaw;
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown trajectory '" + name + "'");
    }
    pos[static_cast<std::size_t>(i)] = p;
    eul[static_cast<std::size_t>(i)] = e;
  }
  return TrajectorySpline(0.0, dt, std::move(pos), std::move(eul));
}

// ---------------------------------------------------------------------------

Se3d default_body_from_camera() {
  Matrix3d R;
  R.col(0) = Vector3d(0, -1, 0);
  R.col(1) = Vector3d(0, 0, -1);
  R.col(2) = Vector3d(1, 0, 0);
  return Se3d(R, Vector3d(0.1, 0.0, 0.05));
}

SensorSpec SensorSpec::defaults() {
  SensorSpec s;
  s.camera.fx = 525.0;
  s.camera.fy = 525.0;
  s.camera.cx = 319.5;
  s.camera.cy = 239.5;
  s.camera.width = 640;
  s.camera.height = 480;
  s.camera.depth_scale = 5000.0;
  s.T_b_c = default_body_from_camera();
  s.imu_bias.gyro = Vector3d(0.002, -0.001, 0.0015);
  s.imu_bias.accel = Vector3d(0.02, -0.015, 0.01);
  return s;
}

SyntheticSequence generate_synthetic_sequence(const SceneSpec& scene, const TrajectorySpline& traj,
                                              const SensorSpec& sensor, std::uint64_t seed) {
  sensor.camera.validate();
  SyntheticSequence seq;
  seq.camera = sensor.camera;
  seq.T_b_c = sensor.T_b_c;
  const Vector3d gravity(0.0, 0.0, -kGravityMagnitude);
  const double frame_dt = 1.0 / sensor.frame_rate;
  const double t_last = traj.t_begin() + sensor.first_frame_offset + (sensor.num_frames - 1) * frame_dt;
  if (t_last > traj.t_end()) throw Error(ErrorCode::InvalidSpline, "trajectory shorter than the frame span");

  std::mt19937_64 img_rng(seed * 1000003 + 1), imu_rng(seed * 1000003 + 2), leg_rng(seed * 1000003 + 3),
      burst_rng(seed * 1000003 + 4);
  std::normal_distribution<double> g(0.0, 1.0);

  for (int f = 0; f < sensor.num_frames; ++f) {
    const double t = traj.t_begin() + sensor.first_frame_offset + f * frame_dt;
    seq.frame_times.push_back(t);
    const Se3d T_w_b = traj.pose(t);
    seq.ground_truth.push_back(T_w_b);
    GrayImage gray;
    DepthImage depth;
    render_frame(scene, T_w_b * sensor.T_b_c, sensor.camera, gray, depth, nullptr, t);
    if (sensor.blur_subframes > 1) {
      Eigen::ArrayXXd acc = gray.cast<double>();
      GrayImage sub;
      DepthImage sub_depth;
      for (int j = 1; j < sensor.blur_subframes; ++j) {
        const double ts = t - sensor.exposure_fraction * frame_dt * j / (sensor.blur_subframes - 1);
        render_frame(scene, traj.pose(ts) * sensor.T_b_c, sensor.camera, sub, sub_depth, nullptr, ts);
        acc += sub.cast<double>();
      }
      gray = (acc / sensor.blur_subframes).round().cast<std::uint8_t>();
    }
    if (sensor.gray_noise > 0.0) {
      for (Eigen::Index i = 0; i < gray.size(); ++i) {
        gray.data()[i] = static_cast<std::uint8_t>(
            std::clamp(std::lround(gray.data()[i] + sensor.gray_noise * g(img_rng)), 0L, 255L));
      }
    }
    if (sensor.depth_noise_enabled) {
      for (Eigen::Index i = 0; i < depth.size(); ++i) {
        if (depth.data()[i] == 0) continue;
        const double z = depth.data()[i] / sensor.camera.depth_scale;
        const double zn = z + (0.001 + 0.0025 * z * z) * g(img_rng);
        const double raw = zn * sensor.camera.depth_scale;
        depth.data()[i] = raw > 0.0 && raw < 65535.0 ? static_cast<std::uint16_t>(std::lround(raw)) : 0;
      }
    }
    seq.gray.push_back(std::move(gray));
    seq.depth.push_back(std::move(depth));
  }

  const double t_stop = std::min(traj.t_end(), t_last + 0.05);
  if (sensor.imu_enabled) {
    struct Burst {
      double t0;
      Vector3d dir;
    };
    std::vector<Burst> bursts;
    std::uniform_real_distribution<double> when(seq.frame_times.front() + 0.5, t_last - 0.1);
    for (int b = 0; b < sensor.imu_bursts; ++b) {
      bursts.push_back({when(burst_rng), Vector3d(g(burst_rng), g(burst_rng), g(burst_rng)).normalized()});
    }
    const double sg = sensor.imu_noise.gyro_noise_density * std::sqrt(sensor.imu_rate);
    const double sa = sensor.imu_noise.accel_noise_density * std::sqrt(sensor.imu_rate);
    for (int i = 0;; ++i) {
      const double t = traj.t_begin() + i / sensor.imu_rate;
      if (t > t_stop + 1e-12) break;
      ImuSample s;
      s.timestamp = t;
      s.gyro = traj.angular_velocity_body(t) + sensor.imu_bias.gyro;
      s.accel = traj.specific_force_body(t, gravity) + sensor.imu_bias.accel;
      if (sensor.imu_noise_enabled) {
        s.gyro += sg * Vector3d(g(imu_rng), g(imu_rng), g(imu_rng));
        s.accel += sa * Vector3d(g(imu_rng), g(imu_rng), g(imu_rng));
      }
      for (const auto& b : bursts) {
        if (t >= b.t0 && t <= b.t0 + sensor.burst_duration) {
          s.accel += sensor.burst_peak * std::sin(kPi * (t - b.t0) / sensor.burst_duration) * b.dir;
        }
      }
      seq.imu.push_back(s);
    }
  }

  if (sensor.legged_enabled) {
    Se3d odom = traj.pose(traj.t_begin());
    Se3d prev_gt = odom;
    for (int i = 0;; ++i) {
      const double t = traj.t_begin() + i / sensor.legged_rate;
      if (t > t_stop + 1e-12) break;
      const Se3d gt = traj.pose(t);
      if (i > 0) {
        const Se3d rel = prev_gt.inverse() * gt;
        const double dist = rel.translation().norm();
        Vector6d noise;
        noise.head<3>() = sensor.legged.sigma_t_per_meter * std::sqrt(dist) * Vector3d(g(leg_rng), g(leg_rng), g(leg_rng));
        noise.tail<3>() = sensor.legged.sigma_r_per_meter * std::sqrt(dist) * Vector3d(g(leg_rng), g(leg_rng), g(leg_rng));
        noise(5) += sensor.legged.yaw_per_meter * dist;
        const Se3d scaled(rel.quaternion(), rel.translation() * (1.0 + sensor.legged.scale_error));
        odom = odom * scaled * se3_exp(noise);
      }
      prev_gt = gt;
      seq.legged.push_back({t, odom, std::nullopt});
    }
  }
  return seq;
}

}  // namespace legslam
