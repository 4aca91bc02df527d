#pragma once

// Synthetic RGB-D / IMU / legged-odometry sequences with exact ground truth.
// Scenes are bounded textured rectangles rendered by ray casting; the body
// trajectory is a C2 cubic B-spline in position and roll/pitch/yaw, so IMU
// samples come from analytic derivatives.
//
// World frame is z-up with gravity (0, 0, -9.81). The body frame is x
// forward, y left, z up; the camera looks along body x.

#include <cstdint>
#include <string>
#include <vector>

#include "legslam/geometry.hpp"
#include "legslam/image.hpp"
#include "legslam/preintegration.hpp"

namespace legslam {

enum class TextureKind : std::uint8_t { Noise, Flat };

/// Rectangle origin + s u_axis + t v_axis with s in [0, size_u], t in [0, size_v].
struct TexturedRect {
  Point3 origin = Point3::Zero();
  Vector3d u_axis = Vector3d::UnitX();
  Vector3d v_axis = Vector3d::UnitY();
  double size_u = 1.0;
  double size_v = 1.0;
  TextureKind texture = TextureKind::Flat;
  double base = 128.0;
  double amplitude = 90.0;
  /// Noise lattice spacing in meters.
  double cell = 0.03;
  std::uint32_t seed = 0;
  /// Independent motion (world velocity, m/s) for dynamic-object tests.
  Vector3d velocity = Vector3d::Zero();

  Vector3d normal() const { return u_axis.cross(v_axis).normalized(); }
};

struct SceneSpec {
  std::string name;
  std::vector<TexturedRect> rects;
  double background = 40.0;
};

/// Axis-aligned box as five or six rectangles (bottom face omitted by default).
void add_box(SceneSpec& scene, const Point3& min_corner, const Point3& max_corner, TextureKind texture,
             std::uint32_t seed, bool with_bottom = false);

SceneSpec textured_room_scene(std::uint64_t seed);
/// Plain-shaded corridor with pillars and a few small posters.
SceneSpec textureless_corridor_scene(std::uint64_t seed);
SceneSpec planar_plaza_scene(std::uint64_t seed);
/// Room with a random mix of textured and plain walls and boxes.
SceneSpec mixed_scene(std::uint64_t seed);
/// Looks up one of the presets above by name ("room", "corridor", "plaza",
/// "mixed"). Throws InvalidArgument.
SceneSpec scene_by_name(const std::string& name, std::uint64_t seed);

/// Texture intensity of a rectangle at in-plane coordinates (s, t).
double texture_value(const TexturedRect& rect, double s, double t);

/// Ray casts one frame. Pixels without a hit get depth 0 and the background
/// intensity. Optionally reports the hit rectangle index per pixel (-1 none).
void render_frame(const SceneSpec& scene, const Se3d& T_w_c, const CameraIntrinsics& k, GrayImage& gray,
                  DepthImage& depth, std::vector<int>* hit_ids = nullptr, double time = 0.0);

/// Metric ray depth (camera z) of the nearest rectangle hit, +inf if none.
double cast_ray(const SceneSpec& scene, const Se3d& T_w_c, const CameraIntrinsics& k, double u, double v,
                int* hit = nullptr, double* intensity = nullptr, double time = 0.0);

// ---------------------------------------------------------------------------

/// Uniform cubic B-spline over position and (roll, pitch, yaw).
class TrajectorySpline {
 public:
  /// Throws InvalidSpline for fewer than 4 control points, mismatched
  /// control lists or a non-positive knot spacing.
  TrajectorySpline(double t0, double knot_dt, std::vector<Vector3d> positions, std::vector<Vector3d> euler);

  double t_begin() const { return t0_; }
  double t_end() const;

  Se3d pose(double t) const;  // T_w_b
  Vector3d position(double t) const;
  Vector3d velocity(double t) const;
  Vector3d acceleration(double t) const;
  Matrix3d rotation(double t) const;
  Vector3d angular_velocity_body(double t) const;
  /// Accelerometer reading (specific force) in the body frame.
  Vector3d specific_force_body(double t, const Vector3d& gravity) const;

 private:
  struct Eval {
    Vector3d v, d1, d2;
  };
  Eval eval(const std::vector<Vector3d>& ctrl, double t) const;

  double t0_;
  double dt_;
  std::vector<Vector3d> pos_;
  std::vector<Vector3d> euler_;
};

/// Trajectory presets: "static", "line", "walk", "pan". Every preset is
/// stationary for its first `still` seconds.
TrajectorySpline trajectory_by_name(const std::string& name, double duration, std::uint64_t seed,
                                    double still = 0.6);

struct LeggedDrift {
  double sigma_t_per_meter = 0.005;
  double sigma_r_per_meter = deg2rad(0.2);
  /// Systematic odometry scale error and yaw drift per meter.
  double scale_error = 0.01;
  double yaw_per_meter = deg2rad(0.3);
};

struct SensorSpec {
  CameraIntrinsics camera;
  Se3d T_b_c;
  double frame_rate = 30.0;
  int num_frames = 200;
  /// Time of the first frame after the trajectory start (IMU runs from the start).
  double first_frame_offset = 0.5;
  double imu_rate = 200.0;
  double legged_rate = 200.0;
  ImuNoise imu_noise;
  ImuBias imu_bias;
  bool imu_noise_enabled = true;
  bool depth_noise_enabled = true;
  double gray_noise = 1.0;
  /// > 1 averages this many sub-exposure renders across the frame interval.
  int blur_subframes = 1;
  double exposure_fraction = 0.5;
  int imu_bursts = 0;
  double burst_peak = 40.0;
  double burst_duration = 0.06;
  LeggedDrift legged;
  bool legged_enabled = true;
  bool imu_enabled = true;

  static SensorSpec defaults();
};

/// Camera axes in the body frame: camera z = body x, camera x = -body y,
/// camera y = -body z.
Se3d default_body_from_camera();

struct SyntheticSequence {
  CameraIntrinsics camera;
  Se3d T_b_c;
  std::vector<double> frame_times;
  std::vector<GrayImage> gray;
  std::vector<DepthImage> depth;
  std::vector<ImuSample> imu;
  std::vector<LeggedOdomSample> legged;
  /// Body ground truth at frame times.
  std::vector<Se3d> ground_truth;
};

SyntheticSequence generate_synthetic_sequence(const SceneSpec& scene, const TrajectorySpline& trajectory,
                                              const SensorSpec& sensor, std::uint64_t seed);

}  // namespace legslam
