#pragma once

// Single-frame optimization against a fixed previous state and local-window
// bundle adjustment over keyframes and map points.

#include <optional>
#include <vector>

#include "legslam/factor_graph.hpp"

namespace legslam {

struct FactorWeights {
  double reproj_sigma_px = 1.0;  // at pyramid level 0
  double plane_sigma_m = 0.02;
  double reproj_huber = RobustDefaults::reproj;
  double plane_huber_m = RobustDefaults::point_to_plane_m;
  double relative_huber = RobustDefaults::relative_pose;
  /// Depth noise sigma(z) = a + b z^2 for RGB-D observations in the window.
  double depth_sigma_const = 0.002;
  double depth_sigma_quad = 0.005;
  bool robust = true;
};

struct VisualObservation {
  Point3 point_w = Point3::Zero();
  Pixel2 pixel = Pixel2::Zero();
  int level = 0;
};

struct PlaneObservation {
  Point3 p_c = Point3::Zero();
  Vector3d n_w = Vector3d::UnitZ();
  Point3 q_w = Point3::Zero();
};

struct RelativeConstraint {
  Se3d measured;
  Matrix6d information = Matrix6d::Identity();
};

/// Motion constraints between two consecutive states. The legged constraint
/// is in the body frame, the GICP constraint between camera frames.
struct IntervalConstraints {
  std::optional<ImuPreintegration> imu;
  std::optional<RelativeConstraint> legged;
  std::optional<RelativeConstraint> gicp;
};

struct SwapPolicy {
  /// Replace the IMU factor with the legged one when the IMU prediction
  /// diverges from the legged reference.
  bool adaptive_legged = true;
  DivergenceThresholds thresholds;
};

enum class MotionFactor { None, Imu, Legged };

/// IMU unless it diverges from legged odometry (or is missing).
MotionFactor select_motion_factor(const NavState& previous, const IntervalConstraints& c, const Vector3d& gravity,
                                  const SwapPolicy& policy, DivergenceReport* report = nullptr);

struct SingleFrameProblem {
  NavState previous;  // pose and bias held fixed
  /// Prior sigma (m/s) on the previous velocity, which stays free so image
  /// evidence reaches the velocity through the IMU position residual.
  /// Non-positive holds it fixed.
  double previous_velocity_sigma = 0.1;
  NavState current;   // initial guess
  CameraIntrinsics camera;
  Se3d T_b_c;
  Vector3d gravity = Vector3d(0.0, 0.0, -kGravityMagnitude);
  std::vector<VisualObservation> observations;
  std::vector<PlaneObservation> planes;
  IntervalConstraints motion;
};

struct SingleFrameResult {
  NavState state;
  LmSummary summary;
  MotionFactor motion_factor = MotionFactor::None;
};

/// Optimizes the current state (and the previous velocity, see above); map
/// points and the previous pose are constants.
SingleFrameResult optimize_single_frame(const SingleFrameProblem& problem, const FactorWeights& weights = {},
                                        const SwapPolicy& policy = {}, const LmConfig& lm = {});

struct WindowKeyframe {
  NavState state;
  bool fixed = false;
  std::vector<PlaneObservation> planes;
  /// Constraints from the previous keyframe; ignored for the first one.
  IntervalConstraints from_previous;
};

struct WindowObservation {
  int keyframe = 0;
  int point = 0;
  Pixel2 pixel = Pixel2::Zero();
  int level = 0;
  double depth = 0.0;  // measured camera depth, 0 if none
};

struct LocalWindowProblem {
  std::vector<WindowKeyframe> keyframes;
  std::vector<Point3> points;
  std::vector<WindowObservation> observations;
  CameraIntrinsics camera;
  Se3d T_b_c;
  Vector3d gravity = Vector3d(0.0, 0.0, -kGravityMagnitude);
};

struct LocalWindowResult {
  std::vector<NavState> states;
  std::vector<Point3> points;
  std::vector<MotionFactor> motion_factors;  // per keyframe, None for the first
  LmSummary summary;
};

/// Joint optimization of keyframe states and map points. The first keyframe
/// is fixed when none is; points seen fewer than twice are held constant.
/// Throws InvalidArgument for fewer than two keyframes.
LocalWindowResult optimize_local_window(const LocalWindowProblem& problem, const FactorWeights& weights = {},
                                        const SwapPolicy& policy = {}, const LmConfig& lm = {});

}  // namespace legslam
