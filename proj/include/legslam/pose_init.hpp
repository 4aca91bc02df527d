#pragma once

// Initial pose cascade: legged odometry, IMU, essential matrix + PnP, GICP,
// constant velocity. Each stage either succeeds or hands over to the next.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "legslam/geometry.hpp"
#include "legslam/gicp.hpp"
#include "legslam/preintegration.hpp"

namespace legslam {

enum class InitSource { Legged, Imu, EssentialPnp, Gicp, ConstVel };

std::string_view to_string(InitSource s);

struct PosePrediction {
  Se3d pose;  // T_w_b
  InitSource source = InitSource::ConstVel;
  Matrix6d covariance = Matrix6d::Identity();
};

// ---------------------------------------------------------------------------
// Essential matrix

struct EssentialConfig {
  int max_iters = 200;
  double confidence = 0.999;
  /// Sampson threshold in pixels (converted with the mean focal length).
  double threshold_px = 1.0;
  int min_inliers = 15;
  /// Median rotation-compensated ray angle below which the pair has no
  /// usable baseline.
  double min_parallax_deg = 0.2;
  std::uint64_t seed = 7;
};

struct EssentialResult {
  /// Motion of the camera from the first to the second view (T_c1_c2) with
  /// unit-norm translation.
  Se3d motion;
  Eigen::Matrix3d E = Eigen::Matrix3d::Zero();
  std::vector<std::uint8_t> inliers;
};

/// Throws DegenerateConfig for < 8 matches, no baseline or too few inliers.
EssentialResult essential_matrix_pose(std::span<const Pixel2> prev, std::span<const Pixel2> cur,
                                      const CameraIntrinsics& k, const EssentialConfig& config = {});

// ---------------------------------------------------------------------------
// PnP

struct PnpConfig {
  int max_iters = 100;
  double confidence = 0.999;
  double threshold_px = 3.0;
  int min_inliers = 10;
  int refine_iters = 10;
  std::uint64_t seed = 11;
};

struct PnpResult {
  Se3d pose;  // T_w_c
  std::vector<std::uint8_t> inliers;
  int num_inliers = 0;
  double rmse = 0.0;
};

/// Up to four camera poses from three bearing/point pairs (Grunert).
std::vector<Se3d> p3p_solve(const std::array<Vector3d, 3>& bearings, const std::array<Point3, 3>& points);

/// P3P RANSAC followed by Gauss-Newton on the inliers. Returns nullopt
/// (Failed) for < 4 correspondences, < min_inliers or a diverging refinement.
std::optional<PnpResult> pnp_ransac(std::span<const Point3> points_w, std::span<const Pixel2> pixels,
                                    const CameraIntrinsics& k, const std::optional<Se3d>& T_guess = std::nullopt,
                                    const PnpConfig& config = {});

/// Gauss-Newton on the reprojection error of the flagged correspondences.
/// Returns false when the cost does not stay finite.
bool refine_pose_reprojection(Se3d& T_w_c, std::span<const Point3> points_w, std::span<const Pixel2> pixels,
                              std::span<const std::uint8_t> use, const CameraIntrinsics& k, int iterations);

// ---------------------------------------------------------------------------
// Constant velocity

/// T_k = T_{k-1} exp(s log(T_{k-2}^-1 T_{k-1})) with s = dt_cur / dt_prev.
Se3d constant_velocity_predict(const Se3d& T_km2, const Se3d& T_km1, double dt_prev, double dt_cur);

// ---------------------------------------------------------------------------
// Cascade

struct InitContext {
  Se3d prev_pose;  // T_w_b at k-1
  std::optional<Se3d> prev_prev_pose;
  double dt_prev = 0.0;
  double dt_cur = 0.0;
  Se3d T_b_c;

  /// Body motion k-1 -> k from legged odometry.
  std::optional<RelativePoseMeasurement> legged;
  /// IMU-propagated state; only used when imu_healthy.
  std::optional<NavState> imu_prediction;
  Matrix6d imu_covariance = Matrix6d::Identity() * 1e-4;
  bool imu_healthy = false;

  /// Tracked matches between k-1 and k with optional world points.
  std::span<const Pixel2> prev_pixels;
  std::span<const Pixel2> cur_pixels;
  std::span<const std::optional<Point3>> match_points_w;
  const CameraIntrinsics* camera = nullptr;
  bool use_pnp = true;

  /// Plane clouds in camera frames: current (source) and previous (target).
  const std::vector<CovariancePoint>* cur_cloud = nullptr;
  const GicpTarget* prev_cloud = nullptr;
  bool use_gicp = true;

  EssentialConfig essential;
  PnpConfig pnp;
  GicpConfig gicp;
};

PosePrediction predict_initial_pose(const InitContext& ctx);

}  // namespace legslam
