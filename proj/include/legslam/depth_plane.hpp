#pragma once

// Depth image -> point cloud, planar feature extraction by angular binning
// and local smoothness, and k-NN plane fitting on stitched submaps.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "legslam/geometry.hpp"
#include "legslam/image.hpp"
#include "legslam/kdtree.hpp"

namespace legslam {

/// Planar feature points from one depth image, camera frame.
struct PlaneFeatureCloud {
  std::vector<Point3> points;
  std::vector<double> smoothness;
  std::uint64_t frame_id = 0;
  double timestamp = 0.0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct FittedPlane {
  Vector3d normal = Vector3d::UnitZ();  // unit, world frame
  Point3 centroid = Point3::Zero();     // world frame
  /// Smallest over middle eigenvalue of the neighbor scatter.
  double planarity = 0.0;
  int k_used = 0;
  bool valid = false;
};

/// Angular field of view used for cell binning. alpha = atan(X/Z) is the
/// lateral angle (columns), theta = atan(Y/Z) the vertical angle (rows).
struct AngularFov {
  double alpha_min = 0.0, alpha_max = 0.0;
  double theta_min = 0.0, theta_max = 0.0;

  static AngularFov from_camera(const CameraIntrinsics& k);
  static AngularFov symmetric(double half_alpha, double half_theta) {
    return {-half_alpha, half_alpha, -half_theta, half_theta};
  }
};

struct CellIndex {
  int row = 0;
  int col = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

struct PlaneExtractionConfig {
  int rows = 16;  // M
  int cols = 24;  // N
  double smoothness_threshold = 0.05;
  int max_per_cell = 2;
  /// Cells with fewer points have no meaningful smoothness and are skipped.
  int min_points_per_cell = 4;
  int stride = 4;
  double min_depth = kDefaultMinDepth;
  double max_depth = kDefaultMaxDepth;
};

struct PlaneFitConfig {
  int k = 10;
  double planarity_threshold = 0.1;
  double radius_cap = 0.5;
};

/// Unprojects every stride-th pixel whose metric depth lies in
/// (min_depth, max_depth). Throws EmptyCloud when nothing is valid.
std::vector<Point3> depth_to_cloud(const DepthImage& depth, const CameraIntrinsics& k, int stride,
                                   double min_depth = kDefaultMinDepth, double max_depth = kDefaultMaxDepth);

/// Throws OutOfFov for points outside the bounds (or behind the camera).
CellIndex angular_cell_index(const Point3& p, const AngularFov& fov, int rows, int cols);

/// Non-throwing variant; false when out of the field of view.
bool try_angular_cell_index(const Point3& p, const AngularFov& fov, int rows, int cols, CellIndex& out);

/// Per cell, scores each point by ||sum_j (p_j - p_i)|| / (|cell| ||p_i||) and
/// keeps the max_per_cell lowest scores below the threshold. Ties break on
/// input order, so the output is a deterministic function of the input.
PlaneFeatureCloud extract_plane_points(std::span<const Point3> cloud, const AngularFov& fov,
                                       const PlaneExtractionConfig& config);

/// Depth image straight to plane features.
PlaneFeatureCloud extract_plane_features(const DepthImage& depth, const CameraIntrinsics& k,
                                         const PlaneExtractionConfig& config);

/// PCA plane over the k nearest submap points to `query`. The normal is
/// oriented toward `viewpoint`. Returns valid == false when the neighborhood
/// is not planar or too spread out; throws InsufficientNeighbors when the
/// submap holds fewer than k points.
FittedPlane fit_plane_knn(const Point3& query, const KdTree3& submap, const PlaneFitConfig& config,
                          const Point3& viewpoint = Point3::Zero());

/// ASCII PLY with x y z vertex properties.
void write_ply(const std::filesystem::path& path, std::span<const Point3> points);

}  // namespace legslam
