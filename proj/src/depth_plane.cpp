#include "legslam/depth_plane.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <limits>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace legslam {

AngularFov AngularFov::from_camera(const CameraIntrinsics& k) {
  AngularFov fov;
  fov.alpha_min = std::atan2(-k.cx, k.fx);
  fov.alpha_max = std::atan2(k.width - 1 - k.cx, k.fx);
  fov.theta_min = std::atan2(-k.cy, k.fy);
  fov.theta_max = std::atan2(k.height - 1 - k.cy, k.fy);
  return fov;
}

std::vector<Point3> depth_to_cloud(const DepthImage& depth, const CameraIntrinsics& k, int stride,
                                   double min_depth, double max_depth) {
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  std::vector<Point3> cloud;
  cloud.reserve(static_cast<std::size_t>((depth.rows() / stride + 1) * (depth.cols() / stride + 1)));
  const double inv_scale = 1.0 / k.depth_scale;
  for (Eigen::Index v = 0; v < depth.rows(); v += stride) {
    for (Eigen::Index u = 0; u < depth.cols(); u += stride) {
      const double z = depth(v, u) * inv_scale;
      if (!(z > min_depth && z < max_depth)) continue;
      cloud.emplace_back((static_cast<double>(u) - k.cx) / k.fx * z, (static_cast<double>(v) - k.cy) / k.fy * z, z);
    }
  }
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "no valid depth pixels");
  return cloud;
}

namespace {

bool quantize(double angle, double lo, double hi, int bins, int& out) {
  if (!(angle >= lo && angle <= hi) || !(hi > lo)) return false;
  int idx = static_cast<int>(std::floor((angle - lo) / (hi - lo) * bins));
  out = std::clamp(idx, 0, bins - 1);
  return true;
}

}  // namespace

bool try_angular_cell_index(const Point3& p, const AngularFov& fov, int rows, int cols, CellIndex& out) {
  if (!(p.z() > 0.0)) return false;
  const double alpha = std::atan(p.x() / p.z());
  const double theta = std::atan(p.y() / p.z());
  return quantize(theta, fov.theta_min, fov.theta_max, rows, out.row) &&
         quantize(alpha, fov.alpha_min, fov.alpha_max, cols, out.col);
}

CellIndex angular_cell_index(const Point3& p, const AngularFov& fov, int rows, int cols) {
  CellIndex idx;
  if (!try_angular_cell_index(p, fov, rows, cols, idx)) {
    throw Error(ErrorCode::OutOfFov, "point outside angular field of view");
  }
  return idx;
}

PlaneFeatureCloud extract_plane_points(std::span<const Point3> cloud, const AngularFov& fov,
                                       const PlaneExtractionConfig& config) {
  const int rows = config.rows, cols = config.cols;
  std::vector<std::vector<int>> cells(static_cast<std::size_t>(rows * cols));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    CellIndex c;
    if (try_angular_cell_index(cloud[i], fov, rows, cols, c)) {
      cells[static_cast<std::size_t>(c.row * cols + c.col)].push_back(static_cast<int>(i));
    }
  }

  PlaneFeatureCloud out;
  std::vector<std::pair<double, int>> scored;
  for (const auto& members : cells) {
    const int n = static_cast<int>(members.size());
    if (n < std::max(2, config.min_points_per_cell)) continue;
    Point3 sum = Point3::Zero();
    for (int idx : members) sum += cloud[static_cast<std::size_t>(idx)];
    scored.clear();
    for (int idx : members) {
      const Point3& p = cloud[static_cast<std::size_t>(idx)];
      // sum_j (p_j - p_i) = sum - n p_i
      const double s = (sum - n * p).norm() / (n * p.norm());
      if (s < config.smoothness_threshold) scored.emplace_back(s, idx);
    }
    std::sort(scored.begin(), scored.end());
    const int keep = std::min<int>(config.max_per_cell, static_cast<int>(scored.size()));
    for (int j = 0; j < keep; ++j) {
      out.points.push_back(cloud[static_cast<std::size_t>(scored[j].second)]);
      out.smoothness.push_back(scored[j].first);
    }
  }
  return out;
}

PlaneFeatureCloud extract_plane_features(const DepthImage& depth, const CameraIntrinsics& k,
                                         const PlaneExtractionConfig& config) {
  const auto cloud = depth_to_cloud(depth, k, config.stride, config.min_depth, config.max_depth);
  return extract_plane_points(cloud, AngularFov::from_camera(k), config);
}

FittedPlane fit_plane_knn(const Point3& query, const KdTree3& submap, const PlaneFitConfig& config,
                          const Point3& viewpoint) {
  if (static_cast<int>(submap.size()) < config.k || config.k < 3) {
    throw Error(ErrorCode::InsufficientNeighbors, "submap smaller than k");
  }
  const auto nn = submap.knn(query, config.k);
  FittedPlane plane;
  plane.k_used = static_cast<int>(nn.size());

  Point3 mean = Point3::Zero();
  for (const auto& n : nn) mean += submap.points()[static_cast<std::size_t>(n.index)];
  mean /= static_cast<double>(nn.size());
  Matrix3d scatter = Matrix3d::Zero();
  for (const auto& n : nn) {
    const Vector3d d = submap.points()[static_cast<std::size_t>(n.index)] - mean;
    scatter += d * d.transpose();
  }
  scatter /= static_cast<double>(nn.size());

  Eigen::SelfAdjointEigenSolver<Matrix3d> eig(scatter);
  const Vector3d ev = eig.eigenvalues().cwiseMax(0.0);
  Vector3d normal = eig.eigenvectors().col(0).normalized();
  if (normal.dot(viewpoint - mean) < 0.0) normal = -normal;

  plane.normal = normal;
  plane.centroid = mean;
  const double scale = std::max(ev(2), 1e-300);
  // A rank-deficient (collinear) neighborhood has no defined plane.
  const bool degenerate = ev(1) <= 1e-12 * scale || ev(2) <= 0.0;
  plane.planarity = degenerate ? std::numeric_limits<double>::infinity() : ev(0) / ev(1);
  const double max_dist = std::sqrt(nn.back().squared_distance);
  plane.valid = !degenerate && plane.planarity < config.planarity_threshold && max_dist <= config.radius_cap;
  return plane;
}

void write_ply(const std::filesystem::path& path, std::span<const Point3> points) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::fprintf(f, "ply\nformat ascii 1.0\nelement vertex %zu\nproperty float x\nproperty float y\n"
                  "property float z\nend_header\n",
               points.size());
  for (const auto& p : points) std::fprintf(f, "%.6f %.6f %.6f\n", p.x(), p.y(), p.z());
  std::fclose(f);
}

}  // namespace legslam
