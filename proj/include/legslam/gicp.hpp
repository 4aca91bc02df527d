#pragma once

// Generalized-ICP between plane-feature clouds (distribution-to-distribution
// cost with plane-regularized covariances), solved by Gauss-Newton on SE(3).

#include <span>
#include <vector>

#include "legslam/geometry.hpp"
#include "legslam/kdtree.hpp"

namespace legslam {

struct CovariancePoint {
  Point3 position = Point3::Zero();
  Matrix3d covariance = Matrix3d::Identity();
};

/// Per-point k-NN covariance with its spectrum replaced by (epsilon, 1, 1)
/// in the local eigenbasis. Throws InsufficientPoints when cloud < k.
std::vector<CovariancePoint> estimate_point_covariances(std::span<const Point3> cloud, int k,
                                                        double epsilon = 1e-3);

/// Registration target: covariance points plus their kd-tree.
class GicpTarget {
 public:
  GicpTarget() = default;
  explicit GicpTarget(std::vector<CovariancePoint> points);

  const std::vector<CovariancePoint>& points() const { return points_; }
  const KdTree3& tree() const { return tree_; }
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<CovariancePoint> points_;
  KdTree3 tree_;
};

struct GicpConfig {
  int max_iters = 30;
  double correspondence_radius = 0.5;
  double tolerance = 1e-6;
  int min_correspondences = 10;
  int min_points = 20;
  /// Hessian condition number above which the result is flagged weak. With
  /// plane-regularized covariances an unconstrained direction keeps only the
  /// in-plane weight, about epsilon times a constrained one, so the bound
  /// sits well between the two.
  double weak_condition = 100.0;
};

struct GicpResult {
  Se3d pose;  // maps source points into the target frame
  bool converged = false;
  bool weakly_constrained = false;
  int iterations = 0;
  double final_cost = 0.0;
  int inliers = 0;
  /// Gauss-Newton Hessian at the solution, tangent [translation; rotation].
  Matrix6d information = Matrix6d::Zero();
  /// Cost at the start and after every accepted iteration.
  std::vector<double> cost_trace;
};

/// Minimizes sum d^T (C_t + R C_s R^T)^-1 d over nearest-neighbor pairs within
/// the radius. Non-convergence is flagged in the result; throws
/// InsufficientPoints for clouds below min_points and TooFewCorrespondences
/// when fewer than min_correspondences pairs are found.
GicpResult gicp_align(std::span<const CovariancePoint> source, const GicpTarget& target, const Se3d& T_init,
                      const GicpConfig& config = {});

}  // namespace legslam
