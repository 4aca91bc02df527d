#include "legslam/gicp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace legslam {

std::vector<CovariancePoint> estimate_point_covariances(std::span<const Point3> cloud, int k, double epsilon) {
  if (k < 3 || static_cast<int>(cloud.size()) < k) {
    throw Error(ErrorCode::InsufficientPoints, "cloud smaller than neighbor count");
  }
  const KdTree3 tree(std::vector<Point3>(cloud.begin(), cloud.end()));
  std::vector<CovariancePoint> out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto nn = tree.knn(cloud[i], k);
    Point3 mean = Point3::Zero();
    for (const auto& n : nn) mean += tree.points()[static_cast<std::size_t>(n.index)];
    mean /= static_cast<double>(nn.size());
    Matrix3d C = Matrix3d::Zero();
    for (const auto& n : nn) {
      const Vector3d d = tree.points()[static_cast<std::size_t>(n.index)] - mean;
      C += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Matrix3d> eig(C);
    const Matrix3d& V = eig.eigenvectors();
    out[i].position = cloud[i];
    out[i].covariance = V * Vector3d(epsilon, 1.0, 1.0).asDiagonal() * V.transpose();
  }
  return out;
}

GicpTarget::GicpTarget(std::vector<CovariancePoint> points) : points_(std::move(points)) {
  std::vector<Point3> pos;
  pos.reserve(points_.size());
  for (const auto& p : points_) pos.push_back(p.position);
  tree_ = KdTree3(std::move(pos));
}

namespace {

struct Linearization {
  Matrix6d H = Matrix6d::Zero();
  Vector6d b = Vector6d::Zero();
  double cost = 0.0;
  int count = 0;
};

struct Pair {
  int source = 0;
  int target = 0;
};

std::vector<Pair> associate(std::span<const CovariancePoint> source, const GicpTarget& target, const Se3d& T,
                            double radius) {
  std::vector<Pair> pairs;
  pairs.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Neighbor nn = target.tree().nearest(T * source[i].position, radius);
    if (nn.index >= 0) pairs.push_back({static_cast<int>(i), nn.index});
  }
  return pairs;
}

// Order-independent in value; accumulated in input order for reproducibility.
Linearization linearize(std::span<const CovariancePoint> source, const GicpTarget& target, const Se3d& T,
                        const std::vector<Pair>& pairs, bool with_jacobian) {
  Linearization lin;
  const Matrix3d R = T.rotation();
  for (const Pair& pr : pairs) {
    const CovariancePoint& s = source[static_cast<std::size_t>(pr.source)];
    const CovariancePoint& t = target.points()[static_cast<std::size_t>(pr.target)];
    const Point3 ts = T * s.position;
    const Vector3d d = t.position - ts;
    const Matrix3d M = (t.covariance + R * s.covariance * R.transpose()).inverse();
    lin.cost += d.dot(M * d);
    ++lin.count;
    if (!with_jacobian) continue;
    Eigen::Matrix<double, 3, 6> J;
    J.leftCols<3>() = -Matrix3d::Identity();
    J.rightCols<3>() = skew(ts);
    lin.H.noalias() += J.transpose() * M * J;
    lin.b.noalias() += J.transpose() * M * d;
  }
  return lin;
}

}  // namespace

GicpResult gicp_align(std::span<const CovariancePoint> source, const GicpTarget& target, const Se3d& T_init,
                      const GicpConfig& config) {
  if (static_cast<int>(source.size()) < config.min_points || static_cast<int>(target.size()) < config.min_points) {
    throw Error(ErrorCode::InsufficientPoints, "GICP clouds below minimum size");
  }
  GicpResult res;
  Se3d T = T_init;
  double lambda = 1e-6;
  for (int it = 0; it < config.max_iters; ++it) {
    const auto pairs = associate(source, target, T, config.correspondence_radius);
    if (static_cast<int>(pairs.size()) < config.min_correspondences) {
      throw Error(ErrorCode::TooFewCorrespondences, "GICP found too few correspondences");
    }
    const Linearization lin = linearize(source, target, T, pairs, true);
    if (it == 0) res.cost_trace.push_back(lin.cost);
    res.iterations = it + 1;

    bool accepted = false;
    Vector6d delta = Vector6d::Zero();
    for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
      Matrix6d A = lin.H;
      A.diagonal() += lambda * lin.H.diagonal().cwiseMax(1e-12);
      delta = A.ldlt().solve(-lin.b);
      if (!delta.allFinite()) break;
      const Se3d T_new = se3_exp(delta) * T;
      // Scored with fresh correspondences so the trace is the true cost of
      // each accepted pose.
      const auto new_pairs = associate(source, target, T_new, config.correspondence_radius);
      if (static_cast<int>(new_pairs.size()) < config.min_correspondences) {
        lambda *= 10.0;
        continue;
      }
      const double new_cost = linearize(source, target, T_new, new_pairs, false).cost;
      if (new_cost <= lin.cost) {
        T = T_new;
        res.cost_trace.push_back(new_cost);
        lambda = std::max(1e-9, lambda / 10.0);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted || delta.norm() < config.tolerance) {
      // A rejected step at this point means the cost is already minimal.
      res.converged = true;
      break;
    }
  }

  const auto pairs = associate(source, target, T, config.correspondence_radius);
  if (static_cast<int>(pairs.size()) < config.min_correspondences) {
    throw Error(ErrorCode::TooFewCorrespondences, "GICP found too few correspondences");
  }
  const Linearization fin = linearize(source, target, T, pairs, true);
  res.pose = T;
  res.final_cost = fin.cost;
  res.inliers = fin.count;
  res.information = 0.5 * (fin.H + fin.H.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix6d> eig(res.information);
  const double lo = std::max(eig.eigenvalues()(0), 0.0);
  const double hi = eig.eigenvalues()(5);
  res.weakly_constrained = !(hi > 0.0) || lo * config.weak_condition < hi;
  return res;
}

}  // namespace legslam
