#pragma once

// Small helpers shared by the unit tests: random poses, finite differences
// and synthetic scenes with known geometry.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "legslam/geometry.hpp"

namespace legslam::testing {

inline Vector3d random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vector3d(u(rng), u(rng), u(rng));
}

inline Se3d random_pose(std::mt19937_64& rng, double t_scale = 1.0, double max_angle = 1.0) {
  Vector3d axis = random_vec(rng).normalized();
  std::uniform_real_distribution<double> ang(-max_angle, max_angle);
  return Se3d(so3_exp<double>(axis * ang(rng)), random_vec(rng, t_scale));
}

/// Central-difference Jacobian of f at x (column i = d f / d x_i).
inline Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

/// max |A - B| / max(1, max |B|): the relative error used by the gradient gate.
inline double relative_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  const double scale = std::max(1.0, B.cwiseAbs().maxCoeff());
  return (A - B).cwiseAbs().maxCoeff() / scale;
}

inline CameraIntrinsics vga_camera() {
  CameraIntrinsics k;
  k.fx = 525.0;
  k.fy = 525.0;
  k.cx = 319.5;
  k.cy = 239.5;
  k.width = 640;
  k.height = 480;
  k.depth_scale = 5000.0;
  return k;
}

}  // namespace legslam::testing
