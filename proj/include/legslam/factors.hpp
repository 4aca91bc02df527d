#pragma once

// Residuals and analytic Jacobians for the factor graph.
//
// Poses are perturbed on the left (T <- exp(delta) T) with tangent
// [translation; rotation]; velocities and biases are perturbed additively.
// Because exp(delta) T_w_b T_b_c = exp(delta) T_w_c, a left perturbation of
// the body pose is the same perturbation of the camera pose, so the
// Jacobians below apply to either.

#include <optional>

#include "legslam/geometry.hpp"
#include "legslam/preintegration.hpp"

namespace legslam {

using Vector9d = Eigen::Matrix<double, 9, 1>;
using Matrix9d = Eigen::Matrix<double, 9, 9>;
using Matrix96d = Eigen::Matrix<double, 9, 6>;
using Matrix93d = Eigen::Matrix<double, 9, 3>;

struct HuberResult {
  double rho = 0.0;
  double weight = 1.0;
};

/// rho(s) = s^2 inside the knee, 2 delta s - delta^2 beyond; IRLS weight
/// min(1, delta / s).
HuberResult huber_weight(double s, double delta);

struct ReprojResidual {
  Vector2d r = Vector2d::Zero();
  Eigen::Matrix<double, 2, 6> J_pose = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 3> J_point = Eigen::Matrix<double, 2, 3>::Zero();
};

/// r = observed - project(T_w_c^-1 p_w). Empty when the point is not in
/// front of the camera.
std::optional<ReprojResidual> reproj_residual(const Se3d& T_w_c, const Point3& p_w, const Pixel2& observed,
                                              const CameraIntrinsics& k, double min_depth = kDefaultMinDepth);

struct DepthResidual {
  double r = 0.0;
  Eigen::Matrix<double, 1, 6> J_pose = Eigen::Matrix<double, 1, 6>::Zero();
  Eigen::Matrix<double, 1, 3> J_point = Eigen::Matrix<double, 1, 3>::Zero();
};

/// r = measured - z(T_w_c^-1 p_w), the camera-frame depth of a point seen by
/// an RGB-D sensor.
DepthResidual depth_residual(const Se3d& T_w_c, const Point3& p_w, double measured_depth);

struct PlaneResidual {
  double r = 0.0;
  Eigen::Matrix<double, 1, 6> J_pose = Eigen::Matrix<double, 1, 6>::Zero();
};

/// r = n^T (T_w_c p_c - q), Jacobian n^T [I, -P'^].
PlaneResidual point_to_plane_residual(const Se3d& T_w_c, const Point3& p_c, const Vector3d& n_w, const Point3& q_w);

struct RelativePoseResidual {
  Vector6d r = Vector6d::Zero();
  Matrix6d J_i = Matrix6d::Zero();
  Matrix6d J_j = Matrix6d::Zero();
};

/// r = log(Z^-1 (T_i E)^-1 (T_j E)) for a measured relative pose Z between
/// the frames T_i E and T_j E. E is the body-from-sensor extrinsic
/// (identity for body-frame measurements such as legged odometry).
RelativePoseResidual relative_pose_residual(const Se3d& T_i, const Se3d& T_j, const Se3d& measured,
                                            const Se3d& extrinsic = Se3d());

struct ImuResidual {
  /// [rotation; velocity; position], matching the preintegration covariance.
  Vector9d r = Vector9d::Zero();
  Matrix96d J_pose_i = Matrix96d::Zero();
  Matrix93d J_vel_i = Matrix93d::Zero();
  Matrix96d J_bias_i = Matrix96d::Zero();  // [gyro; accel]
  Matrix96d J_pose_j = Matrix96d::Zero();
  Matrix93d J_vel_j = Matrix93d::Zero();
};

/// Preintegration residual with first-order bias correction at state_i's
/// bias:
///   r_R = log(dR(b)^T R_i^T R_j)
///   r_v = R_i^T (v_j - v_i - g dt) - dV(b)
///   r_p = R_i^T (p_j - p_i - v_i dt - g dt^2 / 2) - dP(b)
ImuResidual imu_residual(const NavState& state_i, const NavState& state_j, const ImuPreintegration& preint,
                         const Vector3d& gravity);

/// Bias random-walk covariance over dt, [gyro; accel].
Matrix6d bias_walk_covariance(const ImuNoise& noise, double dt);

/// Information for a relative-pose residual from a GICP Hessian taken with
/// respect to a left perturbation of the measured pose. Directions whose
/// eigenvalue falls below weak_ratio times the largest one are zeroed, i.e.
/// their covariance is inflated without bound.
Matrix6d gicp_factor_information(const Matrix6d& gicp_information, const Se3d& measured, double scale,
                                 double weak_ratio);

/// True iff the valid visual observation count is strictly below threshold.
bool should_add_depth_factors(int valid_observations, int threshold = 40);

}  // namespace legslam
