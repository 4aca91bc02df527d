#include "legslam/factors.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>

namespace legslam {

HuberResult huber_weight(double s, double delta) {
  if (!(s >= 0.0) || !(delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "huber needs s >= 0 and delta > 0");
  if (s <= delta) return {s * s, 1.0};
  return {2.0 * delta * s - delta * delta, delta / s};
}

std::optional<ReprojResidual> reproj_residual(const Se3d& T_w_c, const Point3& p_w, const Pixel2& observed,
                                              const CameraIntrinsics& k, double min_depth) {
  const Matrix3d R_cw = T_w_c.rotation().transpose();
  const Point3 p_c = R_cw * (p_w - T_w_c.translation());
  if (!(p_c.z() > min_depth)) return std::nullopt;
  const double iz = 1.0 / p_c.z();
  ReprojResidual out;
  out.r = observed - Pixel2(k.fx * p_c.x() * iz + k.cx, k.fy * p_c.y() * iz + k.cy);
  Eigen::Matrix<double, 2, 3> Jpi;
  Jpi << k.fx * iz, 0.0, -k.fx * p_c.x() * iz * iz, 0.0, k.fy * iz, -k.fy * p_c.y() * iz * iz;
  const Eigen::Matrix<double, 2, 3> A = -Jpi * R_cw;
  // p_c = T^-1 exp(-delta) p_w  =>  d p_c / d delta = R_cw [-I, p_w^]
  out.J_pose.leftCols<3>() = -A;
  out.J_pose.rightCols<3>() = A * skew(p_w);
  out.J_point = A;
  return out;
}

DepthResidual depth_residual(const Se3d& T_w_c, const Point3& p_w, double measured_depth) {
  const Matrix3d R_cw = T_w_c.rotation().transpose();
  DepthResidual out;
  out.r = measured_depth - R_cw.row(2).dot(p_w - T_w_c.translation());
  const Eigen::Matrix<double, 1, 3> a = -R_cw.row(2);
  out.J_pose.leftCols<3>() = -a;
  out.J_pose.rightCols<3>() = a * skew(p_w);
  out.J_point = a;
  return out;
}

PlaneResidual point_to_plane_residual(const Se3d& T_w_c, const Point3& p_c, const Vector3d& n_w, const Point3& q_w) {
  const Point3 P = T_w_c * p_c;
  PlaneResidual out;
  out.r = n_w.dot(P - q_w);
  out.J_pose.leftCols<3>() = n_w.transpose();
  out.J_pose.rightCols<3>() = -n_w.transpose() * skew(P);
  return out;
}

RelativePoseResidual relative_pose_residual(const Se3d& T_i, const Se3d& T_j, const Se3d& measured,
                                            const Se3d& extrinsic) {
  const Se3d A_i = T_i * extrinsic;
  const Se3d A_j = T_j * extrinsic;
  const Se3d B = measured.inverse() * A_i.inverse();
  RelativePoseResidual out;
  out.r = se3_log(B * A_j);
  // exp(d) on A_j enters as exp(Ad_B d) on the left of the error.
  const Matrix6d J = se3_left_jacobian_inverse(out.r) * se3_adjoint(B);
  out.J_j = J;
  out.J_i = -J;
  return out;
}

ImuResidual imu_residual(const NavState& si, const NavState& sj, const ImuPreintegration& pre,
                         const Vector3d& gravity) {
  const double dt = pre.dt();
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "IMU residual needs a positive interval");
  const Matrix3d Ri = si.pose.rotation();
  const Matrix3d Rj = sj.pose.rotation();
  const Matrix3d RiT = Ri.transpose();
  const Vector3d& pi = si.pose.translation();
  const Vector3d& pj = sj.pose.translation();

  const Vector3d dbg = si.bias.gyro - pre.linearization_bias().gyro;
  const Vector3d psi = pre.dR_dbg() * dbg;
  const Matrix3d dR = pre.delta_rotation() * so3_exp<double>(psi).toRotationMatrix();
  const Vector3d u = sj.velocity - si.velocity - gravity * dt;
  const Vector3d w = pj - pi - si.velocity * dt - 0.5 * gravity * dt * dt;

  ImuResidual out;
  const Vector3d rR = so3_log<double>((dR.transpose() * RiT * Rj).eval());
  out.r.segment<3>(0) = rR;
  out.r.segment<3>(3) = RiT * u - pre.corrected_velocity(si.bias);
  out.r.segment<3>(6) = RiT * w - pre.corrected_position(si.bias);

  const Matrix3d JrInv = so3_right_jacobian_inverse<double>(rR);
  // Left perturbation moves positions too: p <- p + rho - p^ phi.
  out.J_pose_i.block<3, 3>(0, 3) = -JrInv * Rj.transpose();
  out.J_pose_i.block<3, 3>(3, 3) = RiT * skew(u);
  out.J_pose_i.block<3, 3>(6, 0) = -RiT;
  out.J_pose_i.block<3, 3>(6, 3) = RiT * (skew(w) + skew(pi));

  out.J_pose_j.block<3, 3>(0, 3) = JrInv * Rj.transpose();
  out.J_pose_j.block<3, 3>(6, 0) = RiT;
  out.J_pose_j.block<3, 3>(6, 3) = -RiT * skew(pj);

  out.J_vel_i.block<3, 3>(3, 0) = -RiT;
  out.J_vel_i.block<3, 3>(6, 0) = -RiT * dt;
  out.J_vel_j.block<3, 3>(3, 0) = RiT;

  out.J_bias_i.block<3, 3>(0, 0) =
      -so3_left_jacobian_inverse<double>(rR) * so3_right_jacobian<double>(psi) * pre.dR_dbg();
  out.J_bias_i.block<3, 3>(3, 0) = -pre.dV_dbg();
  out.J_bias_i.block<3, 3>(3, 3) = -pre.dV_dba();
  out.J_bias_i.block<3, 3>(6, 0) = -pre.dP_dbg();
  out.J_bias_i.block<3, 3>(6, 3) = -pre.dP_dba();
  return out;
}

Matrix6d bias_walk_covariance(const ImuNoise& noise, double dt) {
  Matrix6d C = Matrix6d::Zero();
  C.topLeftCorner<3, 3>().diagonal().setConstant(noise.gyro_random_walk * noise.gyro_random_walk * dt);
  C.bottomRightCorner<3, 3>().diagonal().setConstant(noise.accel_random_walk * noise.accel_random_walk * dt);
  return C;
}

Matrix6d gicp_factor_information(const Matrix6d& H, const Se3d& measured, double scale, double weak_ratio) {
  Eigen::SelfAdjointEigenSolver<Matrix6d> eig(0.5 * (H + H.transpose()));
  Vector6d ev = eig.eigenvalues();
  const double hi = std::max(ev(5), 0.0);
  for (int i = 0; i < 6; ++i) {
    if (ev(i) < weak_ratio * hi) ev(i) = 0.0;
  }
  const Matrix6d Hc = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  // r ~ Ad_{Z^-1} delta for a left perturbation delta of the measurement Z.
  const Matrix6d Ad = se3_adjoint(measured);
  return scale * Ad.transpose() * Hc * Ad;
}

bool should_add_depth_factors(int valid_observations, int threshold) {
  return valid_observations < threshold;
}

}  // namespace legslam
