#include <gtest/gtest.h>

#include "legslam/factors.hpp"
#include "test_support.hpp"

using namespace legslam;
using namespace legslam::testing;

namespace {

constexpr int kConfigs = 100;
constexpr double kGate = 1e-5;
const Vector3d kGravity(0.0, 0.0, -kGravityMagnitude);

// Random smooth IMU stream at 200 Hz over `duration` seconds.
ImuPreintegration random_preintegration(std::mt19937_64& rng, double duration, const ImuBias& bias) {
  const Vector3d w0 = random_vec(rng, 0.8), w1 = random_vec(rng, 0.8);
  const Vector3d a0 = random_vec(rng, 2.0) + Vector3d(0, 0, 9.81), a1 = random_vec(rng, 2.0);
  std::vector<ImuSample> s;
  const int n = static_cast<int>(duration * 200.0);
  for (int i = 0; i <= n; ++i) {
    const double t = i / 200.0;
    s.push_back({t, w0 + w1 * std::sin(3.0 * t), a0 + a1 * std::cos(2.0 * t)});
  }
  return imu_preintegrate(s, bias, ImuNoise{});
}

NavState random_state(std::mt19937_64& rng) {
  NavState s;
  s.pose = random_pose(rng, 2.0, 3.0);
  s.velocity = random_vec(rng, 1.0);
  s.bias.gyro = random_vec(rng, 0.01);
  s.bias.accel = random_vec(rng, 0.1);
  return s;
}

Vector6d random_tangent(std::mt19937_64& rng, double scale) {
  Vector6d v;
  v << random_vec(rng, scale), random_vec(rng, scale);
  return v;
}

}  // namespace

TEST(Huber, ClosedFormValues) {
  const double d = 1.345;
  EXPECT_EQ(huber_weight(0.0, d).rho, 0.0);
  EXPECT_EQ(huber_weight(0.0, d).weight, 1.0);
  EXPECT_DOUBLE_EQ(huber_weight(d, d).rho, d * d);
  EXPECT_DOUBLE_EQ(huber_weight(d, d).weight, 1.0);
  EXPECT_DOUBLE_EQ(huber_weight(2 * d, d).weight, 0.5);
  EXPECT_DOUBLE_EQ(huber_weight(2 * d, d).rho, 3 * d * d);
  EXPECT_THROW(huber_weight(-1.0, d), Error);
  EXPECT_THROW(huber_weight(1.0, 0.0), Error);
}

TEST(Reprojection, PerfectObservationIsZero) {
  const auto k = vga_camera();
  const Se3d T(so3_exp<double>(Vector3d(0.1, -0.2, 0.3)), Vector3d(0.5, 0.1, -0.3));
  const Point3 p_c(0.3, -0.2, 2.5);
  const auto res = reproj_residual(T, T * p_c, project<double>(p_c, k), k);
  ASSERT_TRUE(res.has_value());
  EXPECT_LT(res->r.norm(), 1e-9);
}

TEST(Reprojection, LateralOffsetGivesFirstOrderPixelShift) {
  CameraIntrinsics k;
  k.fx = k.fy = 100.0;
  k.cx = k.cy = 50.0;
  k.width = k.height = 100;
  const auto res = reproj_residual(Se3d(), Point3(0.01, 0, 1.0), Pixel2(50, 50), k);
  ASSERT_TRUE(res.has_value());
  EXPECT_NEAR(res->r.x(), -1.0, 1e-12);
  EXPECT_NEAR(res->r.y(), 0.0, 1e-12);
}

TEST(Reprojection, BehindCameraIsInactive) {
  const auto k = vga_camera();
  EXPECT_FALSE(reproj_residual(Se3d(), Point3(0, 0, -1), Pixel2(0, 0), k).has_value());
}

TEST(Reprojection, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto k = vga_camera();
  double worst = 0.0;
  for (int c = 0; c < kConfigs; ++c) {
    const Se3d T = random_pose(rng, 2.0, 3.0);
    const Point3 p_w = T * (random_vec(rng, 1.0) + Vector3d(0, 0, 3.0));
    const Pixel2 obs = Pixel2(320, 240) + random_vec(rng, 20.0).head<2>();
    const auto res = reproj_residual(T, p_w, obs, k);
    ASSERT_TRUE(res.has_value());
    const auto f_pose = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return reproj_residual(se3_exp<double>(Vector6d(x)) * T, p_w, obs, k)->r;
    };
    const auto f_point = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return reproj_residual(T, Point3(p_w + x), obs, k)->r;
    };
    worst = std::max(worst, relative_error(res->J_pose, numeric_jacobian(f_pose, Eigen::VectorXd::Zero(6))));
    worst = std::max(worst, relative_error(res->J_point, numeric_jacobian(f_point, Eigen::VectorXd::Zero(3))));
  }
  EXPECT_LT(worst, kGate);
}

TEST(Depth, ResidualIsMeasuredMinusCameraDepth) {
  const Se3d T(Eigen::Matrix3d::Identity(), Vector3d(0, 0, -1.0));
  EXPECT_NEAR(depth_residual(T, Point3(0.3, 0.2, 2.0), 3.5).r, 0.5, 1e-12);
}

TEST(Depth, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int c = 0; c < kConfigs; ++c) {
    const Se3d T = random_pose(rng, 2.0, 3.0);
    const Point3 p_w = T * (random_vec(rng, 1.0) + Vector3d(0, 0, 3.0));
    const auto res = depth_residual(T, p_w, 3.0);
    const auto f_pose = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return Eigen::VectorXd::Constant(1, depth_residual(se3_exp<double>(Vector6d(x)) * T, p_w, 3.0).r);
    };
    const auto f_point = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return Eigen::VectorXd::Constant(1, depth_residual(T, Point3(p_w + x), 3.0).r);
    };
    worst = std::max(worst, relative_error(res.J_pose, numeric_jacobian(f_pose, Eigen::VectorXd::Zero(6))));
    worst = std::max(worst, relative_error(res.J_point, numeric_jacobian(f_point, Eigen::VectorXd::Zero(3))));
  }
  EXPECT_LT(worst, kGate);
}

TEST(PointToPlane, PointOnPlaneIsZero) {
  const Se3d T(so3_exp<double>(Vector3d(0.3, 0.1, -0.2)), Vector3d(1, 2, 3));
  const Vector3d n = Vector3d(1, 2, 2).normalized();
  const Point3 q(1, 1, 1);
  const Vector3d in_plane = n.cross(Vector3d::UnitX()).normalized();
  const Point3 P = q + 0.7 * in_plane;
  EXPECT_NEAR(point_to_plane_residual(T, T.inverse() * P, n, q).r, 0.0, 1e-12);
}

TEST(PointToPlane, DirectSubstitution) {
  const auto res = point_to_plane_residual(Se3d(), Point3(1, 2, 0.3), Vector3d::UnitZ(), Point3::Zero());
  EXPECT_NEAR(res.r, 0.3, 1e-15);
}

TEST(PointToPlane, ZeroResidualOverManyPlanes) {
  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const Se3d T = random_pose(rng, 3.0, 3.0);
    const Vector3d n = random_vec(rng).normalized();
    const Point3 q = random_vec(rng, 3.0);
    Vector3d t = n.unitOrthogonal();
    const Point3 P = q + random_vec(rng, 2.0).x() * t + random_vec(rng, 2.0).y() * n.cross(t);
    worst = std::max(worst, std::abs(point_to_plane_residual(T, T.inverse() * P, n, q).r));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(PointToPlane, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  double worst = 0.0;
  for (int c = 0; c < kConfigs; ++c) {
    const Se3d T = random_pose(rng, 3.0, 3.0);
    const Vector3d n = random_vec(rng).normalized();
    const Point3 q = random_vec(rng, 3.0);
    const Point3 p_c = random_vec(rng, 2.0);
    const auto res = point_to_plane_residual(T, p_c, n, q);
    const auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return Eigen::VectorXd::Constant(1, point_to_plane_residual(se3_exp<double>(Vector6d(x)) * T, p_c, n, q).r);
    };
    worst = std::max(worst, relative_error(res.J_pose, numeric_jacobian(f, Eigen::VectorXd::Zero(6))));
  }
  EXPECT_LT(worst, kGate);
}

TEST(RelativePose, ConsistentStatesGiveZero) {
  std::mt19937_64 rng(14);
  const Se3d Ti = random_pose(rng), Tj = random_pose(rng), E = random_pose(rng, 0.2, 0.5);
  const Se3d Z = (Ti * E).inverse() * (Tj * E);
  EXPECT_LT(relative_pose_residual(Ti, Tj, Z, E).r.norm(), 1e-12);
}

TEST(RelativePose, PerturbationMapsThroughAdjoint) {
  std::mt19937_64 rng(15);
  const Se3d Ti = random_pose(rng), Tj = random_pose(rng);
  const Se3d Z = Ti.inverse() * Tj;
  const Vector6d d = (Vector6d() << 1e-4, -2e-4, 3e-4, 2e-4, 1e-4, -1e-4).finished();
  const Vector6d r = relative_pose_residual(Ti, se3_exp<double>(d) * Tj, Z).r;
  // Oracle: Z^-1 Ti^-1 exp(d) Tj = exp(Ad_{Tj^-1} d) at consistency.
  const Vector6d expect = se3_adjoint(Tj.inverse()) * d;
  EXPECT_LT((r - expect).norm(), 10.0 * d.squaredNorm() * (1.0 + Tj.translation().squaredNorm()));
}

TEST(RelativePose, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(16);
  double worst = 0.0;
  for (int c = 0; c < kConfigs; ++c) {
    const Se3d Ti = random_pose(rng, 2.0, 3.0), Tj = random_pose(rng, 2.0, 3.0);
    const Se3d E = random_pose(rng, 0.2, 1.0);
    const Se3d Z = se3_exp<double>(random_tangent(rng, 0.3)) * (Ti * E).inverse() * (Tj * E);
    const auto res = relative_pose_residual(Ti, Tj, Z, E);
    const auto fi = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return relative_pose_residual(se3_exp<double>(Vector6d(x)) * Ti, Tj, Z, E).r;
    };
    const auto fj = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return relative_pose_residual(Ti, se3_exp<double>(Vector6d(x)) * Tj, Z, E).r;
    };
    worst = std::max(worst, relative_error(res.J_i, numeric_jacobian(fi, Eigen::VectorXd::Zero(6))));
    worst = std::max(worst, relative_error(res.J_j, numeric_jacobian(fj, Eigen::VectorXd::Zero(6))));
  }
  EXPECT_LT(worst, kGate);
}

TEST(LeggedRelative, TranslationOffsetAppearsInResidual) {
  const Se3d Ti(so3_exp<double>(Vector3d(0, 0, 0.7)), Vector3d(1, 2, 0));
  const Se3d Tj = Ti * Se3d(so3_exp<double>(Vector3d(0, 0, 0.1)), Vector3d(0.3, 0, 0));
  const Se3d Z = Ti.inverse() * Tj;
  const Se3d Tj_off(Tj.quaternion(), Tj.translation() + Vector3d(0.05, 0, 0));
  const Vector6d r = relative_pose_residual(Ti, Tj_off, Z).r;
  // The world offset seen in frame j: R_j^T (0.05, 0, 0), no rotation.
  EXPECT_LT((r.head<3>() - Tj.rotation().transpose() * Vector3d(0.05, 0, 0)).norm(), 1e-12);
  EXPECT_NEAR(r.head<3>().norm(), 0.05, 1e-12);
  EXPECT_LT(r.tail<3>().norm(), 1e-12);
}

TEST(Imu, ResidualAtTruthIsZero) {
  std::mt19937_64 rng(17);
  for (int c = 0; c < 10; ++c) {
    NavState si = random_state(rng);
    const auto pre = random_preintegration(rng, 0.3, si.bias);
    const NavState sj = predict_state(si, pre, kGravity);
    EXPECT_LT(imu_residual(si, sj, pre, kGravity).r.cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Imu, VelocityOffsetShowsInVelocityBlock) {
  std::mt19937_64 rng(18);
  const NavState si = random_state(rng);
  const auto pre = random_preintegration(rng, 0.2, si.bias);
  NavState sj = predict_state(si, pre, kGravity);
  sj.velocity += Vector3d(0.1, 0, 0);
  const Vector9d r = imu_residual(si, sj, pre, kGravity).r;
  EXPECT_LT((r.segment<3>(3) - si.pose.rotation().transpose() * Vector3d(0.1, 0, 0)).norm(), 1e-9);
  EXPECT_LT(r.segment<3>(0).norm(), 1e-9);
  EXPECT_LT(r.segment<3>(6).norm(), 1e-9);
}

TEST(Imu, JacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(19);
  double worst = 0.0;
  for (int c = 0; c < kConfigs; ++c) {
    const NavState si = random_state(rng);
    ImuBias lin = si.bias;
    lin.gyro += random_vec(rng, 0.005);
    lin.accel += random_vec(rng, 0.05);
    const auto pre = random_preintegration(rng, 0.25, lin);
    NavState sj = predict_state(si, pre, kGravity);
    sj.pose = se3_exp<double>(random_tangent(rng, 0.05)) * sj.pose;
    sj.velocity += random_vec(rng, 0.1);
    const auto res = imu_residual(si, sj, pre, kGravity);

    const auto r_of = [&](const NavState& a, const NavState& b) -> Eigen::VectorXd {
      return imu_residual(a, b, pre, kGravity).r;
    };
    const Eigen::VectorXd z6 = Eigen::VectorXd::Zero(6), z3 = Eigen::VectorXd::Zero(3);
    const auto Jpi = numeric_jacobian(
        [&](const Eigen::VectorXd& x) {
          NavState a = si;
          a.pose = se3_exp<double>(Vector6d(x)) * a.pose;
          return r_of(a, sj);
        },
        z6);
    const auto Jpj = numeric_jacobian(
        [&](const Eigen::VectorXd& x) {
          NavState b = sj;
          b.pose = se3_exp<double>(Vector6d(x)) * b.pose;
          return r_of(si, b);
        },
        z6);
    const auto Jvi = numeric_jacobian(
        [&](const Eigen::VectorXd& x) {
          NavState a = si;
          a.velocity += x;
          return r_of(a, sj);
        },
        z3);
    const auto Jvj = numeric_jacobian(
        [&](const Eigen::VectorXd& x) {
          NavState b = sj;
          b.velocity += x;
          return r_of(si, b);
        },
        z3);
    const auto Jbi = numeric_jacobian(
        [&](const Eigen::VectorXd& x) {
          NavState a = si;
          a.bias.gyro += x.head<3>();
          a.bias.accel += x.tail<3>();
          return r_of(a, sj);
        },
        z6);
    worst = std::max({worst, relative_error(res.J_pose_i, Jpi), relative_error(res.J_pose_j, Jpj),
                      relative_error(res.J_vel_i, Jvi), relative_error(res.J_vel_j, Jvj),
                      relative_error(res.J_bias_i, Jbi)});
  }
  EXPECT_LT(worst, kGate);
}

TEST(Imu, RejectsEmptyInterval) {
  EXPECT_THROW(imu_residual(NavState{}, NavState{}, ImuPreintegration{}, kGravity), Error);
}

TEST(GicpInformation, MapsThroughAdjointAndDropsWeakDirections) {
  std::mt19937_64 rng(20);
  const Se3d Z = random_pose(rng, 0.3, 0.3);
  Matrix6d H = Matrix6d::Identity() * 100.0;
  H(2, 2) = 1e-4;  // unconstrained translation along z
  const Matrix6d info = gicp_factor_information(H, Z, 2.0, 1e-3);
  Matrix6d expect_H = Matrix6d::Identity() * 100.0;
  expect_H(2, 2) = 0.0;
  const Matrix6d Ad = se3_adjoint(Z);
  EXPECT_LT((info - 2.0 * Ad.transpose() * expect_H * Ad).norm(), 1e-9);
}

TEST(DepthFactorPolicy, StrictThreshold) {
  EXPECT_TRUE(should_add_depth_factors(0));
  EXPECT_TRUE(should_add_depth_factors(39));
  EXPECT_FALSE(should_add_depth_factors(40));
  EXPECT_FALSE(should_add_depth_factors(10, 10));
  EXPECT_TRUE(should_add_depth_factors(9, 10));
}
