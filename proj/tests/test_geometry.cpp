#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include "legslam/geometry.hpp"
#include "test_support.hpp"

using namespace legslam;
using legslam::testing::random_pose;
using legslam::testing::random_vec;

namespace {

Eigen::Matrix4d twist_hat(const Vector6d& xi) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = skew(xi.tail<3>());
  m.topRightCorner<3, 1>() = xi.head<3>();
  return m;
}

CameraIntrinsics simple_camera(double cx, double cy) {
  CameraIntrinsics k;
  k.fx = k.fy = 100.0;
  k.cx = cx;
  k.cy = cy;
  k.width = 640;
  k.height = 480;
  return k;
}

}  // namespace

TEST(Project, OpticalAxisHitsPrincipalPoint) {
  const Pixel2 px = project(Point3(0, 0, 1), simple_camera(0, 0));
  EXPECT_DOUBLE_EQ(px.x(), 0.0);
  EXPECT_DOUBLE_EQ(px.y(), 0.0);
}

TEST(Project, KnownPoint) {
  const Pixel2 px = project(Point3(1, 2, 4), simple_camera(320, 240));
  EXPECT_DOUBLE_EQ(px.x(), 345.0);
  EXPECT_DOUBLE_EQ(px.y(), 290.0);
}

TEST(Project, RejectsZeroDepth) {
  try {
    project(Point3(0, 0, 0), simple_camera(320, 240));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DepthTooSmall);
  }
}

TEST(Unproject, KnownValues) {
  const auto k = simple_camera(320, 240);
  EXPECT_TRUE(unproject(Pixel2(320, 240), 2.0, k).isApprox(Point3(0, 0, 2)));
  EXPECT_LT((unproject(Pixel2(345, 290), 4.0, k) - Point3(1, 2, 4)).norm(), 1e-12);
  EXPECT_THROW(unproject(Pixel2(100, 100), 0.0, k), Error);
}

TEST(Unproject, RoundTripOverImage) {
  const auto k = legslam::testing::vga_camera();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 639.0), v(0.0, 479.0), d(0.1, 10.0);
  for (int i = 0; i < 10000; ++i) {
    const Pixel2 px(u(rng), v(rng));
    EXPECT_LT((project(unproject(px, d(rng), k), k) - px).norm(), 1e-9);
  }
}

TEST(CameraIntrinsics, Validation) {
  auto k = simple_camera(320, 240);
  EXPECT_NO_THROW(k.validate());
  k.cx = 640;
  EXPECT_THROW(k.validate(), Error);
}

TEST(Se3, ExpOfZeroIsIdentity) {
  const Se3d T = se3_exp<double>(Vector6d::Zero());
  EXPECT_LT(rotation_angle(T), 1e-15);
  EXPECT_LT(T.translation().norm(), 1e-15);
}

TEST(Se3, QuarterTurnAboutZ) {
  Vector6d xi = Vector6d::Zero();
  xi(5) = kPi / 2;
  const Se3d T = se3_exp(xi);
  EXPECT_LT((T * Point3(1, 0, 0) - Point3(0, 1, 0)).norm(), 1e-12);
  EXPECT_LT(T.translation().norm(), 1e-15);
}

TEST(Se3, ExpMatchesMatrixExponential) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    Vector6d xi;
    xi.head<3>() = random_vec(rng, 2.0);
    xi.tail<3>() = random_vec(rng).normalized() * 0.3;
    const Eigen::Matrix4d ref = twist_hat(xi).exp();
    EXPECT_LT((se3_exp(xi).matrix() - ref).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((se3_log(se3_exp(xi)) - xi).norm(), 1e-9);
  }
}

TEST(Se3, LogExpRoundTripUpToLargeAngles) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> ang(0.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    Vector6d xi;
    xi.head<3>() = random_vec(rng, 3.0);
    xi.tail<3>() = random_vec(rng).normalized() * ang(rng);
    EXPECT_LT((se3_log(se3_exp(xi)) - xi).norm(), 1e-9);
  }
}

TEST(Se3, SmallAngleBranch) {
  Vector6d xi;
  xi << 0.1, -0.2, 0.3, 1e-10, -2e-10, 3e-10;
  EXPECT_LT((se3_log(se3_exp(xi)) - xi).norm(), 1e-15);
}

TEST(Se3, ComposeWithInverseIsIdentity) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Se3d T = random_pose(rng, 5.0, 3.0);
    const Se3d I = compose(T, inverse(T));
    EXPECT_LT(rotation_angle(I), 1e-10);
    EXPECT_LT(I.translation().norm(), 1e-10);
  }
}

TEST(Se3, TransformPointBasics) {
  const Point3 p(0.3, -1.0, 2.0);
  EXPECT_TRUE(transform_point(Se3d::Identity(), p).isApprox(p));
  EXPECT_LT((transform_point(Se3d::Translation(Vector3d(1, 0, 0)), Point3(Point3::Zero())) - Point3(1, 0, 0)).norm(),
            1e-15);
}

TEST(Se3, CompositionMatchesMatrixProduct) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 100; ++i) {
    const Se3d A = random_pose(rng), B = random_pose(rng), C = random_pose(rng);
    const Point3 p = random_vec(rng, 3.0);
    EXPECT_LT((transform_point(compose(A, B), p) - transform_point(A, transform_point(B, p))).norm(), 1e-10);
    const Eigen::Matrix4d ref = A.matrix() * B.matrix() * C.matrix();
    EXPECT_LT((compose(compose(A, B), C).matrix() - ref).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((compose(A, compose(B, C)).matrix() - ref).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Se3, QuaternionStaysNormalizedOverLongChains) {
  std::mt19937_64 rng(9);
  Se3d T;
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    T = T * random_pose(rng, 0.01, 0.05);
    worst = std::max(worst, std::abs(T.quaternion().norm() - 1.0));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Se3, AdjointConjugation) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 100; ++i) {
    const Se3d T = random_pose(rng, 2.0, 2.0);
    Vector6d x;
    x.head<3>() = random_vec(rng, 0.5);
    x.tail<3>() = random_vec(rng, 0.5);
    const Se3d lhs = se3_exp<double>(se3_adjoint(T) * x);
    const Se3d rhs = T * se3_exp(x) * T.inverse();
    EXPECT_LT((lhs.matrix() - rhs.matrix()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Se3, JacobianInversesAreInverses) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    Vector6d xi;
    xi.head<3>() = random_vec(rng);
    xi.tail<3>() = random_vec(rng, 1.5);
    EXPECT_LT((se3_left_jacobian(xi) * se3_left_jacobian_inverse(xi) - Matrix6d::Identity()).norm(), 1e-9);
    EXPECT_LT((se3_right_jacobian(xi) * se3_right_jacobian_inverse(xi) - Matrix6d::Identity()).norm(), 1e-9);
  }
}

TEST(Se3, InterpolateEndpoints) {
  std::mt19937_64 rng(12);
  const Se3d a = random_pose(rng), b = random_pose(rng);
  EXPECT_LT((interpolate(a, b, 0.0).matrix() - a.matrix()).norm(), 1e-12);
  EXPECT_LT((interpolate(a, b, 1.0).matrix() - b.matrix()).norm(), 1e-12);
}
