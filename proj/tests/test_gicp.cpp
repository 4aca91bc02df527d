#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <chrono>

#include "legslam/error.hpp"
#include "legslam/gicp.hpp"
#include "test_support.hpp"

using namespace legslam;

namespace {

// Random points on bounded axis-aligned patches: floor z = 0 and, optionally,
// a wall x = 2 and a side wall y = 1.
std::vector<Point3> patch_cloud(int per_plane, int planes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> a(0.0, 2.0), b(-1.0, 1.0), h(0.0, 1.5);
  std::vector<Point3> pts;
  for (int i = 0; i < per_plane; ++i) pts.emplace_back(a(rng), b(rng), 0.0);
  if (planes >= 2) {
    for (int i = 0; i < per_plane; ++i) pts.emplace_back(2.0, b(rng), h(rng));
  }
  if (planes >= 3) {
    for (int i = 0; i < per_plane; ++i) pts.emplace_back(a(rng), 1.0, h(rng));
  }
  return pts;
}

std::vector<Point3> transformed(const Se3d& T, const std::vector<Point3>& pts) {
  std::vector<Point3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(T * p);
  return out;
}

double rotation_error(const Se3d& a, const Se3d& b) {
  return so3_log<double>((a.rotation().transpose() * b.rotation()).eval()).norm();
}

}  // namespace

TEST(GicpCovariance, PlanarNeighborhoodGetsEpsilonAlongNormal) {
  const auto pts = patch_cloud(400, 1, 1);
  const auto cov = estimate_point_covariances(pts, 10, 1e-3);
  for (std::size_t i = 0; i < cov.size(); i += 37) {
    EXPECT_NEAR(Vector3d::UnitZ().dot(cov[i].covariance * Vector3d::UnitZ()), 1e-3, 1e-9);
    Eigen::SelfAdjointEigenSolver<Matrix3d> eig(cov[i].covariance);
    EXPECT_NEAR(eig.eigenvalues()(1), 1.0, 1e-9);
    EXPECT_NEAR(eig.eigenvalues()(2), 1.0, 1e-9);
  }
}

TEST(GicpCovariance, TooFewPointsThrows) {
  const std::vector<Point3> pts(5, Point3::Zero());
  try {
    estimate_point_covariances(pts, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientPoints);
  }
}

TEST(Gicp, SelfAlignmentIsIdentity) {
  const auto pts = patch_cloud(800, 2, 2);
  const auto cov = estimate_point_covariances(pts, 10);
  const GicpTarget target(cov);
  const GicpResult r = gicp_align(cov, target, Se3d());
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.pose.translation().norm(), 1e-8);
  EXPECT_LT(rotation_error(r.pose, Se3d()), 1e-8);
}

TEST(Gicp, RecoversTwoPlanePerturbation) {
  const auto start = std::chrono::steady_clock::now();
  const auto pts = patch_cloud(1500, 2, 3);
  const GicpTarget target(estimate_point_covariances(pts, 10));
  const Se3d T_true(so3_exp<double>(Vector3d(1.0, -2.0, 0.5).normalized() * deg2rad(5.0)),
                    Vector3d(0.06, -0.05, 0.06).normalized() * 0.1);
  // Source points are the target points seen from the perturbed frame.
  const auto src = estimate_point_covariances(transformed(T_true.inverse(), pts), 10);
  GicpConfig cfg;
  cfg.max_iters = 100;
  const GicpResult r = gicp_align(src, target, Se3d(), cfg);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(rotation_error(r.pose, T_true), 1e-3);
  EXPECT_LT((r.pose.translation() - T_true.translation()).norm(), 1e-3);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 5.0);
}

TEST(Gicp, InverseAlignmentIsConsistent) {
  const auto pts = patch_cloud(1000, 3, 4);
  const Se3d T(so3_exp<double>(Vector3d(0.02, 0.03, -0.04)), Vector3d(0.05, -0.03, 0.02));
  const auto a = estimate_point_covariances(pts, 10);
  const auto b = estimate_point_covariances(transformed(T.inverse(), pts), 10);
  const GicpResult ab = gicp_align(b, GicpTarget(a), Se3d());
  const GicpResult ba = gicp_align(a, GicpTarget(b), Se3d());
  const Se3d loop = ab.pose * ba.pose;
  EXPECT_LT(loop.translation().norm(), 1e-6);
  EXPECT_LT(rotation_error(loop, Se3d()), 1e-6);
}

TEST(Gicp, CostTraceIsMonotone) {
  const auto pts = patch_cloud(800, 3, 5);
  const Se3d T(so3_exp<double>(Vector3d(0.05, -0.02, 0.04)), Vector3d(0.08, 0.02, -0.05));
  std::vector<Point3> noisy = transformed(T.inverse(), pts);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 0.003);
  for (auto& p : noisy) p += Vector3d(g(rng), g(rng), g(rng));
  const GicpResult r = gicp_align(estimate_point_covariances(noisy, 10),
                                  GicpTarget(estimate_point_covariances(pts, 10)), Se3d());
  ASSERT_GE(r.cost_trace.size(), 2u);
  for (std::size_t i = 1; i < r.cost_trace.size(); ++i) EXPECT_LE(r.cost_trace[i], r.cost_trace[i - 1]);
  EXPECT_LT((r.pose.translation() - T.translation()).norm(), 0.01);
}

TEST(Gicp, DisjointCloudsThrow) {
  const auto pts = patch_cloud(300, 2, 7);
  const auto far = transformed(Se3d(Matrix3d::Identity(), Vector3d(10, 0, 0)), pts);
  try {
    gicp_align(estimate_point_covariances(far, 10), GicpTarget(estimate_point_covariances(pts, 10)), Se3d());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewCorrespondences);
  }
}

TEST(Gicp, TooSmallCloudThrows) {
  const auto pts = patch_cloud(12, 1, 8);
  const auto cov = estimate_point_covariances(pts, 5);
  try {
    gicp_align(cov, GicpTarget(cov), Se3d());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientPoints);
  }
}

TEST(Gicp, SinglePlaneIsFlaggedWeak) {
  const auto pts = patch_cloud(1000, 1, 9);
  const auto cov = estimate_point_covariances(pts, 10);
  const GicpResult r = gicp_align(cov, GicpTarget(cov), Se3d());
  EXPECT_TRUE(r.weakly_constrained);
  // Oracle: in-plane translation sees only the in-plane covariance weight
  // 1/(1+1), the normal direction 1/(2 eps); their ratio is eps = 1e-3.
  Eigen::SelfAdjointEigenSolver<Matrix3d> tr(r.information.topLeftCorner<3, 3>().eval());
  EXPECT_LE(tr.eigenvalues()(0), 1e-3 * (1.0 + 1e-9) * tr.eigenvalues()(2));
  EXPECT_LE(tr.eigenvalues()(1), 1e-3 * (1.0 + 1e-9) * tr.eigenvalues()(2));
  EXPECT_GT(tr.eigenvalues()(1), 0.0);
  // Yaw about the plane normal is the third null-ish direction.
  const Vector6d yaw = (Vector6d() << 0, 0, 0, 0, 0, 1).finished();
  const Vector6d roll = (Vector6d() << 0, 0, 0, 1, 0, 0).finished();
  EXPECT_LT(yaw.dot(r.information * yaw), 1e-2 * roll.dot(r.information * roll));
}

TEST(Gicp, ThreePlaneCornerIsWellConstrained) {
  const auto pts = patch_cloud(800, 3, 10);
  const auto cov = estimate_point_covariances(pts, 10);
  const GicpResult r = gicp_align(cov, GicpTarget(cov), Se3d());
  EXPECT_FALSE(r.weakly_constrained);
}
