#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "legslam/depth_plane.hpp"
#include "test_support.hpp"

using namespace legslam;
using legslam::testing::vga_camera;

namespace {

struct Plane {
  Vector3d n;  // camera frame, n . X = d
  double d;
};

// Per-pixel ray/plane depth of the nearest plane in front of the camera.
double ray_depth(const CameraIntrinsics& k, double u, double v, const std::vector<Plane>& planes,
                 int* which = nullptr) {
  const Vector3d ray((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const double den = planes[i].n.dot(ray);
    if (std::abs(den) < 1e-12) continue;
    const double z = planes[i].d / den;
    if (z > 0.0 && z < best) {
      best = z;
      if (which) *which = static_cast<int>(i);
    }
  }
  return best;
}

DepthImage render(const CameraIntrinsics& k, const std::vector<Plane>& planes) {
  DepthImage img(k.height, k.width);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const double z = ray_depth(k, u, v, planes);
      img(v, u) = std::isfinite(z) && z < 10.0 ? static_cast<std::uint16_t>(std::lround(z * k.depth_scale)) : 0;
    }
  }
  return img;
}

}  // namespace

TEST(DepthToCloud, UniformPlaneStride8) {
  const auto k = vga_camera();
  DepthImage img = DepthImage::Constant(480, 640, static_cast<std::uint16_t>(2.0 * k.depth_scale));
  const auto cloud = depth_to_cloud(img, k, 8);
  ASSERT_EQ(cloud.size(), 4800u);
  for (const auto& p : cloud) EXPECT_DOUBLE_EQ(p.z(), 2.0);
}

TEST(DepthToCloud, AllZeroIsEmpty) {
  const auto k = vga_camera();
  try {
    depth_to_cloud(DepthImage::Zero(480, 640), k, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyCloud);
  }
}

TEST(DepthToCloud, CountMatchesPixelScan) {
  const auto k = vga_camera();
  // Floor and a tilted wall; far regions exceed max depth.
  const std::vector<Plane> planes = {{Vector3d(0, -1, 0).normalized(), -0.8},
                                     {Vector3d(0.3, 0, 1).normalized(), 4.0}};
  const DepthImage img = render(k, planes);
  for (int stride : {1, 3, 8}) {
    std::size_t expected = 0;
    for (int v = 0; v < img.rows(); v += stride) {
      for (int u = 0; u < img.cols(); u += stride) {
        const double z = img(v, u) / k.depth_scale;
        if (z > kDefaultMinDepth && z < kDefaultMaxDepth) ++expected;
      }
    }
    EXPECT_EQ(depth_to_cloud(img, k, stride).size(), expected);
  }
}

TEST(AngularCell, OpticalAxisIsCenter) {
  const auto fov = AngularFov::symmetric(0.5, 0.4);
  const CellIndex c = angular_cell_index(Point3(0, 0, 2), fov, 16, 24);
  EXPECT_EQ(c.row, 8);
  EXPECT_EQ(c.col, 12);
}

TEST(AngularCell, BoundaryMapsToLastColumn) {
  const auto fov = AngularFov::symmetric(0.5, 0.4);
  const Point3 p(std::tan(0.5) * 3.0, 0.0, 3.0);
  EXPECT_EQ(angular_cell_index(p, fov, 16, 24).col, 23);
}

TEST(AngularCell, OutOfFov) {
  const auto fov = AngularFov::symmetric(0.5, 0.4);
  EXPECT_THROW(angular_cell_index(Point3(5, 0, 1), fov, 16, 24), Error);
  EXPECT_THROW(angular_cell_index(Point3(0, 0, -1), fov, 16, 24), Error);
}

TEST(AngularCell, MatchesDirectFormula) {
  const auto fov = AngularFov::symmetric(0.55, 0.42);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> a(-0.55, 0.55), t(-0.42, 0.42), z(0.2, 8.0);
  for (int i = 0; i < 1000; ++i) {
    const double alpha = a(rng), theta = t(rng), depth = z(rng);
    const Point3 p(std::tan(alpha) * depth, std::tan(theta) * depth, depth);
    // Scalar reimplementation of the binning.
    const double al = std::atan2(p.x(), p.z()), th = std::atan2(p.y(), p.z());
    const int col = std::min(23, static_cast<int>(std::floor((al + 0.55) / 1.10 * 24)));
    const int row = std::min(15, static_cast<int>(std::floor((th + 0.42) / 0.84 * 16)));
    const CellIndex c = angular_cell_index(p, fov, 16, 24);
    EXPECT_EQ(c.col, col);
    EXPECT_EQ(c.row, row);
  }
}

TEST(ExtractPlanePoints, SinglePlaneFillsCellsAndFitsNormal) {
  const auto k = vga_camera();
  const Plane wall{Vector3d(0.2, -0.1, 1.0).normalized(), 2.5};
  const PlaneExtractionConfig cfg;
  const auto features = extract_plane_features(render(k, {wall}), k, cfg);
  // Every cell sees the wall, so each contributes max_per_cell points.
  EXPECT_GE(features.size(), static_cast<std::size_t>(0.9 * cfg.rows * cfg.cols * cfg.max_per_cell));
  for (double s : features.smoothness) EXPECT_LT(s, cfg.smoothness_threshold);

  KdTree3 tree(features.points);
  PlaneFitConfig fit;
  fit.radius_cap = 1.0;
  int checked = 0;
  for (std::size_t i = 0; i < features.size(); i += 7) {
    const FittedPlane p = fit_plane_knn(features.points[i], tree, fit);
    if (!p.valid) continue;
    ++checked;
    EXPECT_LT(rad2deg(std::acos(std::min(1.0, std::abs(p.normal.dot(wall.n))))), 2.0);
  }
  EXPECT_GT(checked, 20);
}

TEST(ExtractPlanePoints, SingletonCellsAreSkipped) {
  const auto fov = AngularFov::symmetric(0.6, 0.45);
  std::vector<Point3> cloud;
  // One point per cell center.
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 24; ++c) {
      const double al = -0.6 + (c + 0.5) * 1.2 / 24, th = -0.45 + (r + 0.5) * 0.9 / 16;
      cloud.emplace_back(std::tan(al) * 3.0, std::tan(th) * 3.0, 3.0);
    }
  }
  EXPECT_TRUE(extract_plane_points(cloud, fov, PlaneExtractionConfig{}).empty());
}

TEST(ExtractPlanePoints, CornerSceneKeepsFacePoints) {
  const auto k = vga_camera();
  // Room corner: two walls meeting along a vertical edge plus a floor.
  const std::vector<Plane> planes = {{Vector3d(1, 0, 1).normalized(), 2.0},
                                     {Vector3d(-1, 0, 1).normalized(), 2.0},
                                     {Vector3d(0, -1, 0), -1.0}};
  const auto features = extract_plane_features(render(k, planes), k, PlaneExtractionConfig{});
  ASSERT_FALSE(features.empty());
  int on_face = 0;
  for (const auto& p : features.points) {
    // Distance to the nearest plane intersection line, measured as the
    // second-smallest plane distance.
    std::vector<double> d;
    for (const auto& pl : planes) d.push_back(std::abs(pl.n.dot(p) - pl.d));
    std::sort(d.begin(), d.end());
    if (d[1] > 0.02) ++on_face;
  }
  EXPECT_GE(on_face, static_cast<int>(0.9 * features.size()));
}

TEST(ExtractPlanePoints, Deterministic) {
  const auto k = vga_camera();
  const DepthImage img = render(k, {{Vector3d(0, 0, 1), 3.0}, {Vector3d(0, -1, 0), -1.0}});
  const auto a = extract_plane_features(img, k, PlaneExtractionConfig{});
  const auto b = extract_plane_features(img, k, PlaneExtractionConfig{});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.points[i], b.points[i]);
}

TEST(ExtractPlanePoints, NoisyPlanePointsStayNearPlane) {
  const auto k = vga_camera();
  const Plane wall{Vector3d(0, 0, 1), 3.0};
  DepthImage img = render(k, {wall});
  std::mt19937_64 rng(4);
  const double sigma = 0.001 + 0.0025 * 9.0;
  std::normal_distribution<double> noise(0.0, sigma);
  for (int v = 0; v < img.rows(); ++v) {
    for (int u = 0; u < img.cols(); ++u) {
      img(v, u) = static_cast<std::uint16_t>(std::lround((3.0 + noise(rng)) * k.depth_scale));
    }
  }
  const auto f = extract_plane_features(img, k, PlaneExtractionConfig{});
  ASSERT_FALSE(f.empty());
  int near = 0;
  for (const auto& p : f.points) near += std::abs(p.z() - 3.0) < 3.0 * sigma ? 1 : 0;
  EXPECT_GE(near, static_cast<int>(0.95 * f.size()));
}

TEST(FitPlane, ExactCoplanar) {
  std::vector<Point3> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(0.03 * (i % 4), 0.05 * (i / 4), 0.0);
  const KdTree3 tree(pts);
  const FittedPlane p = fit_plane_knn(Point3(0.05, 0.05, 0), tree, PlaneFitConfig{}, Point3(0, 0, 1));
  EXPECT_TRUE(p.valid);
  EXPECT_LT((p.normal - Vector3d(0, 0, 1)).norm(), 1e-9);
  EXPECT_NEAR(p.centroid.z(), 0.0, 1e-12);
  EXPECT_NEAR(p.planarity, 0.0, 1e-12);
  EXPECT_EQ(p.k_used, 10);
}

TEST(FitPlane, NoisyPlaneMatchesPcaOracle) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  std::normal_distribution<double> n(0.0, 0.001);
  std::vector<Point3> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(u(rng), u(rng), n(rng));
  const FittedPlane p = fit_plane_knn(Point3::Zero(), KdTree3(pts), PlaneFitConfig{}, Point3(0, 0, 5));
  // Closed-form PCA on the same 10 points.
  Point3 mean = Point3::Zero();
  for (const auto& q : pts) mean += q;
  mean /= 10.0;
  Matrix3d C = Matrix3d::Zero();
  for (const auto& q : pts) C += (q - mean) * (q - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Matrix3d> es(C);
  EXPECT_LT(std::acos(std::min(1.0, std::abs(es.eigenvectors().col(0).dot(p.normal)))), 1e-9);
  EXPECT_LT(rad2deg(std::acos(p.normal.z())), 1.0);
}

TEST(FitPlane, CollinearIsInvalid) {
  std::vector<Point3> pts;
  for (int i = 0; i < 12; ++i) pts.emplace_back(0.02 * i, 0.0, 0.0);
  EXPECT_FALSE(fit_plane_knn(Point3(0.1, 0, 0), KdTree3(pts), PlaneFitConfig{}).valid);
}

TEST(FitPlane, TooFewPoints) {
  std::vector<Point3> pts(5, Point3::Zero());
  try {
    fit_plane_knn(Point3::Zero(), KdTree3(pts), PlaneFitConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientNeighbors);
  }
}

TEST(FitPlane, RadiusCapInvalidates) {
  std::vector<Point3> pts;
  for (int i = 0; i < 10; ++i) pts.emplace_back(0.3 * i, 0.2 * (i % 2), 0.0);
  EXPECT_FALSE(fit_plane_knn(Point3::Zero(), KdTree3(pts), PlaneFitConfig{}).valid);
}

TEST(FitPlane, NormalInvariantUnderRigidMotion) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  std::normal_distribution<double> n(0.0, 0.002);
  std::vector<Point3> pts;
  for (int i = 0; i < 200; ++i) pts.emplace_back(u(rng), u(rng), n(rng));
  const Se3d T = legslam::testing::random_pose(rng, 2.0, 2.0);
  std::vector<Point3> moved;
  for (const auto& p : pts) moved.push_back(T * p);
  const FittedPlane a = fit_plane_knn(Point3(0.01, 0.02, 0), KdTree3(pts), PlaneFitConfig{});
  const FittedPlane b = fit_plane_knn(T * Point3(0.01, 0.02, 0), KdTree3(moved), PlaneFitConfig{});
  const Vector3d rn = T.rotation() * a.normal;
  EXPECT_LT(std::min((rn - b.normal).norm(), (rn + b.normal).norm()), 1e-6);
}

TEST(KdTree, KnnMatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::vector<Point3> pts;
  for (int i = 0; i < 500; ++i) pts.push_back(legslam::testing::random_vec(rng, 2.0));
  const KdTree3 tree(pts);
  for (int q = 0; q < 50; ++q) {
    const Point3 query = legslam::testing::random_vec(rng, 2.0);
    std::vector<std::pair<double, int>> brute;
    for (int i = 0; i < 500; ++i) brute.emplace_back((pts[static_cast<std::size_t>(i)] - query).squaredNorm(), i);
    std::sort(brute.begin(), brute.end());
    const auto nn = tree.knn(query, 10);
    ASSERT_EQ(nn.size(), 10u);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(nn[static_cast<std::size_t>(i)].index, brute[static_cast<std::size_t>(i)].second);
    EXPECT_EQ(tree.nearest(query, 10.0).index, brute[0].second);
  }
  EXPECT_EQ(tree.nearest(Point3(100, 0, 0), 1.0).index, -1);
}
