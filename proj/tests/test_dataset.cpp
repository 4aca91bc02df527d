#include <gtest/gtest.h>

#include <fstream>

#include "legslam/dataset.hpp"
#include "test_support.hpp"

using namespace legslam;
using namespace legslam::testing;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("legslam_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

// Oracle: every stamp of `a` paired with its nearest stamp of `b` when that
// is within the tolerance (valid when nearest partners are unique).
std::vector<std::pair<int, int>> brute_force_nearest(const std::vector<double>& a, const std::vector<double>& b,
                                                     double tol) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    int best = -1;
    double bd = tol;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (std::abs(a[i] - b[j]) <= bd) {
        bd = std::abs(a[i] - b[j]);
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) out.emplace_back(static_cast<int>(i), best);
  }
  return out;
}

// Tiny TUM-layout directory with blank images.
std::filesystem::path make_tum_dir(const std::string& name, double depth_shift) {
  const auto dir = scratch(name);
  std::filesystem::create_directories(dir / "rgb");
  std::filesystem::create_directories(dir / "depth");
  std::string rgb = "# color images\n", depth = "# depth maps\n";
  GrayImage g = GrayImage::Constant(8, 8, 100);
  DepthImage d = DepthImage::Constant(8, 8, 5000);
  for (int i = 0; i < 5; ++i) {
    char a[32], b[32];
    std::snprintf(a, sizeof a, "%.6f", 10.0 + i / 30.0);
    std::snprintf(b, sizeof b, "%.6f", 10.0 + i / 30.0 + depth_shift);
    write_png(dir / "rgb" / (std::string(a) + ".png"), g);
    write_png(dir / "depth" / (std::string(b) + ".png"), d);
    rgb += std::string(a) + " rgb/" + a + ".png\n";
    depth += std::string(b) + " depth/" + b + ".png\n";
  }
  write_text(dir / "rgb.txt", rgb);
  write_text(dir / "depth.txt", depth);
  return dir;
}

}  // namespace

TEST(Association, PerfectPairsDropNothing) {
  const auto dir = make_tum_dir("perfect", 0.0);
  const SequenceManifest m = load_tum_sequence(dir);
  EXPECT_EQ(m.frames.size(), 5u);
  EXPECT_EQ(m.dropped, 0);
  EXPECT_FALSE(m.ground_truth.has_value());
  EXPECT_DOUBLE_EQ(m.camera.depth_scale, 5000.0);
}

TEST(Association, LargeShiftHasNoPairs) {
  const auto dir = make_tum_dir("shifted", 0.5);
  try {
    load_tum_sequence(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoAssociations);
  }
}

TEST(Association, MissingIndexFile) {
  const auto dir = scratch("missing");
  try {
    load_tum_sequence(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingIndexFile);
  }
  EXPECT_THROW(load_tum_sequence(dir / "nope"), Error);
}

TEST(Association, JitteredStampsMatchBruteForce) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> jitter(-0.005, 0.005);
  std::vector<double> a, b;
  for (int i = 0; i < 300; ++i) {
    a.push_back(i / 30.0 + jitter(rng));
    if (i % 7 != 3) b.push_back(i / 30.0 + jitter(rng));  // some depth frames missing
  }
  const auto got = associate_timestamps(a, b);
  EXPECT_EQ(got, brute_force_nearest(a, b, kDefaultAssociationOffset));
  EXPECT_EQ(got.size(), b.size());
}

TEST(Association, IsSymmetric) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> jitter(-0.015, 0.015);
  std::vector<double> a, b;
  for (int i = 0; i < 200; ++i) {
    a.push_back(i / 30.0 + jitter(rng));
    b.push_back(i / 30.0 + jitter(rng));
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto ab = associate_timestamps(a, b);
  auto ba = associate_timestamps(b, a);
  for (auto& [i, j] : ba) std::swap(i, j);
  std::sort(ba.begin(), ba.end());
  EXPECT_EQ(ab, ba);
  for (std::size_t k = 1; k < ab.size(); ++k) EXPECT_GT(ab[k].second, ab[k - 1].second);
}

TEST(TrajectoryIo, RoundTrip) {
  std::mt19937_64 rng(3);
  Trajectory t;
  for (int i = 0; i < 50; ++i) t.push_back({1000.0 + i * 0.033, random_pose(rng, 3.0, 3.0)});
  const auto path = scratch("traj") / "t.txt";
  write_trajectory(t, path);
  const Trajectory r = read_trajectory(path);
  ASSERT_EQ(r.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_NEAR(r[i].timestamp, t[i].timestamp, 1e-6);
    EXPECT_LT((r[i].pose.translation() - t[i].pose.translation()).norm(), 1e-6 * std::sqrt(3.0));
    EXPECT_LT(rotation_angle(r[i].pose.inverse() * t[i].pose), 1e-5);
  }
}

TEST(TrajectoryIo, MalformedLineReportsLineNumber) {
  const auto path = scratch("bad") / "t.txt";
  write_text(path, "# header\n1.0 0 0 0 0 0 0 1\n2.0 0 0 zero 0 0 0 1\n");
  try {
    read_trajectory(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  try {
    read_trajectory(path.parent_path() / "absent.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}

TEST(TrajectoryIo, ParsesReferenceFormatFixture) {
  // Lines as published with the public RGB-D benchmark ground truth.
  const auto path = scratch("fixture") / "groundtruth.txt";
  write_text(path,
             "# ground truth trajectory\n"
             "# file: 'rgbd_dataset_freiburg1_xyz.bag'\n"
             "# timestamp tx ty tz qx qy qz qw\n"
             "1305031098.6659 1.3563 0.6305 1.6380 0.6132 0.5962 -0.3311 -0.3986\n"
             "1305031098.6758 1.3543 0.6306 1.6360 0.6129 0.5966 -0.3316 -0.3980\n");
  const Trajectory t = read_trajectory(path);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_DOUBLE_EQ(t[0].timestamp, 1305031098.6659);
  EXPECT_EQ(t[0].pose.translation(), Vector3d(1.3563, 0.6305, 1.6380));
  const Eigen::Quaterniond q = Eigen::Quaterniond(-0.3986, 0.6132, 0.5962, -0.3311).normalized();
  EXPECT_LT(q.angularDistance(t[0].pose.quaternion()), 1e-12);
}

TEST(TrajectoryIo, RejectsNonIncreasingStamps) {
  const auto path = scratch("order") / "t.txt";
  write_text(path, "2.0 0 0 0 0 0 0 1\n1.0 0 0 0 0 0 0 1\n");
  EXPECT_THROW(read_trajectory(path), Error);
}

TEST(CsvStreams, ImuAndLeggedRoundTrip) {
  const auto dir = scratch("csv");
  std::vector<ImuSample> imu;
  std::vector<LeggedOdomSample> leg;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    imu.push_back({i * 0.005, random_vec(rng), random_vec(rng, 10.0)});
    LeggedOdomSample s;
    s.timestamp = i * 0.005;
    s.pose = random_pose(rng);
    leg.push_back(s);
  }
  write_imu_csv(imu, dir / "imu.csv");
  write_legged_csv(leg, dir / "legged.csv");
  const auto imu2 = read_imu_csv(dir / "imu.csv");
  const auto leg2 = read_legged_csv(dir / "legged.csv");
  ASSERT_EQ(imu2.size(), imu.size());
  ASSERT_EQ(leg2.size(), leg.size());
  for (std::size_t i = 0; i < imu.size(); ++i) {
    EXPECT_LT((imu2[i].gyro - imu[i].gyro).norm(), 1e-8);
    EXPECT_LT((imu2[i].accel - imu[i].accel).norm(), 1e-8);
    EXPECT_LT((leg2[i].pose.translation() - leg[i].pose.translation()).norm(), 1e-8);
  }
  // Header-less files parse too.
  write_text(dir / "bare.csv", "0.0,0,0,0,0,0,9.81\n0.005,0,0,0,0,0,9.81\n");
  EXPECT_EQ(read_imu_csv(dir / "bare.csv").size(), 2u);
  write_text(dir / "short.csv", "timestamp,wx,wy,wz,ax,ay,az\n0.0,0,0,0,0,0\n");
  EXPECT_THROW(read_imu_csv(dir / "short.csv"), Error);
}

TEST(KeyValue, ParsesCommentsAndRejectsGarbage) {
  const auto dir = scratch("kv");
  write_text(dir / "a.txt", "# comment\nalpha = 1.5\n\nbeta=two   # trailing\n");
  const auto kv = read_key_value_file(dir / "a.txt");
  EXPECT_EQ(kv.at("alpha"), "1.5");
  EXPECT_EQ(kv.at("beta"), "two");
  write_text(dir / "b.txt", "alpha = 1\njust words\n");
  try {
    read_key_value_file(dir / "b.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
}

TEST(CameraFile, RoundTripAndUnknownKeys) {
  const auto dir = scratch("cam");
  CameraFile f;
  f.camera = vga_camera();
  f.T_b_c = Se3d(so3_exp<double>(Vector3d(0.1, 0.2, 0.3)), Vector3d(0.1, 0.0, 0.05));
  write_camera_file(f, dir / "camera.txt");
  const CameraFile g = read_camera_file(dir / "camera.txt");
  EXPECT_DOUBLE_EQ(g.camera.fx, 525.0);
  EXPECT_EQ(g.camera.width, 640);
  EXPECT_LT((g.T_b_c.translation() - f.T_b_c.translation()).norm(), 1e-6);
  write_text(dir / "bad.txt", "fx = 500\nfocal = 3\n");
  EXPECT_THROW(read_camera_file(dir / "bad.txt"), Error);
}
