#include <gtest/gtest.h>

#include "legslam/synthetic.hpp"
#include "test_support.hpp"

using namespace legslam;
using namespace legslam::testing;

namespace {

const Vector3d kGravity(0.0, 0.0, -kGravityMagnitude);

SensorSpec quiet_sensor(int frames) {
  SensorSpec s = SensorSpec::defaults();
  s.num_frames = frames;
  s.imu_noise_enabled = false;
  s.depth_noise_enabled = false;
  s.gray_noise = 0.0;
  s.imu_bias = ImuBias{};
  s.legged.sigma_t_per_meter = 0.0;
  s.legged.sigma_r_per_meter = 0.0;
  s.legged.scale_error = 0.0;
  s.legged.yaw_per_meter = 0.0;
  return s;
}

}  // namespace

TEST(Spline, RejectsBadControlPoints) {
  std::vector<Vector3d> three(3, Vector3d::Zero());
  EXPECT_THROW(TrajectorySpline(0.0, 0.1, three, three), Error);
  std::vector<Vector3d> four(4, Vector3d::Zero());
  EXPECT_THROW(TrajectorySpline(0.0, 0.0, four, four), Error);
  EXPECT_THROW(TrajectorySpline(0.0, 0.1, four, three), Error);
}

TEST(Spline, DerivativesMatchFiniteDifferences) {
  const TrajectorySpline s = trajectory_by_name("walk", 5.0, 3);
  const double h = 1e-5;
  for (double t = 1.0; t < 4.0; t += 0.37) {
    const Vector3d v_fd = (s.position(t + h) - s.position(t - h)) / (2 * h);
    const Vector3d a_fd = (s.velocity(t + h) - s.velocity(t - h)) / (2 * h);
    EXPECT_LT((v_fd - s.velocity(t)).norm(), 1e-6);
    // Jerk jumps at knots, so the difference quotient carries an O(h) term.
    EXPECT_LT((a_fd - s.acceleration(t)).norm(), 1e-4);
    // Body rate: R^T dR/dt = [w]x.
    const Matrix3d dR = (s.rotation(t + h) - s.rotation(t - h)) / (2 * h);
    const Matrix3d W = s.rotation(t).transpose() * dR;
    const Vector3d w_fd(W(2, 1), W(0, 2), W(1, 0));
    EXPECT_LT((w_fd - s.angular_velocity_body(t)).norm(), 1e-6);
  }
}

TEST(Synthetic, StaticSequenceIsConstantAndReadsGravity) {
  const SceneSpec scene = textured_room_scene(1);
  const TrajectorySpline traj = trajectory_by_name("static", 3.0, 1);
  const auto seq = generate_synthetic_sequence(scene, traj, quiet_sensor(4), 1);
  ASSERT_EQ(seq.gray.size(), 4u);
  for (std::size_t i = 1; i < seq.gray.size(); ++i) {
    EXPECT_TRUE((seq.gray[i] == seq.gray[0]).all());
    EXPECT_TRUE((seq.depth[i] == seq.depth[0]).all());
  }
  for (const auto& s : seq.imu) {
    EXPECT_LT(s.gyro.norm(), 1e-12);
    EXPECT_LT((seq.ground_truth[0].rotation() * s.accel + kGravity).norm(), 1e-9);
  }
}

TEST(Synthetic, ConstantVelocityLineHasOnlyGravityReaction) {
  const TrajectorySpline traj = trajectory_by_name("line", 6.0, 1);
  // Well past the start-up blend the spline moves at constant velocity.
  for (double t = 2.5; t < 4.0; t += 0.1) {
    EXPECT_LT(traj.acceleration(t).norm(), 1e-9);
    EXPECT_LT((traj.specific_force_body(t, kGravity) - traj.rotation(t).transpose() * -kGravity).norm(), 1e-9);
  }
  SensorSpec sensor = quiet_sensor(36);
  sensor.first_frame_offset = 2.5;
  const auto seq = generate_synthetic_sequence(textured_room_scene(1), traj, sensor, 1);
  const auto& L = seq.legged;
  double t0 = 2.6, t1 = 3.6;
  const Se3d a = interpolate_legged(L, t0), b = interpolate_legged(L, t1);
  const double rate = (b.translation() - a.translation()).norm() / (t1 - t0);
  EXPECT_NEAR(rate, traj.velocity(3.0).norm(), 1e-6);
}

TEST(Synthetic, RenderedDepthMatchesRayPlaneIntersection) {
  const SceneSpec scene = textured_room_scene(2);
  const auto k = vga_camera();
  const Se3d T_w_c = trajectory_by_name("walk", 4.0, 2).pose(2.0) * default_body_from_camera();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uu(0, 639), vv(0, 479);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const double u = uu(rng), v = vv(rng);
    int hit = -1;
    const double z = cast_ray(scene, T_w_c, k, u, v, &hit);
    if (hit < 0) continue;
    // Oracle: intersect the ray with the hit rectangle's plane directly.
    const TexturedRect& r = scene.rects[static_cast<std::size_t>(hit)];
    const Vector3d d_c((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
    const Vector3d d_w = T_w_c.rotation() * d_c;
    const Vector3d n = r.normal();
    const double lambda = n.dot(r.origin - T_w_c.translation()) / n.dot(d_w);
    EXPECT_NEAR(z, lambda, 1e-6);
    ++checked;
  }
  EXPECT_GT(checked, 400);
}

TEST(Synthetic, PreintegratedImuReproducesSplineMotion) {
  const TrajectorySpline traj = trajectory_by_name("walk", 4.0, 5);
  SensorSpec sensor = quiet_sensor(30);
  const auto seq = generate_synthetic_sequence(textured_room_scene(5), traj, sensor, 5);
  double worst = 0.0;
  for (std::size_t i = 1; i < seq.frame_times.size(); ++i) {
    const double t0 = seq.frame_times[i - 1], t1 = seq.frame_times[i];
    const auto pre = imu_preintegrate(slice_imu(seq.imu, t0, t1), ImuBias{}, ImuNoise{});
    NavState s;
    s.pose = traj.pose(t0);
    s.velocity = traj.velocity(t0);
    const Se3d pred = predict_state(s, pre, kGravity).pose;
    worst = std::max(worst, (pred.translation() - traj.position(t1)).norm());
    worst = std::max(worst, rotation_angle(pred.inverse() * traj.pose(t1)));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Synthetic, DeterministicForSeed) {
  const SceneSpec scene = mixed_scene(3);
  const TrajectorySpline traj = trajectory_by_name("walk", 3.0, 3);
  SensorSpec sensor = SensorSpec::defaults();
  sensor.num_frames = 3;
  const auto a = generate_synthetic_sequence(scene, traj, sensor, 9);
  const auto b = generate_synthetic_sequence(scene, traj, sensor, 9);
  for (std::size_t i = 0; i < a.gray.size(); ++i) {
    EXPECT_TRUE((a.gray[i] == b.gray[i]).all());
    EXPECT_TRUE((a.depth[i] == b.depth[i]).all());
  }
  ASSERT_EQ(a.imu.size(), b.imu.size());
  for (std::size_t i = 0; i < a.imu.size(); ++i) EXPECT_EQ(a.imu[i].accel, b.imu[i].accel);
}

TEST(Synthetic, BurstsDistortAccelerometer) {
  const TrajectorySpline traj = trajectory_by_name("walk", 6.0, 4);
  SensorSpec sensor = quiet_sensor(60);
  sensor.imu_bursts = 3;
  const auto seq = generate_synthetic_sequence(textured_room_scene(4), traj, sensor, 4);
  double peak = 0.0;
  for (const auto& s : seq.imu) {
    peak = std::max(peak, (s.accel - traj.specific_force_body(s.timestamp, kGravity)).norm());
  }
  EXPECT_GT(peak, 30.0);
  EXPECT_LE(peak, 40.0 + 1e-9);
}

TEST(Scenes, LookupByName) {
  for (const char* n : {"room", "corridor", "plaza", "mixed"}) EXPECT_FALSE(scene_by_name(n, 1).rects.empty());
  EXPECT_THROW(scene_by_name("moon", 1), Error);
}
