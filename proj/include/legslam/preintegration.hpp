#pragma once

// IMU preintegration between frames, legged-odometry relative poses and the
// IMU divergence check that decides when legged constraints replace the IMU.
//
// Each sample interval integrates the midpoint-averaged, bias-corrected
// measurements held constant over the interval. Under that model the
// rotation, velocity and position increments have closed forms, so the
// result does not depend on how an interval is subdivided and the bias
// Jacobians are exact derivatives of the increments.

#include <optional>
#include <span>
#include <vector>

#include "legslam/geometry.hpp"

namespace legslam {

inline constexpr double kGravityMagnitude = 9.81;

struct ImuSample {
  double timestamp = 0.0;
  Vector3d gyro = Vector3d::Zero();   // rad/s, body frame
  Vector3d accel = Vector3d::Zero();  // m/s^2, specific force, body frame
};

struct ImuBias {
  Vector3d gyro = Vector3d::Zero();
  Vector3d accel = Vector3d::Zero();
};

struct ImuNoise {
  double gyro_noise_density = 1.7e-4;   // rad/s/sqrt(Hz)
  double accel_noise_density = 2.0e-3;  // m/s^2/sqrt(Hz)
  double gyro_random_walk = 1.9e-5;     // rad/s^2/sqrt(Hz)
  double accel_random_walk = 3.0e-3;    // m/s^3/sqrt(Hz)
};

struct PreintegrationConfig {
  double max_gap = 0.05;
  /// Specific-force magnitude above which a sample counts as distorted.
  double accel_sanity_bound = 80.0;
};

/// Body state used by prediction and the factor graph.
struct NavState {
  Se3d pose;  // T_w_b
  Vector3d velocity = Vector3d::Zero();
  ImuBias bias;
};

class ImuPreintegration {
 public:
  using Matrix9d = Eigen::Matrix<double, 9, 9>;

  ImuPreintegration() = default;
  ImuPreintegration(const ImuBias& linearization_bias, const ImuNoise& noise);

  /// Integrates the interval [a.timestamp, b.timestamp].
  void integrate(const ImuSample& a, const ImuSample& b);

  const Matrix3d& delta_rotation() const { return dR_; }
  const Vector3d& delta_velocity() const { return dV_; }
  const Vector3d& delta_position() const { return dP_; }
  double dt() const { return dt_; }
  const ImuBias& linearization_bias() const { return bias_; }
  const ImuNoise& noise() const { return noise_; }
  /// Covariance of [rotation; velocity; position] increments.
  const Matrix9d& covariance() const { return cov_; }
  int distorted_samples() const { return distorted_; }
  int num_intervals() const { return intervals_; }
  void count_distorted(int n) { distorted_ += n; }

  const Matrix3d& dR_dbg() const { return JRg_; }
  const Matrix3d& dV_dbg() const { return JVg_; }
  const Matrix3d& dV_dba() const { return JVa_; }
  const Matrix3d& dP_dbg() const { return JPg_; }
  const Matrix3d& dP_dba() const { return JPa_; }

  /// First-order bias correction around the linearization bias.
  Matrix3d corrected_rotation(const ImuBias& b) const;
  Vector3d corrected_velocity(const ImuBias& b) const;
  Vector3d corrected_position(const ImuBias& b) const;

 private:
  ImuBias bias_;
  ImuNoise noise_;
  Matrix3d dR_ = Matrix3d::Identity();
  Vector3d dV_ = Vector3d::Zero();
  Vector3d dP_ = Vector3d::Zero();
  double dt_ = 0.0;
  Matrix9d cov_ = Matrix9d::Zero();
  Matrix3d JRg_ = Matrix3d::Zero();
  Matrix3d JVg_ = Matrix3d::Zero();
  Matrix3d JVa_ = Matrix3d::Zero();
  Matrix3d JPg_ = Matrix3d::Zero();
  Matrix3d JPa_ = Matrix3d::Zero();
  int distorted_ = 0;
  int intervals_ = 0;
};

/// Sum_n phi^n / (n+2)!, the double integral of exp(tau phi) used for the
/// position increment.
Matrix3d so3_second_integral(const Vector3d& phi);

/// Integrates consecutive samples. Throws InvalidArgument (< 2 samples),
/// NonMonotonicTimestamps and SampleGap.
ImuPreintegration imu_preintegrate(std::span<const ImuSample> samples, const ImuBias& bias, const ImuNoise& noise,
                                   const PreintegrationConfig& config = {});

/// Samples covering [t0, t1] with linearly interpolated endpoints. Throws
/// OutOfRange when the stream does not bracket the interval.
std::vector<ImuSample> slice_imu(std::span<const ImuSample> stream, double t0, double t1);

/// State at the end of the preintegrated interval.
NavState predict_state(const NavState& start, const ImuPreintegration& preint, const Vector3d& gravity);

// ---------------------------------------------------------------------------
// Legged odometry

struct LeggedOdomSample {
  double timestamp = 0.0;
  Se3d pose;  // body in the odometry frame (z up, gravity aligned)
  std::optional<Vector6d> twist;
};

struct LeggedNoiseModel {
  double sigma_t_per_meter = 0.02;
  double sigma_r_per_meter = deg2rad(0.5);
  double min_sigma_t = 1e-3;
  double min_sigma_r = deg2rad(0.05);
};

struct RelativePoseMeasurement {
  Se3d pose;  // T_i^-1 T_j
  Matrix6d covariance = Matrix6d::Identity();
};

/// Odometry pose at time t (SLERP + linear). Throws OutOfRange.
Se3d interpolate_legged(std::span<const LeggedOdomSample> stream, double t);

/// Relative body motion between t_i and t_j with a path-length drift model.
RelativePoseMeasurement legged_relative_pose(std::span<const LeggedOdomSample> stream, double t_i, double t_j,
                                             const LeggedNoiseModel& model = {});

// ---------------------------------------------------------------------------
// Divergence check

struct DivergenceThresholds {
  double translation = 0.10;
  double rotation = deg2rad(5.0);
};

struct DivergenceReport {
  bool diverged = false;
  double translation_error = 0.0;
  double rotation_error = 0.0;
};

/// Diverged iff either discrepancy strictly exceeds its threshold.
DivergenceReport imu_divergence_check(const Se3d& imu_pred, const Se3d& reference,
                                      const DivergenceThresholds& thresholds = {});

// ---------------------------------------------------------------------------
// Gravity / bias initialization

struct GravityInit {
  Vector3d gravity_world = Vector3d(0.0, 0.0, -kGravityMagnitude);
  Vector3d gyro_bias = Vector3d::Zero();
};

struct StationaryThresholds {
  double min_duration = 0.5;
  double max_accel_std = 0.15;
  double max_gyro_norm = 0.05;
};

/// Gravity from the mean specific force of a stationary window expressed in
/// the world via R_w_b. Empty when the window is too short or moving.
std::optional<GravityInit> estimate_gravity_stationary(std::span<const ImuSample> window, const Matrix3d& R_w_b,
                                                       const StationaryThresholds& thresholds = {});

/// Gravity from a legged-odometry attitude (odometry frame is z-up).
Vector3d gravity_from_legged(const Matrix3d& R_w_b, const Matrix3d& R_odom_b);

}  // namespace legslam
