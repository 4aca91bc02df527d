#include "legslam/preintegration.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace legslam {

namespace {

// 8-point Gauss-Legendre on [0, 1].
constexpr std::array<double, 8> kGlNodes = {
    0.5 * (1.0 - 0.9602898564975363), 0.5 * (1.0 - 0.7966664774136267), 0.5 * (1.0 - 0.5255324099163290),
    0.5 * (1.0 - 0.1834346424956498), 0.5 * (1.0 + 0.1834346424956498), 0.5 * (1.0 + 0.5255324099163290),
    0.5 * (1.0 + 0.7966664774136267), 0.5 * (1.0 + 0.9602898564975363)};
constexpr std::array<double, 8> kGlWeights = {
    0.5 * 0.1012285362903763, 0.5 * 0.2223810344533745, 0.5 * 0.3137066458778873, 0.5 * 0.3626837833783620,
    0.5 * 0.3626837833783620, 0.5 * 0.3137066458778873, 0.5 * 0.2223810344533745, 0.5 * 0.1012285362903763};

// d/dphi of J_l(phi) a and of Gamma2(phi) a:
//   -int_0^1 w(tau) tau exp(tau phi) [a]x J_r(tau phi) dtau
// with w = 1 and w = 1 - tau respectively.
void increment_derivatives(const Vector3d& phi, const Vector3d& a, Matrix3d& d_jl, Matrix3d& d_g2) {
  d_jl.setZero();
  d_g2.setZero();
  const Matrix3d A = skew(a);
  for (std::size_t i = 0; i < kGlNodes.size(); ++i) {
    const double tau = kGlNodes[i];
    const Vector3d tp = tau * phi;
    const Matrix3d term = so3_exp(tp).toRotationMatrix() * A * so3_right_jacobian(tp);
    d_jl -= kGlWeights[i] * tau * term;
    d_g2 -= kGlWeights[i] * tau * (1.0 - tau) * term;
  }
}

}  // namespace

Matrix3d so3_second_integral(const Vector3d& phi) {
  const double t2 = phi.squaredNorm();
  double c1, c2;
  if (t2 < 1e-4) {
    c1 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0;
  } else {
    const double t = std::sqrt(t2);
    c1 = (t - std::sin(t)) / (t2 * t);
    c2 = (0.5 * t2 + std::cos(t) - 1.0) / (t2 * t2);
  }
  const Matrix3d W = skew(phi);
  return 0.5 * Matrix3d::Identity() + c1 * W + c2 * W * W;
}

ImuPreintegration::ImuPreintegration(const ImuBias& linearization_bias, const ImuNoise& noise)
    : bias_(linearization_bias), noise_(noise) {}

void ImuPreintegration::integrate(const ImuSample& a, const ImuSample& b) {
  const double dt = b.timestamp - a.timestamp;
  if (!(dt > 0.0)) throw Error(ErrorCode::NonMonotonicTimestamps, "IMU timestamps must increase");
  const Vector3d w = 0.5 * (a.gyro + b.gyro) - bias_.gyro;
  const Vector3d acc = 0.5 * (a.accel + b.accel) - bias_.accel;
  const Vector3d phi = w * dt;
  const Matrix3d Rinc = so3_exp(phi).toRotationMatrix();
  const Matrix3d Jl = so3_left_jacobian(phi);
  const Matrix3d Jr = so3_right_jacobian(phi);
  const Matrix3d G2 = so3_second_integral(phi);
  const Vector3d jl_a = Jl * acc;
  const Vector3d g2_a = G2 * acc;
  Matrix3d d_jl, d_g2;
  increment_derivatives(phi, acc, d_jl, d_g2);
  const double dt2 = dt * dt;

  // Covariance: [rot, vel, pos] driven by white gyro / accel noise.
  Matrix9d A = Matrix9d::Identity();
  Eigen::Matrix<double, 9, 6> B = Eigen::Matrix<double, 9, 6>::Zero();
  A.block<3, 3>(0, 0) = Rinc.transpose();
  A.block<3, 3>(3, 0) = -dR_ * skew(acc) * dt;
  A.block<3, 3>(6, 0) = -0.5 * dR_ * skew(acc) * dt2;
  A.block<3, 3>(6, 3) = Matrix3d::Identity() * dt;
  B.block<3, 3>(0, 0) = Jr * dt;
  B.block<3, 3>(3, 3) = dR_ * dt;
  B.block<3, 3>(6, 3) = 0.5 * dR_ * dt2;
  Eigen::Matrix<double, 6, 6> Q = Eigen::Matrix<double, 6, 6>::Zero();
  Q.diagonal().head<3>().setConstant(noise_.gyro_noise_density * noise_.gyro_noise_density / dt);
  Q.diagonal().tail<3>().setConstant(noise_.accel_noise_density * noise_.accel_noise_density / dt);
  cov_ = A * cov_ * A.transpose() + B * Q * B.transpose();
  cov_ = 0.5 * (cov_ + cov_.transpose());

  // Bias Jacobians (all from the pre-update quantities).
  JPa_ += JVa_ * dt - dR_ * G2 * dt2;
  JPg_ += JVg_ * dt + dR_ * (-skew(g2_a) * JRg_ - d_g2 * dt) * dt2;
  JVa_ -= dR_ * Jl * dt;
  JVg_ += dR_ * (-skew(jl_a) * JRg_ - d_jl * dt) * dt;
  JRg_ = Rinc.transpose() * JRg_ - Jr * dt;

  dP_ += dV_ * dt + dR_ * g2_a * dt2;
  dV_ += dR_ * jl_a * dt;
  dR_ = dR_ * Rinc;
  // Keep dR_ orthonormal over long integrations.
  dR_ = Eigen::Quaterniond(dR_).normalized().toRotationMatrix();
  dt_ += dt;
  ++intervals_;
}

Matrix3d ImuPreintegration::corrected_rotation(const ImuBias& b) const {
  return dR_ * so3_exp<double>(JRg_ * (b.gyro - bias_.gyro)).toRotationMatrix();
}

Vector3d ImuPreintegration::corrected_velocity(const ImuBias& b) const {
  return dV_ + JVg_ * (b.gyro - bias_.gyro) + JVa_ * (b.accel - bias_.accel);
}

Vector3d ImuPreintegration::corrected_position(const ImuBias& b) const {
  return dP_ + JPg_ * (b.gyro - bias_.gyro) + JPa_ * (b.accel - bias_.accel);
}

ImuPreintegration imu_preintegrate(std::span<const ImuSample> samples, const ImuBias& bias, const ImuNoise& noise,
                                   const PreintegrationConfig& config) {
  if (samples.size() < 2) throw Error(ErrorCode::InvalidArgument, "preintegration needs at least two samples");
  ImuPreintegration pre(bias, noise);
  int distorted = samples[0].accel.norm() > config.accel_sanity_bound ? 1 : 0;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double gap = samples[i].timestamp - samples[i - 1].timestamp;
    if (!(gap > 0.0)) throw Error(ErrorCode::NonMonotonicTimestamps, "IMU timestamps must strictly increase");
    if (gap > config.max_gap) throw Error(ErrorCode::SampleGap, "IMU sample gap exceeds max_gap");
    if (samples[i].accel.norm() > config.accel_sanity_bound) ++distorted;
    pre.integrate(samples[i - 1], samples[i]);
  }
  pre.count_distorted(distorted);
  return pre;
}

namespace {

ImuSample lerp_sample(const ImuSample& a, const ImuSample& b, double t) {
  const double s = (t - a.timestamp) / (b.timestamp - a.timestamp);
  return ImuSample{t, (1.0 - s) * a.gyro + s * b.gyro, (1.0 - s) * a.accel + s * b.accel};
}

}  // namespace

std::vector<ImuSample> slice_imu(std::span<const ImuSample> stream, double t0, double t1) {
  if (stream.empty() || t0 < stream.front().timestamp || t1 > stream.back().timestamp || !(t1 > t0)) {
    throw Error(ErrorCode::OutOfRange, "IMU stream does not cover the interval");
  }
  auto by_time = [](const ImuSample& s, double t) { return s.timestamp < t; };
  auto lo = std::lower_bound(stream.begin(), stream.end(), t0, by_time);
  auto hi = std::lower_bound(stream.begin(), stream.end(), t1, by_time);
  std::vector<ImuSample> out;
  if (lo->timestamp > t0) out.push_back(lerp_sample(*(lo - 1), *lo, t0));
  for (auto it = lo; it != hi; ++it) out.push_back(*it);
  if (hi->timestamp > t1) {
    out.push_back(lerp_sample(*(hi - 1), *hi, t1));
  } else {
    out.push_back(*hi);
  }
  return out;
}

NavState predict_state(const NavState& start, const ImuPreintegration& preint, const Vector3d& gravity) {
  const Matrix3d Ri = start.pose.rotation();
  const double dt = preint.dt();
  NavState out;
  out.bias = start.bias;
  const Matrix3d Rj = Ri * preint.corrected_rotation(start.bias);
  out.velocity = start.velocity + gravity * dt + Ri * preint.corrected_velocity(start.bias);
  const Vector3d pj = start.pose.translation() + start.velocity * dt + 0.5 * gravity * dt * dt +
                      Ri * preint.corrected_position(start.bias);
  out.pose = Se3d(Rj, pj);
  return out;
}

// ---------------------------------------------------------------------------

Se3d interpolate_legged(std::span<const LeggedOdomSample> stream, double t) {
  if (stream.empty() || t < stream.front().timestamp || t > stream.back().timestamp) {
    throw Error(ErrorCode::OutOfRange, "legged odometry does not bracket the stamp");
  }
  auto it = std::lower_bound(stream.begin(), stream.end(), t,
                             [](const LeggedOdomSample& s, double v) { return s.timestamp < v; });
  if (it->timestamp == t || it == stream.begin()) return it->pose;
  const auto& a = *(it - 1);
  const auto& b = *it;
  return interpolate(a.pose, b.pose, (t - a.timestamp) / (b.timestamp - a.timestamp));
}

RelativePoseMeasurement legged_relative_pose(std::span<const LeggedOdomSample> stream, double t_i, double t_j,
                                             const LeggedNoiseModel& model) {
  const Se3d Ti = interpolate_legged(stream, t_i);
  const Se3d Tj = interpolate_legged(stream, t_j);
  RelativePoseMeasurement m;
  m.pose = Ti.inverse() * Tj;

  // Path length through the samples strictly inside the interval.
  const double lo = std::min(t_i, t_j), hi = std::max(t_i, t_j);
  double path = 0.0;
  Vector3d last = interpolate_legged(stream, lo).translation();
  for (const auto& s : stream) {
    if (s.timestamp <= lo || s.timestamp >= hi) continue;
    path += (s.pose.translation() - last).norm();
    last = s.pose.translation();
  }
  path += (interpolate_legged(stream, hi).translation() - last).norm();

  const double st = std::max(model.min_sigma_t, model.sigma_t_per_meter * path);
  const double sr = std::max(model.min_sigma_r, model.sigma_r_per_meter * path);
  m.covariance.setZero();
  m.covariance.diagonal().head<3>().setConstant(st * st);
  m.covariance.diagonal().tail<3>().setConstant(sr * sr);
  return m;
}

DivergenceReport imu_divergence_check(const Se3d& imu_pred, const Se3d& reference,
                                      const DivergenceThresholds& thresholds) {
  DivergenceReport r;
  r.translation_error = (imu_pred.translation() - reference.translation()).norm();
  r.rotation_error = so3_log(Eigen::Quaterniond(reference.quaternion().conjugate() * imu_pred.quaternion())).norm();
  r.diverged = r.translation_error > thresholds.translation || r.rotation_error > thresholds.rotation;
  return r;
}

std::optional<GravityInit> estimate_gravity_stationary(std::span<const ImuSample> window, const Matrix3d& R_w_b,
                                                       const StationaryThresholds& thresholds) {
  if (window.size() < 2 || window.back().timestamp - window.front().timestamp < thresholds.min_duration - 1e-9) {
    return std::nullopt;
  }
  Vector3d mean_a = Vector3d::Zero(), mean_w = Vector3d::Zero();
  for (const auto& s : window) {
    mean_a += s.accel;
    mean_w += s.gyro;
  }
  mean_a /= static_cast<double>(window.size());
  mean_w /= static_cast<double>(window.size());
  double var = 0.0;
  for (const auto& s : window) var += (s.accel - mean_a).squaredNorm();
  var /= static_cast<double>(window.size());
  if (std::sqrt(var) > thresholds.max_accel_std || mean_w.norm() > thresholds.max_gyro_norm) return std::nullopt;
  if (std::abs(mean_a.norm() - kGravityMagnitude) > 1.0) return std::nullopt;
  GravityInit g;
  g.gravity_world = -kGravityMagnitude * (R_w_b * mean_a).normalized();
  g.gyro_bias = mean_w;
  return g;
}

Vector3d gravity_from_legged(const Matrix3d& R_w_b, const Matrix3d& R_odom_b) {
  return R_w_b * R_odom_b.transpose() * Vector3d(0.0, 0.0, -kGravityMagnitude);
}

}  // namespace legslam
