#pragma once

// Rigid-body transforms, Lie-group helpers and the pinhole camera model.
//
// Tangent vectors of SE(3) are ordered [translation; rotation] throughout
// the library, and pose increments are applied on the left:
//   T <- exp(delta) * T.
// Stored poses are world-from-X ("T_w_c", "T_w_b") unless a name says
// otherwise; camera-frame points are obtained with T.inverse() * p_world.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>

#include "legslam/error.hpp"

namespace legslam {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vec6 = Eigen::Matrix<Scalar, 6, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Mat4 = Eigen::Matrix<Scalar, 4, 4>;
template <typename Scalar>
using Mat6 = Eigen::Matrix<Scalar, 6, 6>;

using Vector2d = Eigen::Vector2d;
using Vector3d = Eigen::Vector3d;
using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix3d = Eigen::Matrix3d;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// Camera- or world-frame point in meters.
using Point3 = Eigen::Vector3d;
/// Image location (u, v) in pixels, sub-pixel precision.
using Pixel2 = Eigen::Vector2d;

inline constexpr double kDefaultMinDepth = 0.05;
inline constexpr double kDefaultMaxDepth = 10.0;
inline constexpr double kPi = 3.14159265358979323846;

template <typename Scalar>
Scalar deg2rad(Scalar deg) {
  return deg * Scalar(kPi / 180.0);
}
template <typename Scalar>
Scalar rad2deg(Scalar rad) {
  return rad * Scalar(180.0 / kPi);
}

template <typename Derived>
Mat3<typename Derived::Scalar> skew(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  Mat3<S> m;
  m << S(0), -v(2), v(1), v(2), S(0), -v(0), -v(1), v(0), S(0);
  return m;
}

// ---------------------------------------------------------------------------
// SO(3)

template <typename Scalar>
Eigen::Quaternion<Scalar> so3_exp(const Vec3<Scalar>& phi) {
  const Scalar theta2 = phi.squaredNorm();
  const Scalar theta = std::sqrt(theta2);
  Scalar w, k;
  if (theta < Scalar(1e-8)) {
    w = Scalar(1) - theta2 / Scalar(8);
    k = Scalar(0.5) - theta2 / Scalar(48);
  } else {
    w = std::cos(theta / Scalar(2));
    k = std::sin(theta / Scalar(2)) / theta;
  }
  Eigen::Quaternion<Scalar> q(w, k * phi.x(), k * phi.y(), k * phi.z());
  q.normalize();
  return q;
}

template <typename Scalar>
Vec3<Scalar> so3_log(const Eigen::Quaternion<Scalar>& q_in) {
  Eigen::Quaternion<Scalar> q = q_in.normalized();
  if (q.w() < Scalar(0)) q.coeffs() = -q.coeffs();
  const Vec3<Scalar> v = q.vec();
  const Scalar n = v.norm();
  if (n < Scalar(1e-8)) {
    // 2 * atan(n / w) / n ~ 2 / w * (1 - n^2 / (3 w^2))
    const Scalar w = q.w();
    return (Scalar(2) / w - Scalar(2) * n * n / (Scalar(3) * w * w * w)) * v;
  }
  return (Scalar(2) * std::atan2(n, q.w()) / n) * v;
}

template <typename Scalar>
Vec3<Scalar> so3_log(const Mat3<Scalar>& R) {
  return so3_log(Eigen::Quaternion<Scalar>(R));
}

namespace detail {

// (1 - cos t) / t^2, (t - sin t) / t^3 and friends, with series below the
// cancellation-prone range.
template <typename Scalar>
struct So3Coeffs {
  Scalar a;  // sin t / t
  Scalar b;  // (1 - cos t) / t^2
  Scalar c;  // (t - sin t) / t^3
  explicit So3Coeffs(Scalar t2) {
    if (t2 < Scalar(1e-6)) {
      a = Scalar(1) - t2 / Scalar(6) + t2 * t2 / Scalar(120);
      b = Scalar(0.5) - t2 / Scalar(24) + t2 * t2 / Scalar(720);
      c = Scalar(1) / Scalar(6) - t2 / Scalar(120) + t2 * t2 / Scalar(5040);
    } else {
      const Scalar t = std::sqrt(t2);
      a = std::sin(t) / t;
      b = (Scalar(1) - std::cos(t)) / t2;
      c = (t - std::sin(t)) / (t2 * t);
    }
  }
};

}  // namespace detail

/// Left Jacobian of SO(3): exp(phi + d) ~= exp(J_l(phi) d) exp(phi).
template <typename Scalar>
Mat3<Scalar> so3_left_jacobian(const Vec3<Scalar>& phi) {
  const detail::So3Coeffs<Scalar> k(phi.squaredNorm());
  const Mat3<Scalar> W = skew(phi);
  return Mat3<Scalar>::Identity() + k.b * W + k.c * W * W;
}

/// Right Jacobian of SO(3): exp(phi + d) ~= exp(phi) exp(J_r(phi) d).
template <typename Scalar>
Mat3<Scalar> so3_right_jacobian(const Vec3<Scalar>& phi) {
  return so3_left_jacobian<Scalar>(-phi);
}

template <typename Scalar>
Mat3<Scalar> so3_left_jacobian_inverse(const Vec3<Scalar>& phi) {
  const Scalar t2 = phi.squaredNorm();
  const Mat3<Scalar> W = skew(phi);
  Scalar e;
  if (t2 < Scalar(1e-6)) {
    e = Scalar(1) / Scalar(12) + t2 / Scalar(720) + t2 * t2 / Scalar(30240);
  } else {
    const Scalar t = std::sqrt(t2);
    e = (Scalar(1) - t * std::sin(t) / (Scalar(2) * (Scalar(1) - std::cos(t)))) / t2;
  }
  return Mat3<Scalar>::Identity() - Scalar(0.5) * W + e * W * W;
}

template <typename Scalar>
Mat3<Scalar> so3_right_jacobian_inverse(const Vec3<Scalar>& phi) {
  return so3_left_jacobian_inverse<Scalar>(-phi);
}

// ---------------------------------------------------------------------------
// SE(3)

/// Rigid transform stored as unit quaternion + translation. Every producing
/// operation renormalizes the quaternion.
template <typename Scalar>
class Se3 {
 public:
  using Quaternion = Eigen::Quaternion<Scalar>;
  using Vector3 = Vec3<Scalar>;
  using Matrix3 = Mat3<Scalar>;

  Se3() : q_(Quaternion::Identity()), t_(Vector3::Zero()) {}
  Se3(const Quaternion& q, const Vector3& t) : q_(q.normalized()), t_(t) {}
  Se3(const Matrix3& R, const Vector3& t) : q_(Quaternion(R).normalized()), t_(t) {}

  static Se3 Identity() { return Se3(); }
  static Se3 Translation(const Vector3& t) { return Se3(Quaternion::Identity(), t); }
  static Se3 Rotation(const Quaternion& q) { return Se3(q, Vector3::Zero()); }

  const Quaternion& quaternion() const { return q_; }
  Matrix3 rotation() const { return q_.toRotationMatrix(); }
  const Vector3& translation() const { return t_; }

  Mat4<Scalar> matrix() const {
    Mat4<Scalar> m = Mat4<Scalar>::Identity();
    m.template topLeftCorner<3, 3>() = rotation();
    m.template topRightCorner<3, 1>() = t_;
    return m;
  }

  Se3 inverse() const {
    const Quaternion qi = q_.conjugate();
    return Se3(qi, -(qi * t_));
  }

  Se3 operator*(const Se3& other) const {
    return Se3(q_ * other.q_, q_ * other.t_ + t_);
  }

  Vector3 operator*(const Vector3& p) const { return q_ * p + t_; }

  template <typename T>
  Se3<T> cast() const {
    return Se3<T>(q_.template cast<T>(), t_.template cast<T>());
  }

 private:
  Quaternion q_;
  Vector3 t_;
};

using Se3d = Se3<double>;
/// Pose used across the library; see the file comment for frame conventions.
using Se3Pose = Se3d;

template <typename Scalar>
Se3<Scalar> compose(const Se3<Scalar>& a, const Se3<Scalar>& b) {
  return a * b;
}

template <typename Scalar>
Se3<Scalar> inverse(const Se3<Scalar>& T) {
  return T.inverse();
}

template <typename Scalar>
Vec3<Scalar> transform_point(const Se3<Scalar>& T, const Vec3<Scalar>& p) {
  return T * p;
}

namespace detail {

// Off-diagonal block of the SE(3) left Jacobian for tangent [rho; phi].
template <typename Scalar>
Mat3<Scalar> se3_q_block(const Vec3<Scalar>& rho, const Vec3<Scalar>& phi) {
  const Scalar t2 = phi.squaredNorm();
  Scalar c1, c2, c3;
  if (t2 < Scalar(1e-4)) {
    c1 = Scalar(1) / Scalar(6) - t2 / Scalar(120) + t2 * t2 / Scalar(5040);
    c2 = Scalar(1) / Scalar(24) - t2 / Scalar(720) + t2 * t2 / Scalar(40320);
    c3 = Scalar(1) / Scalar(120) - t2 / Scalar(2520) + t2 * t2 / Scalar(120960);
  } else {
    const Scalar t = std::sqrt(t2);
    const Scalar s = std::sin(t), c = std::cos(t);
    c1 = (t - s) / (t2 * t);
    c2 = (t2 + Scalar(2) * c - Scalar(2)) / (Scalar(2) * t2 * t2);
    c3 = (Scalar(2) * t - Scalar(3) * s + t * c) / (Scalar(2) * t2 * t2 * t);
  }
  const Mat3<Scalar> P = skew(phi);
  const Mat3<Scalar> R = skew(rho);
  const Mat3<Scalar> PR = P * R;
  const Mat3<Scalar> RP = R * P;
  const Mat3<Scalar> PRP = PR * P;
  return Scalar(0.5) * R + c1 * (PR + RP + PRP) + c2 * (P * PR + RP * P - Scalar(3) * PRP) +
         c3 * (PRP * P + P * PRP);
}

}  // namespace detail

/// exp: tangent [rho; phi] -> transform with R = exp(phi), t = J_l(phi) rho.
template <typename Scalar>
Se3<Scalar> se3_exp(const Vec6<Scalar>& xi) {
  const Vec3<Scalar> rho = xi.template head<3>();
  const Vec3<Scalar> phi = xi.template tail<3>();
  return Se3<Scalar>(so3_exp(phi), so3_left_jacobian(phi) * rho);
}

template <typename Scalar>
Vec6<Scalar> se3_log(const Se3<Scalar>& T) {
  const Vec3<Scalar> phi = so3_log(T.quaternion());
  Vec6<Scalar> xi;
  xi.template head<3>() = so3_left_jacobian_inverse(phi) * T.translation();
  xi.template tail<3>() = phi;
  return xi;
}

/// Adjoint for [rho; phi] ordering: exp(Ad_T x) = T exp(x) T^-1.
template <typename Scalar>
Mat6<Scalar> se3_adjoint(const Se3<Scalar>& T) {
  const Mat3<Scalar> R = T.rotation();
  Mat6<Scalar> A = Mat6<Scalar>::Zero();
  A.template topLeftCorner<3, 3>() = R;
  A.template topRightCorner<3, 3>() = skew(T.translation()) * R;
  A.template bottomRightCorner<3, 3>() = R;
  return A;
}

/// exp(xi + d) ~= exp(J_l(xi) d) exp(xi).
template <typename Scalar>
Mat6<Scalar> se3_left_jacobian(const Vec6<Scalar>& xi) {
  const Vec3<Scalar> rho = xi.template head<3>();
  const Vec3<Scalar> phi = xi.template tail<3>();
  const Mat3<Scalar> J = so3_left_jacobian(phi);
  Mat6<Scalar> out = Mat6<Scalar>::Zero();
  out.template topLeftCorner<3, 3>() = J;
  out.template bottomRightCorner<3, 3>() = J;
  out.template topRightCorner<3, 3>() = detail::se3_q_block(rho, phi);
  return out;
}

/// exp(xi + d) ~= exp(xi) exp(J_r(xi) d).
template <typename Scalar>
Mat6<Scalar> se3_right_jacobian(const Vec6<Scalar>& xi) {
  return se3_left_jacobian<Scalar>(-xi);
}

template <typename Scalar>
Mat6<Scalar> se3_left_jacobian_inverse(const Vec6<Scalar>& xi) {
  const Vec3<Scalar> rho = xi.template head<3>();
  const Vec3<Scalar> phi = xi.template tail<3>();
  const Mat3<Scalar> Ji = so3_left_jacobian_inverse(phi);
  Mat6<Scalar> out = Mat6<Scalar>::Zero();
  out.template topLeftCorner<3, 3>() = Ji;
  out.template bottomRightCorner<3, 3>() = Ji;
  out.template topRightCorner<3, 3>() = -Ji * detail::se3_q_block(rho, phi) * Ji;
  return out;
}

/// log(exp(xi) exp(d)) ~= xi + J_r^-1(xi) d.
template <typename Scalar>
Mat6<Scalar> se3_right_jacobian_inverse(const Vec6<Scalar>& xi) {
  return se3_left_jacobian_inverse<Scalar>(-xi);
}

/// Left-perturbed pose: exp(delta) * T.
template <typename Scalar>
Se3<Scalar> se3_retract(const Se3<Scalar>& T, const Vec6<Scalar>& delta) {
  return se3_exp(delta) * T;
}

/// Rotation angle (radians) and translation norm of a transform.
template <typename Scalar>
Scalar rotation_angle(const Se3<Scalar>& T) {
  return so3_log(T.quaternion()).norm();
}

/// Pose interpolation: rotation by SLERP, translation linearly.
template <typename Scalar>
Se3<Scalar> interpolate(const Se3<Scalar>& a, const Se3<Scalar>& b, Scalar s) {
  return Se3<Scalar>(a.quaternion().slerp(s, b.quaternion()),
                     (Scalar(1) - s) * a.translation() + s * b.translation());
}

// ---------------------------------------------------------------------------
// Pinhole camera

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  /// Raw depth units per meter.
  double depth_scale = 1.0;

  /// Throws InvalidArgument when an invariant is violated.
  void validate() const;

  bool contains(const Pixel2& px, double margin = 0.0) const {
    return px.x() >= margin && px.y() >= margin && px.x() <= width - 1 - margin &&
           px.y() <= height - 1 - margin;
  }

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d K;
    K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return K;
  }
};

template <typename Scalar>
Vec2<Scalar> project(const Vec3<Scalar>& p, const CameraIntrinsics& k,
                     double min_depth = kDefaultMinDepth) {
  if (!(p.z() > Scalar(min_depth))) {
    throw Error(ErrorCode::DepthTooSmall, "point depth below minimum");
  }
  return Vec2<Scalar>(Scalar(k.fx) * p.x() / p.z() + Scalar(k.cx),
                      Scalar(k.fy) * p.y() / p.z() + Scalar(k.cy));
}

template <typename Scalar>
Vec3<Scalar> unproject(const Vec2<Scalar>& px, Scalar depth, const CameraIntrinsics& k,
                       double min_depth = kDefaultMinDepth) {
  if (!(depth > Scalar(min_depth))) {
    throw Error(ErrorCode::DepthTooSmall, "depth below minimum");
  }
  return Vec3<Scalar>((px.x() - Scalar(k.cx)) / Scalar(k.fx) * depth,
                      (px.y() - Scalar(k.cy)) / Scalar(k.fy) * depth, depth);
}

/// Non-throwing projection for hot loops; false when z <= min_depth.
inline bool try_project(const Point3& p, const CameraIntrinsics& k, Pixel2& out,
                        double min_depth = kDefaultMinDepth) {
  if (!(p.z() > min_depth)) return false;
  out = Pixel2(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy);
  return true;
}

}  // namespace legslam
