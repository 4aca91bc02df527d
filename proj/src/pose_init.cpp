#include "legslam/pose_init.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <random>

#include "legslam/flow_tracking.hpp"

namespace legslam {

std::string_view to_string(InitSource s) {
  switch (s) {
    case InitSource::Legged: return "Legged";
    case InitSource::Imu: return "Imu";
    case InitSource::EssentialPnp: return "EssentialPnp";
    case InitSource::Gicp: return "Gicp";
    case InitSource::ConstVel: return "ConstVel";
  }
  return "Unknown";
}

namespace {

Vector3d bearing(const Pixel2& px, const CameraIntrinsics& k) {
  return Vector3d((px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy, 1.0).normalized();
}

Pixel2 normalized(const Pixel2& px, const CameraIntrinsics& k) {
  return Pixel2((px.x() - k.cx) / k.fx, (px.y() - k.cy) / k.fy);
}

// Draws `m` distinct indices from [0, n) by partial Fisher-Yates.
void draw_sample(std::mt19937_64& rng, std::vector<int>& pool, int m, std::vector<int>& out) {
  const int n = static_cast<int>(pool.size());
  out.resize(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    std::uniform_int_distribution<int> pick(j, n - 1);
    std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(pick(rng))]);
    out[static_cast<std::size_t>(j)] = pool[static_cast<std::size_t>(j)];
  }
}

int adaptive_iterations(int current, int inliers, int n, int sample_size, double confidence) {
  const double w = static_cast<double>(inliers) / n;
  const double fail = 1.0 - std::pow(w, sample_size);
  if (fail <= 1e-12) return 0;
  const double needed = std::log(1.0 - confidence) / std::log(fail);
  return std::min(current, static_cast<int>(std::ceil(needed)));
}

std::optional<Eigen::Matrix3d> essential_from_sample(std::span<const Pixel2> a, std::span<const Pixel2> b,
                                                     const std::vector<int>& idx) {
  std::vector<Pixel2> sa, sb;
  sa.reserve(idx.size());
  sb.reserve(idx.size());
  for (int i : idx) {
    sa.push_back(a[static_cast<std::size_t>(i)]);
    sb.push_back(b[static_cast<std::size_t>(i)]);
  }
  const auto F = fundamental_eight_point(sa, sb);
  if (!F) return std::nullopt;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(*F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d E = svd.matrixU() * Vector3d(1.0, 1.0, 0.0).asDiagonal() * svd.matrixV().transpose();
  if (!E.allFinite()) return std::nullopt;
  return E;
}

int classify_essential(const Eigen::Matrix3d& E, std::span<const Pixel2> a, std::span<const Pixel2> b,
                       double threshold, std::vector<std::uint8_t>& in) {
  in.assign(a.size(), 0);
  int count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (sampson_distance(E, a[i], b[i]) < threshold) {
      in[i] = 1;
      ++count;
    }
  }
  return count;
}

// Depths (s1, s2) with s2 b2 = s1 R b1 + t, least squares.
Eigen::Vector2d triangulate_depths(const Matrix3d& R, const Vector3d& t, const Vector3d& b1, const Vector3d& b2) {
  Eigen::Matrix<double, 3, 2> A;
  A.col(0) = R * b1;
  A.col(1) = -b2;
  return (A.transpose() * A).ldlt().solve(-A.transpose() * t);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

EssentialResult essential_matrix_pose(std::span<const Pixel2> prev, std::span<const Pixel2> cur,
                                      const CameraIntrinsics& k, const EssentialConfig& config) {
  if (prev.size() != cur.size()) throw Error(ErrorCode::InvalidArgument, "match lists differ in length");
  const int n = static_cast<int>(prev.size());
  if (n < 8) throw Error(ErrorCode::DegenerateConfig, "essential matrix needs 8 matches");

  std::vector<Pixel2> a(prev.size()), b(cur.size());
  std::vector<Vector3d> ba(prev.size()), bb(cur.size());
  for (std::size_t i = 0; i < prev.size(); ++i) {
    a[i] = normalized(prev[i], k);
    b[i] = normalized(cur[i], k);
    ba[i] = bearing(prev[i], k);
    bb[i] = bearing(cur[i], k);
  }

  // A rotation-only model that explains the flow leaves no baseline.
  Matrix3d H = Matrix3d::Zero();
  for (int i = 0; i < n; ++i) H += bb[static_cast<std::size_t>(i)] * ba[static_cast<std::size_t>(i)].transpose();
  Eigen::JacobiSVD<Matrix3d> ksvd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d Rrot = ksvd.matrixU() * ksvd.matrixV().transpose();
  if (Rrot.determinant() < 0) {
    Matrix3d D = Matrix3d::Identity();
    D(2, 2) = -1.0;
    Rrot = ksvd.matrixU() * D * ksvd.matrixV().transpose();
  }
  std::vector<double> rot_residual(prev.size());
  for (std::size_t i = 0; i < prev.size(); ++i) {
    rot_residual[i] = std::acos(std::clamp((Rrot * ba[i]).dot(bb[i]), -1.0, 1.0));
  }
  if (median(rot_residual) < deg2rad(config.min_parallax_deg)) {
    throw Error(ErrorCode::DegenerateConfig, "matches show no translational parallax");
  }

  const double f = 0.5 * (k.fx + k.fy);
  const double thr = config.threshold_px / f;
  std::mt19937_64 rng(config.seed);
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> sample;
  std::vector<std::uint8_t> in, best_in;
  int best = -1;
  int iters = config.max_iters;
  for (int it = 0; it < iters; ++it) {
    draw_sample(rng, pool, 8, sample);
    const auto E = essential_from_sample(a, b, sample);
    if (!E) continue;
    const int c = classify_essential(*E, a, b, thr, in);
    if (c > best) {
      best = c;
      best_in = in;
      iters = adaptive_iterations(iters, c, n, 8, config.confidence);
    }
  }
  if (best < std::max(8, config.min_inliers)) {
    throw Error(ErrorCode::DegenerateConfig, "essential matrix has too few inliers");
  }
  std::vector<int> inlier_idx;
  for (int i = 0; i < n; ++i) {
    if (best_in[static_cast<std::size_t>(i)]) inlier_idx.push_back(i);
  }
  const auto E = essential_from_sample(a, b, inlier_idx);
  if (!E) throw Error(ErrorCode::DegenerateConfig, "essential refit failed");

  EssentialResult res;
  res.E = *E;
  classify_essential(res.E, a, b, thr, res.inliers);

  Eigen::JacobiSVD<Matrix3d> svd(res.E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3d U = svd.matrixU(), V = svd.matrixV();
  if (U.determinant() < 0) U = -U;
  if (V.determinant() < 0) V = -V;
  Matrix3d W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const std::array<Matrix3d, 2> Rs = {U * W * V.transpose(), U * W.transpose() * V.transpose()};
  const std::array<Vector3d, 2> ts = {U.col(2), -U.col(2)};
  int best_votes = -1;
  Matrix3d R_best = Matrix3d::Identity();
  Vector3d t_best = Vector3d::Zero();
  for (const auto& R : Rs) {
    for (const auto& t : ts) {
      int votes = 0;
      for (std::size_t i = 0; i < prev.size(); ++i) {
        if (!res.inliers[i]) continue;
        const Eigen::Vector2d s = triangulate_depths(R, t, ba[i], bb[i]);
        if (s(0) > 0.0 && s(1) > 0.0) ++votes;
      }
      if (votes > best_votes) {
        best_votes = votes;
        R_best = R;
        t_best = t;
      }
    }
  }
  // (R, t) maps first-view coordinates into the second view.
  const Matrix3d R12 = R_best.transpose();
  res.motion = Se3d(R12, (-R12 * t_best).normalized());
  return res;
}

// ---------------------------------------------------------------------------

std::vector<Se3d> p3p_solve(const std::array<Vector3d, 3>& f, const std::array<Point3, 3>& P) {
  std::vector<Se3d> out;
  const double a2 = (P[1] - P[2]).squaredNorm();
  const double b2 = (P[0] - P[2]).squaredNorm();
  const double c2 = (P[0] - P[1]).squaredNorm();
  if (a2 < 1e-12 || b2 < 1e-12 || c2 < 1e-12) return out;
  const Vector3d j0 = f[0].normalized(), j1 = f[1].normalized(), j2 = f[2].normalized();
  const double ca = j1.dot(j2), cb = j0.dot(j2), cg = j0.dot(j1);

  const double amc = (a2 - c2) / b2;
  const double apc = (a2 + c2) / b2;
  const double bmc = (b2 - c2) / b2;
  const double bma = (b2 - a2) / b2;
  Eigen::Matrix<double, 5, 1> A;  // A(i) multiplies v^i
  A(4) = (amc - 1.0) * (amc - 1.0) - 4.0 * c2 / b2 * ca * ca;
  A(3) = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
  A(2) = 2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * bmc * ca * ca - 4.0 * apc * ca * cb * cg +
                2.0 * bma * cg * cg);
  A(1) = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg);
  A(0) = (1.0 + amc) * (1.0 + amc) - 4.0 * a2 / b2 * cg * cg;
  if (std::abs(A(4)) < 1e-14) return out;

  Eigen::Matrix4d C = Eigen::Matrix4d::Zero();
  C.block<3, 3>(1, 0).setIdentity();
  for (int i = 0; i < 4; ++i) C(i, 3) = -A(i) / A(4);
  Eigen::EigenSolver<Eigen::Matrix4d> es(C, false);
  for (int r = 0; r < 4; ++r) {
    const std::complex<double> root = es.eigenvalues()(r);
    if (std::abs(root.imag()) > 1e-6 * std::max(1.0, std::abs(root.real()))) continue;
    double v = root.real();
    // Newton polish of the quartic root.
    for (int it = 0; it < 3; ++it) {
      const double p = (((A(4) * v + A(3)) * v + A(2)) * v + A(1)) * v + A(0);
      const double dp = ((4.0 * A(4) * v + 3.0 * A(3)) * v + 2.0 * A(2)) * v + A(1);
      if (std::abs(dp) < 1e-15) break;
      v -= p / dp;
    }
    const double den = 2.0 * (cg - v * ca);
    if (std::abs(den) < 1e-12) continue;
    const double u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den;
    const double q = 1.0 + v * v - 2.0 * v * cb;
    if (q <= 1e-12) continue;
    const double s1 = std::sqrt(b2 / q);
    const double s2 = u * s1, s3 = v * s1;
    if (s1 <= 0.0 || s2 <= 0.0 || s3 <= 0.0) continue;

    Eigen::Matrix3d Xc, Xw;
    Xc.col(0) = s1 * j0;
    Xc.col(1) = s2 * j1;
    Xc.col(2) = s3 * j2;
    for (int i = 0; i < 3; ++i) Xw.col(i) = P[static_cast<std::size_t>(i)];
    const Eigen::Matrix4d T = Eigen::umeyama(Xc, Xw, false);
    if (!T.allFinite()) continue;
    out.emplace_back(Matrix3d(T.topLeftCorner<3, 3>()), Vector3d(T.topRightCorner<3, 1>()));
  }
  return out;
}

namespace {

int count_pnp_inliers(const Se3d& T_w_c, std::span<const Point3> pw, std::span<const Pixel2> px,
                      const CameraIntrinsics& k, double thr, std::vector<std::uint8_t>& in) {
  const Se3d T_c_w = T_w_c.inverse();
  in.assign(pw.size(), 0);
  int count = 0;
  const double thr2 = thr * thr;
  for (std::size_t i = 0; i < pw.size(); ++i) {
    Pixel2 p;
    if (!try_project(T_c_w * pw[i], k, p)) continue;
    if ((p - px[i]).squaredNorm() < thr2) {
      in[i] = 1;
      ++count;
    }
  }
  return count;
}

double reprojection_cost(const Se3d& T_w_c, std::span<const Point3> pw, std::span<const Pixel2> px,
                         std::span<const std::uint8_t> use, const CameraIntrinsics& k) {
  const Se3d T_c_w = T_w_c.inverse();
  double cost = 0.0;
  for (std::size_t i = 0; i < pw.size(); ++i) {
    if (!use[i]) continue;
    Pixel2 p;
    if (!try_project(T_c_w * pw[i], k, p)) return std::numeric_limits<double>::infinity();
    cost += (p - px[i]).squaredNorm();
  }
  return cost;
}

}  // namespace

bool refine_pose_reprojection(Se3d& T_w_c, std::span<const Point3> pw, std::span<const Pixel2> px,
                              std::span<const std::uint8_t> use, const CameraIntrinsics& k, int iterations) {
  double cost = reprojection_cost(T_w_c, pw, px, use, k);
  if (!std::isfinite(cost)) return false;
  double lambda = 1e-6;
  for (int it = 0; it < iterations; ++it) {
    const Se3d T_c_w = T_w_c.inverse();
    const Matrix3d R_cw = T_c_w.rotation();
    Matrix6d Hm = Matrix6d::Zero();
    Vector6d g = Vector6d::Zero();
    for (std::size_t i = 0; i < pw.size(); ++i) {
      if (!use[i]) continue;
      const Point3 pc = T_c_w * pw[i];
      const double iz = 1.0 / pc.z();
      const Pixel2 proj(k.fx * pc.x() * iz + k.cx, k.fy * pc.y() * iz + k.cy);
      const Eigen::Vector2d r = proj - px[i];
      Eigen::Matrix<double, 2, 3> Jp;
      Jp << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> Jc;
      Jc.leftCols<3>() = -R_cw;
      Jc.rightCols<3>() = R_cw * skew(pw[i]);
      const Eigen::Matrix<double, 2, 6> J = Jp * Jc;
      Hm.noalias() += J.transpose() * J;
      g.noalias() += J.transpose() * r;
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 6 && !accepted; ++attempt) {
      Matrix6d A = Hm;
      A.diagonal() += lambda * Hm.diagonal().cwiseMax(1e-12);
      const Vector6d d = A.ldlt().solve(-g);
      if (!d.allFinite()) return false;
      const Se3d T_new = se3_exp(d) * T_w_c;
      const double c_new = reprojection_cost(T_new, pw, px, use, k);
      if (c_new <= cost) {
        const bool small = d.norm() < 1e-12 || cost - c_new <= 1e-14 * std::max(1.0, cost);
        T_w_c = T_new;
        cost = c_new;
        lambda = std::max(1e-9, lambda / 10.0);
        accepted = true;
        if (small) return true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  return std::isfinite(cost);
}

std::optional<PnpResult> pnp_ransac(std::span<const Point3> points_w, std::span<const Pixel2> pixels,
                                    const CameraIntrinsics& k, const std::optional<Se3d>& T_guess,
                                    const PnpConfig& config) {
  if (points_w.size() != pixels.size()) throw Error(ErrorCode::InvalidArgument, "PnP inputs differ in length");
  const int n = static_cast<int>(points_w.size());
  if (n < 4) return std::nullopt;

  std::vector<Vector3d> bearings(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) bearings[i] = bearing(pixels[i], k);

  std::mt19937_64 rng(config.seed);
  std::vector<int> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> sample;
  std::vector<std::uint8_t> in;
  int best = -1;
  Se3d best_T;
  std::vector<std::uint8_t> best_in;
  auto consider = [&](const Se3d& T) {
    const int c = count_pnp_inliers(T, points_w, pixels, k, config.threshold_px, in);
    if (c > best) {
      best = c;
      best_T = T;
      best_in = in;
      return true;
    }
    return false;
  };
  if (T_guess) consider(*T_guess);
  int iters = config.max_iters;
  for (int it = 0; it < iters; ++it) {
    draw_sample(rng, pool, 3, sample);
    std::array<Vector3d, 3> f;
    std::array<Point3, 3> P;
    for (int j = 0; j < 3; ++j) {
      f[static_cast<std::size_t>(j)] = bearings[static_cast<std::size_t>(sample[static_cast<std::size_t>(j)])];
      P[static_cast<std::size_t>(j)] = points_w[static_cast<std::size_t>(sample[static_cast<std::size_t>(j)])];
    }
    for (const Se3d& T : p3p_solve(f, P)) {
      if (consider(T)) iters = adaptive_iterations(iters, best, n, 3, config.confidence);
    }
  }
  if (best < std::max(4, config.min_inliers)) return std::nullopt;

  PnpResult res;
  res.pose = best_T;
  res.inliers = best_in;
  for (int round = 0; round < 2; ++round) {
    if (!refine_pose_reprojection(res.pose, points_w, pixels, res.inliers, k, config.refine_iters)) {
      return std::nullopt;
    }
    res.num_inliers = count_pnp_inliers(res.pose, points_w, pixels, k, config.threshold_px, res.inliers);
  }
  if (res.num_inliers < config.min_inliers) return std::nullopt;
  const double cost = reprojection_cost(res.pose, points_w, pixels, res.inliers, k);
  res.rmse = std::sqrt(cost / res.num_inliers);
  return res;
}

// ---------------------------------------------------------------------------

Se3d constant_velocity_predict(const Se3d& T_km2, const Se3d& T_km1, double dt_prev, double dt_cur) {
  const double s = dt_prev > 0.0 ? dt_cur / dt_prev : 1.0;
  const Vector6d xi = se3_log(T_km2.inverse() * T_km1);
  return T_km1 * se3_exp<double>(s * xi);
}

namespace {

Se3d const_vel_pose(const InitContext& ctx) {
  if (!ctx.prev_prev_pose) return ctx.prev_pose;
  return constant_velocity_predict(*ctx.prev_prev_pose, ctx.prev_pose, ctx.dt_prev, ctx.dt_cur);
}

Matrix6d diag_cov(double sigma_t, double sigma_r) {
  Matrix6d C = Matrix6d::Zero();
  C.diagonal().head<3>().setConstant(sigma_t * sigma_t);
  C.diagonal().tail<3>().setConstant(sigma_r * sigma_r);
  return C;
}

// GICP between the current and previous camera clouds, returning T_c_prev_c_cur.
std::optional<GicpResult> gicp_relative(const InitContext& ctx, const Se3d& rel_init) {
  if (!ctx.use_gicp || !ctx.cur_cloud || !ctx.prev_cloud) return std::nullopt;
  try {
    GicpResult r = gicp_align(*ctx.cur_cloud, *ctx.prev_cloud, rel_init, ctx.gicp);
    return r;
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

PosePrediction predict_initial_pose(const InitContext& ctx) {
  PosePrediction out;
  if (ctx.legged) {
    out.pose = ctx.prev_pose * ctx.legged->pose;
    out.source = InitSource::Legged;
    out.covariance = ctx.legged->covariance;
    return out;
  }
  if (ctx.imu_healthy && ctx.imu_prediction) {
    out.pose = ctx.imu_prediction->pose;
    out.source = InitSource::Imu;
    out.covariance = ctx.imu_covariance;
    return out;
  }

  const Se3d cv = const_vel_pose(ctx);
  const Se3d T_c_b = ctx.T_b_c.inverse();
  const Se3d prev_cam = ctx.prev_pose * ctx.T_b_c;

  if (ctx.use_pnp && ctx.camera && ctx.prev_pixels.size() >= 8 && ctx.prev_pixels.size() == ctx.cur_pixels.size() &&
      ctx.match_points_w.size() == ctx.cur_pixels.size()) {
    std::vector<std::uint8_t> keep(ctx.cur_pixels.size(), 1);
    try {
      keep = essential_matrix_pose(ctx.prev_pixels, ctx.cur_pixels, *ctx.camera, ctx.essential).inliers;
    } catch (const Error&) {
      // Low parallax: PnP below still supplies a metric pose.
    }
    std::vector<Point3> pw;
    std::vector<Pixel2> px;
    for (std::size_t i = 0; i < ctx.cur_pixels.size(); ++i) {
      if (!keep[i] || !ctx.match_points_w[i]) continue;
      pw.push_back(*ctx.match_points_w[i]);
      px.push_back(ctx.cur_pixels[i]);
    }
    if (const auto pnp = pnp_ransac(pw, px, *ctx.camera, cv * ctx.T_b_c, ctx.pnp)) {
      Se3d cam = pnp->pose;
      if (const auto g = gicp_relative(ctx, prev_cam.inverse() * cam); g && g->converged && !g->weakly_constrained) {
        cam = prev_cam * g->pose;
      }
      out.pose = cam * T_c_b;
      out.source = InitSource::EssentialPnp;
      out.covariance = diag_cov(0.01, deg2rad(0.5));
      return out;
    }
  }

  if (const auto g = gicp_relative(ctx, prev_cam.inverse() * (cv * ctx.T_b_c)); g && g->converged) {
    out.pose = prev_cam * g->pose * T_c_b;
    out.source = InitSource::Gicp;
    out.covariance = diag_cov(g->weakly_constrained ? 0.1 : 0.01, deg2rad(g->weakly_constrained ? 5.0 : 0.5));
    return out;
  }

  out.pose = cv;
  out.source = InitSource::ConstVel;
  out.covariance = diag_cov(0.05, deg2rad(2.0));
  return out;
}

}  // namespace legslam
