#include "legslam/evaluation.hpp"

#include <Eigen/Geometry>
#include <cmath>

namespace legslam {

namespace {

struct Pairs {
  std::vector<Se3d> est, truth;
  std::vector<double> stamps;
};

Pairs pair_up(const Trajectory& estimate, const Trajectory& truth, double max_offset) {
  std::vector<double> a, b;
  for (const auto& p : estimate) a.push_back(p.timestamp);
  for (const auto& p : truth) b.push_back(p.timestamp);
  Pairs out;
  for (const auto& [i, j] : associate_timestamps(a, b, max_offset)) {
    out.est.push_back(estimate[static_cast<std::size_t>(i)].pose);
    out.truth.push_back(truth[static_cast<std::size_t>(j)].pose);
    out.stamps.push_back(a[static_cast<std::size_t>(i)]);
  }
  if (out.est.size() < 3) throw Error(ErrorCode::TooFewPairs, "need at least three associated poses");
  return out;
}

double relative_error(const Se3d& e0, const Se3d& e1, const Se3d& g0, const Se3d& g1) {
  return ((g0.inverse() * g1).inverse() * (e0.inverse() * e1)).translation().norm();
}

}  // namespace

AteResult compute_ate(const Trajectory& estimate, const Trajectory& truth, double max_offset) {
  const Pairs p = pair_up(estimate, truth, max_offset);
  const Eigen::Index n = static_cast<Eigen::Index>(p.est.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = p.est[static_cast<std::size_t>(i)].translation();
    dst.col(i) = p.truth[static_cast<std::size_t>(i)].translation();
  }
  const Eigen::Matrix4d T = Eigen::umeyama(src, dst, false);
  AteResult out;
  out.alignment = Se3d(Matrix3d(T.topLeftCorner<3, 3>()), Vector3d(T.topRightCorner<3, 1>()));
  out.pairs = static_cast<int>(n);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = (out.alignment * Vector3d(src.col(i)) - dst.col(i)).norm();
    out.errors.push_back(e);
    sum += e * e;
  }
  out.rmse = std::sqrt(sum / static_cast<double>(n));
  return out;
}

double compute_rte(const Trajectory& estimate, const Trajectory& truth, int delta_frames, double max_offset) {
  if (delta_frames < 1) throw Error(ErrorCode::InvalidArgument, "RTE delta must be at least one frame");
  const Pairs p = pair_up(estimate, truth, max_offset);
  const std::size_t d = static_cast<std::size_t>(delta_frames);
  if (p.est.size() <= d) throw Error(ErrorCode::TooFewPairs, "trajectory shorter than the RTE interval");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i + d < p.est.size(); ++i, ++n) {
    const double e = relative_error(p.est[i], p.est[i + d], p.truth[i], p.truth[i + d]);
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(n));
}

double compute_rte_seconds(const Trajectory& estimate, const Trajectory& truth, double delta_seconds,
                           double max_offset) {
  if (!(delta_seconds > 0.0)) throw Error(ErrorCode::InvalidArgument, "RTE interval must be positive");
  const Pairs p = pair_up(estimate, truth, max_offset);
  double sum = 0.0;
  std::size_t n = 0, j = 0;
  for (std::size_t i = 0; i < p.est.size(); ++i) {
    j = std::max(j, i + 1);
    while (j < p.est.size() && p.stamps[j] - p.stamps[i] < delta_seconds) ++j;
    if (j >= p.est.size()) break;
    const double e = relative_error(p.est[i], p.est[j], p.truth[i], p.truth[j]);
    sum += e * e;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::TooFewPairs, "trajectory shorter than the RTE interval");
  return std::sqrt(sum / static_cast<double>(n));
}

}  // namespace legslam
