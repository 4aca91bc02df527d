#include "legslam/optimization.hpp"

#include <cmath>

namespace legslam {

MotionFactor select_motion_factor(const NavState& previous, const IntervalConstraints& c, const Vector3d& gravity,
                                  const SwapPolicy& policy, DivergenceReport* report) {
  if (c.imu && c.imu->dt() > 0.0) {
    if (policy.adaptive_legged && c.legged) {
      const Se3d pred = predict_state(previous, *c.imu, gravity).pose;
      const DivergenceReport d = imu_divergence_check(pred, previous.pose * c.legged->measured, policy.thresholds);
      if (report) *report = d;
      if (d.diverged) return MotionFactor::Legged;
    }
    return MotionFactor::Imu;
  }
  return c.legged ? MotionFactor::Legged : MotionFactor::None;
}

namespace {

double level_sigma(const FactorWeights& w, int level) { return w.reproj_sigma_px * std::ldexp(1.0, level); }

void add_interval(FactorGraphProblem& P, int i, int j, const IntervalConstraints& c, MotionFactor m,
                  const Se3d& T_b_c, const Vector3d& gravity, const FactorWeights& w) {
  if (m == MotionFactor::Imu) P.add_imu(i, j, *c.imu, gravity);
  if (m == MotionFactor::Legged) {
    P.add_relative_pose(FactorKind::LeggedRel, i, j, c.legged->measured, c.legged->information, Se3d(),
                        w.relative_huber);
  }
  if (c.gicp) {
    P.add_relative_pose(FactorKind::GicpRel, i, j, c.gicp->measured, c.gicp->information, T_b_c, w.relative_huber);
  }
}

}  // namespace

SingleFrameResult optimize_single_frame(const SingleFrameProblem& sp, const FactorWeights& w,
                                        const SwapPolicy& policy, const LmConfig& lm) {
  FactorGraphProblem P;
  P.set_robust(w.robust);
  const int prev = P.add_state(sp.previous, true);
  P.state(prev).fix_bias = true;
  if (sp.previous_velocity_sigma > 0.0) {
    P.add_velocity_prior(prev, sp.previous.velocity,
                         Matrix3d::Identity() / (sp.previous_velocity_sigma * sp.previous_velocity_sigma));
  } else {
    P.state(prev).fix_velocity = true;
  }
  const int cur = P.add_state(sp.current);

  for (const auto& o : sp.observations) {
    const int pt = P.add_point(o.point_w, true);
    P.add_reprojection(cur, pt, o.pixel, sp.camera, sp.T_b_c, level_sigma(w, o.level), w.reproj_huber);
  }
  for (const auto& pl : sp.planes) {
    P.add_depth_to_map(cur, pl.p_c, pl.n_w, pl.q_w, sp.T_b_c, w.plane_sigma_m, w.plane_huber_m);
  }
  SingleFrameResult out;
  out.motion_factor = select_motion_factor(sp.previous, sp.motion, sp.gravity, policy);
  add_interval(P, prev, cur, sp.motion, out.motion_factor, sp.T_b_c, sp.gravity, w);

  out.summary = lm_optimize(P, lm);
  out.state = P.state(cur).state;
  return out;
}

LocalWindowResult optimize_local_window(const LocalWindowProblem& wp, const FactorWeights& w,
                                        const SwapPolicy& policy, const LmConfig& lm) {
  if (wp.keyframes.size() < 2) throw Error(ErrorCode::InvalidArgument, "local window needs two keyframes");
  FactorGraphProblem P;
  P.set_robust(w.robust);
  bool any_fixed = false;
  for (const auto& kf : wp.keyframes) any_fixed = any_fixed || kf.fixed;
  for (std::size_t k = 0; k < wp.keyframes.size(); ++k) {
    const bool fixed = wp.keyframes[k].fixed || (!any_fixed && k == 0);
    const int id = P.add_state(wp.keyframes[k].state, fixed);
    P.state(id).fix_velocity = fixed && wp.keyframes[k].fixed;
    P.state(id).fix_bias = fixed && wp.keyframes[k].fixed;
  }

  std::vector<int> seen(wp.points.size(), 0);
  for (const auto& o : wp.observations) ++seen.at(static_cast<std::size_t>(o.point));
  for (std::size_t i = 0; i < wp.points.size(); ++i) P.add_point(wp.points[i], seen[i] < 2);

  for (const auto& o : wp.observations) {
    if (o.depth > 0.0) {
      const double sz = w.depth_sigma_const + w.depth_sigma_quad * o.depth * o.depth;
      P.add_rgbd_observation(o.keyframe, o.point, o.pixel, o.depth, wp.camera, wp.T_b_c, level_sigma(w, o.level), sz,
                             w.reproj_huber);
    } else {
      P.add_reprojection(o.keyframe, o.point, o.pixel, wp.camera, wp.T_b_c, level_sigma(w, o.level),
                         w.reproj_huber);
    }
  }
  LocalWindowResult out;
  out.motion_factors.assign(wp.keyframes.size(), MotionFactor::None);
  for (std::size_t k = 0; k < wp.keyframes.size(); ++k) {
    const auto& kf = wp.keyframes[k];
    const int id = static_cast<int>(k);
    for (const auto& pl : kf.planes) {
      P.add_depth_to_map(id, pl.p_c, pl.n_w, pl.q_w, wp.T_b_c, w.plane_sigma_m, w.plane_huber_m);
    }
    if (k == 0) continue;
    const MotionFactor m = select_motion_factor(wp.keyframes[k - 1].state, kf.from_previous, wp.gravity, policy);
    out.motion_factors[k] = m;
    add_interval(P, id - 1, id, kf.from_previous, m, wp.T_b_c, wp.gravity, w);
  }

  out.summary = lm_optimize(P, lm);
  for (std::size_t k = 0; k < wp.keyframes.size(); ++k) out.states.push_back(P.state(static_cast<int>(k)).state);
  for (std::size_t i = 0; i < wp.points.size(); ++i) out.points.push_back(P.point(static_cast<int>(i)).position);
  return out;
}

}  // namespace legslam
