#include "legslam/factor_graph.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>

namespace legslam {

std::string_view to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::Reproj: return "reproj";
    case FactorKind::Imu: return "imu";
    case FactorKind::BiasWalk: return "bias_walk";
    case FactorKind::GicpRel: return "gicp_rel";
    case FactorKind::DepthToMap: return "depth_to_map";
    case FactorKind::LeggedRel: return "legged_rel";
    case FactorKind::Prior: return "prior";
  }
  return "unknown";
}

Eigen::MatrixXd information_sqrt(const Eigen::MatrixXd& information) {
  const Eigen::MatrixXd sym = 0.5 * (information + information.transpose());
  if (!sym.allFinite()) throw Error(ErrorCode::InvalidArgument, "information matrix is not finite");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd ev = eig.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -tol || !(ev.maxCoeff() > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "information matrix is not positive semi-definite");
  }
  // Zero eigenvalues leave their directions unconstrained.
  return ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

namespace {

// Square root of the inverse of an SPD covariance: S with S^T S = C^-1.
Eigen::MatrixXd covariance_sqrt_info(const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (cov + cov.transpose()));
  if (llt.info() != Eigen::Success || !cov.allFinite()) {
    throw Error(ErrorCode::InvalidArgument, "covariance is not positive definite");
  }
  const Eigen::MatrixXd L = llt.matrixL();
  return L.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
}

}  // namespace

int FactorGraphProblem::add_state(const NavState& state, bool fix_pose) {
  StateVar v;
  v.state = state;
  v.fix_pose = fix_pose;
  states_.push_back(v);
  return static_cast<int>(states_.size()) - 1;
}

int FactorGraphProblem::add_point(const Point3& position, bool fixed) {
  if (!position.allFinite()) throw Error(ErrorCode::InvalidArgument, "map point is not finite");
  points_.push_back({position, fixed});
  return static_cast<int>(points_.size()) - 1;
}

void FactorGraphProblem::push(FactorKind kind, Payload payload, double huber) {
  factors_.push_back({kind, std::move(payload), robust_ ? huber : 0.0});
}

std::size_t FactorGraphProblem::count(FactorKind kind) const {
  std::size_t n = 0;
  for (const auto& f : factors_) n += f.kind == kind ? 1 : 0;
  return n;
}

void FactorGraphProblem::add_reprojection(int s, int p, const Pixel2& observed, const CameraIntrinsics& camera,
                                          const Se3d& T_b_c, double sigma_px, double huber) {
  if (!(sigma_px > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  state(s);
  point(p);
  push(FactorKind::Reproj, ReprojF{s, p, observed, camera, T_b_c, sigma_px}, huber);
}

void FactorGraphProblem::add_rgbd_observation(int s, int p, const Pixel2& observed, double depth,
                                              const CameraIntrinsics& camera, const Se3d& T_b_c, double sigma_px,
                                              double sigma_depth, double huber) {
  if (!(sigma_px > 0.0) || !(sigma_depth > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  if (!(depth > 0.0)) throw Error(ErrorCode::InvalidArgument, "depth must be positive");
  state(s);
  point(p);
  push(FactorKind::Reproj, ReprojF{s, p, observed, camera, T_b_c, sigma_px, depth, sigma_depth}, huber);
}

void FactorGraphProblem::add_depth_to_map(int s, const Point3& p_c, const Vector3d& n_w, const Point3& q_w,
                                          const Se3d& T_b_c, double sigma_m, double huber_m) {
  if (!(sigma_m > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  state(s);
  push(FactorKind::DepthToMap, PlaneF{s, p_c, n_w, q_w, T_b_c, sigma_m}, huber_m / sigma_m);
}

void FactorGraphProblem::add_relative_pose(FactorKind kind, int i, int j, const Se3d& measured,
                                           const Matrix6d& information, const Se3d& extrinsic, double huber) {
  state(i);
  state(j);
  push(kind, RelF{i, j, measured, information_sqrt(information), extrinsic}, huber);
}

void FactorGraphProblem::add_imu(int i, int j, const ImuPreintegration& preint, const Vector3d& gravity) {
  state(i);
  state(j);
  if (!(preint.dt() > 0.0)) throw Error(ErrorCode::InvalidArgument, "IMU factor needs a positive interval");
  const Matrix9d cov = preint.covariance() + Matrix9d::Identity() * 1e-14;
  push(FactorKind::Imu,
       ImuF{i, j, std::make_shared<ImuPreintegration>(preint), gravity, covariance_sqrt_info(cov)}, 0.0);
  add_bias_walk(i, j, bias_walk_covariance(preint.noise(), preint.dt()) + Matrix6d::Identity() * 1e-14);
}

void FactorGraphProblem::add_bias_walk(int i, int j, const Matrix6d& covariance) {
  state(i);
  state(j);
  push(FactorKind::BiasWalk, BiasWalkF{i, j, covariance_sqrt_info(covariance)}, 0.0);
}

void FactorGraphProblem::add_pose_prior(int s, const Se3d& T0, const Matrix6d& information) {
  state(s);
  push(FactorKind::Prior, PosePriorF{s, T0, information_sqrt(information)}, 0.0);
}

void FactorGraphProblem::add_velocity_prior(int s, const Vector3d& v0, const Matrix3d& information) {
  state(s);
  push(FactorKind::Prior, VelPriorF{s, v0, information_sqrt(information)}, 0.0);
}

void FactorGraphProblem::add_bias_prior(int s, const ImuBias& b0, const Matrix6d& information) {
  state(s);
  push(FactorKind::Prior, BiasPriorF{s, b0, information_sqrt(information)}, 0.0);
}

// ---------------------------------------------------------------------------
// Solver

namespace {

enum class Slot { Pose, Velocity, Bias, Point };

struct BlockJac {
  Slot slot;
  int owner;  // state or point index
  Eigen::MatrixXd J;
};

struct Evaluation {
  bool active = false;
  Eigen::VectorXd r;
  std::vector<BlockJac> blocks;
};

Vector6d bias_vec(const ImuBias& b) {
  Vector6d v;
  v << b.gyro, b.accel;
  return v;
}

struct Evaluator {
  const FactorGraphProblem& P;
  bool with_jacobians;

  Evaluation operator()(const FactorGraphProblem::ReprojF& f) const {
    Evaluation e;
    const Se3d T_w_c = P.state(f.state).state.pose * f.T_b_c;
    const auto res = reproj_residual(T_w_c, P.point(f.point).position, f.observed, f.camera);
    if (!res) return e;
    e.active = true;
    if (f.depth_sigma <= 0.0) {
      e.r = res->r / f.sigma;
      if (with_jacobians) {
        e.blocks.push_back({Slot::Pose, f.state, res->J_pose / f.sigma});
        e.blocks.push_back({Slot::Point, f.point, res->J_point / f.sigma});
      }
      return e;
    }
    const DepthResidual d = depth_residual(T_w_c, P.point(f.point).position, f.depth);
    e.r.resize(3);
    e.r << res->r / f.sigma, d.r / f.depth_sigma;
    if (with_jacobians) {
      Eigen::MatrixXd Jp(3, 6), Jx(3, 3);
      Jp << res->J_pose / f.sigma, d.J_pose / f.depth_sigma;
      Jx << res->J_point / f.sigma, d.J_point / f.depth_sigma;
      e.blocks.push_back({Slot::Pose, f.state, std::move(Jp)});
      e.blocks.push_back({Slot::Point, f.point, std::move(Jx)});
    }
    return e;
  }

  Evaluation operator()(const FactorGraphProblem::PlaneF& f) const {
    Evaluation e;
    const Se3d T_w_c = P.state(f.state).state.pose * f.T_b_c;
    const PlaneResidual res = point_to_plane_residual(T_w_c, f.p_c, f.n_w, f.q_w);
    e.active = true;
    e.r = Eigen::VectorXd::Constant(1, res.r / f.sigma);
    if (with_jacobians) e.blocks.push_back({Slot::Pose, f.state, res.J_pose / f.sigma});
    return e;
  }

  Evaluation operator()(const FactorGraphProblem::RelF& f) const {
    Evaluation e;
    const auto res =
        relative_pose_residual(P.state(f.i).state.pose, P.state(f.j).state.pose, f.measured, f.extrinsic);
    e.active = true;
    e.r = f.sqrt_info * res.r;
    if (with_jacobians) {
      e.blocks.push_back({Slot::Pose, f.i, f.sqrt_info * res.J_i});
      e.blocks.push_back({Slot::Pose, f.j, f.sqrt_info * res.J_j});
    }
    return e;
  }

  Evaluation operator()(const FactorGraphProblem::ImuF& f) const {
    Evaluation e;
    const auto res = imu_residual(P.state(f.i).state, P.state(f.j).state, *f.preint, f.gravity);
    e.active = true;
    e.r = f.sqrt_info * res.r;
    if (with_jacobians) {
      e.blocks.push_back({Slot::Pose, f.i, f.sqrt_info * res.J_pose_i});
      e.blocks.push_back({Slot::Velocity, f.i, f.sqrt_info * res.J_vel_i});
      e.blocks.push_back({Slot::Bias, f.i, f.sqrt_info * res.J_bias_i});
      e.blocks.push_back({Slot::Pose, f.j, f.sqrt_info * res.J_pose_j});
      e.blocks.push_back({Slot::Velocity, f.j, f.sqrt_info * res.J_vel_j});
    }
    return e;
  }

  Evaluation operator()(const FactorGraphProblem::BiasWalkF& f) const {
    Evaluation e;
    e.active = true;
    e.r = f.sqrt_info * (bias_vec(P.state(f.j).state.bias) - bias_vec(P.state(f.i).state.bias));
    if (with_jacobians) {
      e.blocks.push_back({Slot::Bias, f.i, -f.sqrt_info});
      e.blocks.push_back({Slot::Bias, f.j, f.sqrt_info});
    }
    return e;
  }

  Evaluation operator()(const FactorGraphProblem::PosePriorF& f) const {
    Evaluation e;
    const Vector6d r = se3_log(P.state(f.state).state.pose * f.T0.inverse());
    e.active = true;
    e.r = f.sqrt_info * r;
    if (with_jacobians) {
      e.blocks.push_back({Slot::Pose, f.state, f.sqrt_info * se3_left_jacobian_inverse(r)});
    }
    return e;
  }

  Evaluation operator()(const FactorGraphProblem::VelPriorF& f) const {
    Evaluation e;
    e.active = true;
    e.r = f.sqrt_info * (P.state(f.state).state.velocity - f.v0);
    if (with_jacobians) e.blocks.push_back({Slot::Velocity, f.state, f.sqrt_info});
    return e;
  }

  Evaluation operator()(const FactorGraphProblem::BiasPriorF& f) const {
    Evaluation e;
    e.active = true;
    e.r = f.sqrt_info * (bias_vec(P.state(f.state).state.bias) - bias_vec(f.b0));
    if (with_jacobians) e.blocks.push_back({Slot::Bias, f.state, f.sqrt_info});
    return e;
  }
};

HuberResult robustify(double s, double delta) {
  if (delta > 0.0) return huber_weight(s, delta);
  return {s * s, 1.0};
}

// Offsets of free variables: camera-side blocks (pose, velocity, bias) are
// packed into one dense vector, points into another.
struct Layout {
  std::vector<int> pose, vel, bias, point;
  int n_cam = 0;
  int n_points = 0;  // number of free points

  int offset(Slot s, int owner) const {
    switch (s) {
      case Slot::Pose: return pose[static_cast<std::size_t>(owner)];
      case Slot::Velocity: return vel[static_cast<std::size_t>(owner)];
      case Slot::Bias: return bias[static_cast<std::size_t>(owner)];
      case Slot::Point: return point[static_cast<std::size_t>(owner)];
    }
    return -1;
  }
};

Layout make_layout(const FactorGraphProblem& P) {
  const std::size_t ns = P.num_states(), np = P.num_points();
  std::vector<char> use_pose(ns, 0), use_vel(ns, 0), use_bias(ns, 0), use_point(np, 0);
  const Evaluator ev{P, true};
  for (const auto& f : P.factors()) {
    const Evaluation e = std::visit(ev, f.payload);
    for (const auto& b : e.blocks) {
      const auto o = static_cast<std::size_t>(b.owner);
      switch (b.slot) {
        case Slot::Pose: use_pose[o] = 1; break;
        case Slot::Velocity: use_vel[o] = 1; break;
        case Slot::Bias: use_bias[o] = 1; break;
        case Slot::Point: use_point[o] = 1; break;
      }
    }
    // Factors inactive at the start still reference their variables.
    if (!e.active) {
      if (const auto* r = std::get_if<FactorGraphProblem::ReprojF>(&f.payload)) {
        use_pose[static_cast<std::size_t>(r->state)] = 1;
        use_point[static_cast<std::size_t>(r->point)] = 1;
      }
    }
  }
  Layout L;
  L.pose.assign(ns, -1);
  L.vel.assign(ns, -1);
  L.bias.assign(ns, -1);
  L.point.assign(np, -1);
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& s = P.state(static_cast<int>(i));
    if (use_pose[i] && !s.fix_pose) { L.pose[i] = L.n_cam; L.n_cam += 6; }
    if (use_vel[i] && !s.fix_velocity) { L.vel[i] = L.n_cam; L.n_cam += 3; }
    if (use_bias[i] && !s.fix_bias) { L.bias[i] = L.n_cam; L.n_cam += 6; }
  }
  for (std::size_t i = 0; i < np; ++i) {
    if (use_point[i] && !P.point(static_cast<int>(i)).fixed) L.point[i] = L.n_points++;
  }
  return L;
}

struct Cost {
  double total = 0.0;
  int active = 0;
};

Cost compute_cost(const FactorGraphProblem& P) {
  const Evaluator ev{P, false};
  Cost c;
  for (const auto& f : P.factors()) {
    const Evaluation e = std::visit(ev, f.payload);
    if (!e.active) continue;
    if (!e.r.allFinite()) throw Error(ErrorCode::NumericalFailure, "residual is not finite");
    c.total += robustify(e.r.norm(), f.huber).rho;
    ++c.active;
  }
  return c;
}

struct NormalEquations {
  Eigen::MatrixXd Hcc;
  Eigen::VectorXd gc;
  std::vector<Matrix3d> Hpp;
  std::vector<Vector3d> gp;
  std::vector<Eigen::MatrixXd> Hcp;  // n_cam x 3 per free point
};

NormalEquations build_normal_equations(const FactorGraphProblem& P, const Layout& L) {
  NormalEquations ne;
  ne.Hcc = Eigen::MatrixXd::Zero(L.n_cam, L.n_cam);
  ne.gc = Eigen::VectorXd::Zero(L.n_cam);
  ne.Hpp.assign(static_cast<std::size_t>(L.n_points), Matrix3d::Zero());
  ne.gp.assign(static_cast<std::size_t>(L.n_points), Vector3d::Zero());
  ne.Hcp.assign(static_cast<std::size_t>(L.n_points), Eigen::MatrixXd::Zero(L.n_cam, 3));
  const Evaluator ev{P, true};
  for (const auto& f : P.factors()) {
    const Evaluation e = std::visit(ev, f.payload);
    if (!e.active) continue;
    const double w = robustify(e.r.norm(), f.huber).weight;
    for (std::size_t a = 0; a < e.blocks.size(); ++a) {
      const BlockJac& A = e.blocks[a];
      const int oa = L.offset(A.slot, A.owner);
      if (oa < 0) continue;
      const Eigen::VectorXd ga = w * A.J.transpose() * e.r;
      if (A.slot == Slot::Point) {
        ne.gp[static_cast<std::size_t>(oa)] += ga;
      } else {
        ne.gc.segment(oa, ga.size()) += ga;
      }
      for (std::size_t b = 0; b < e.blocks.size(); ++b) {
        const BlockJac& B = e.blocks[b];
        const int ob = L.offset(B.slot, B.owner);
        if (ob < 0) continue;
        const Eigen::MatrixXd Hab = w * A.J.transpose() * B.J;
        const bool pa = A.slot == Slot::Point, pb = B.slot == Slot::Point;
        if (!pa && !pb) {
          ne.Hcc.block(oa, ob, Hab.rows(), Hab.cols()) += Hab;
        } else if (pa && pb) {
          // Each factor observes at most one point.
          ne.Hpp[static_cast<std::size_t>(oa)] += Hab;
        } else if (!pa && pb) {
          ne.Hcp[static_cast<std::size_t>(ob)].middleRows(oa, Hab.rows()) += Hab;
        }
      }
    }
  }
  return ne;
}

double damp(double d, double lambda) { return lambda * std::max(d, 1e-9); }

// Solves (H + lambda D) [dc; dp] = -g.
bool solve_step(const NormalEquations& ne, double lambda, bool schur, Eigen::VectorXd& dc,
                std::vector<Vector3d>& dp) {
  const int nc = static_cast<int>(ne.gc.size());
  const int np = static_cast<int>(ne.gp.size());
  Eigen::MatrixXd Hcc = ne.Hcc;
  for (int i = 0; i < nc; ++i) Hcc(i, i) += damp(ne.Hcc(i, i), lambda);
  std::vector<Matrix3d> Hpp = ne.Hpp;
  for (auto& H : Hpp) {
    for (int i = 0; i < 3; ++i) H(i, i) += damp(H(i, i), lambda);
  }
  dp.assign(static_cast<std::size_t>(np), Vector3d::Zero());

  if (!schur) {
    const int n = nc + 3 * np;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd g(n);
    H.topLeftCorner(nc, nc) = Hcc;
    g.head(nc) = ne.gc;
    for (int p = 0; p < np; ++p) {
      const auto k = static_cast<std::size_t>(p);
      H.block<3, 3>(nc + 3 * p, nc + 3 * p) = Hpp[k];
      H.block(0, nc + 3 * p, nc, 3) = ne.Hcp[k];
      H.block(nc + 3 * p, 0, 3, nc) = ne.Hcp[k].transpose();
      g.segment<3>(nc + 3 * p) = ne.gp[k];
    }
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success) return false;
    const Eigen::VectorXd x = llt.solve(-g);
    if (!x.allFinite()) return false;
    dc = x.head(nc);
    for (int p = 0; p < np; ++p) dp[static_cast<std::size_t>(p)] = x.segment<3>(nc + 3 * p);
    return true;
  }

  Eigen::MatrixXd S = Hcc;
  Eigen::VectorXd rhs = -ne.gc;
  std::vector<Matrix3d> Hinv(static_cast<std::size_t>(np));
  for (int p = 0; p < np; ++p) {
    const auto k = static_cast<std::size_t>(p);
    Eigen::LLT<Matrix3d> llt(Hpp[k]);
    if (llt.info() != Eigen::Success) return false;
    Hinv[k] = llt.solve(Matrix3d::Identity());
    if (nc == 0) continue;
    const Eigen::MatrixXd W = ne.Hcp[k] * Hinv[k];
    S.noalias() -= W * ne.Hcp[k].transpose();
    rhs.noalias() += W * ne.gp[k];
  }
  if (nc > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (S + S.transpose()));
    if (llt.info() != Eigen::Success) return false;
    dc = llt.solve(rhs);
    if (!dc.allFinite()) return false;
  } else {
    dc.resize(0);
  }
  for (int p = 0; p < np; ++p) {
    const auto k = static_cast<std::size_t>(p);
    Vector3d r = -ne.gp[k];
    if (nc > 0) r.noalias() -= ne.Hcp[k].transpose() * dc;
    dp[k] = Hinv[k] * r;
  }
  return true;
}

void apply_step(FactorGraphProblem& P, const Layout& L, const Eigen::VectorXd& dc,
                const std::vector<Vector3d>& dp) {
  for (std::size_t i = 0; i < P.num_states(); ++i) {
    auto& s = P.state(static_cast<int>(i)).state;
    if (L.pose[i] >= 0) s.pose = se3_retract<double>(s.pose, dc.segment<6>(L.pose[i]));
    if (L.vel[i] >= 0) s.velocity += dc.segment<3>(L.vel[i]);
    if (L.bias[i] >= 0) {
      s.bias.gyro += dc.segment<3>(L.bias[i]);
      s.bias.accel += dc.segment<3>(L.bias[i] + 3);
    }
  }
  for (std::size_t i = 0; i < P.num_points(); ++i) {
    if (L.point[i] >= 0) P.point(static_cast<int>(i)).position += dp[static_cast<std::size_t>(L.point[i])];
  }
}

}  // namespace

double evaluate_cost(const FactorGraphProblem& problem) { return compute_cost(problem).total; }

LmSummary lm_optimize(FactorGraphProblem& P, const LmConfig& config) {
  LmSummary sum;
  Cost cost = compute_cost(P);
  if (cost.active == 0) throw Error(ErrorCode::InvalidArgument, "problem has no active residual");
  if (!std::isfinite(cost.total)) throw Error(ErrorCode::NumericalFailure, "initial cost is not finite");
  sum.initial_cost = cost.total;
  sum.cost_trace.push_back(cost.total);
  sum.active_factors = cost.active;
  const Layout L = make_layout(P);
  if (cost.total == 0.0 || L.n_cam + L.n_points == 0) {
    sum.converged = true;
    sum.final_cost = cost.total;
    return sum;
  }

  double lambda = config.initial_lambda;
  NormalEquations ne = build_normal_equations(P, L);
  while (sum.iterations < config.max_iterations) {
    ++sum.iterations;
    Eigen::VectorXd dc;
    std::vector<Vector3d> dp;
    if (!solve_step(ne, lambda, config.use_schur, dc, dp)) {
      throw Error(ErrorCode::NumericalFailure, "reduced system is singular");
    }
    double step2 = dc.squaredNorm();
    for (const auto& d : dp) step2 += d.squaredNorm();
    if (std::sqrt(step2) < config.update_norm_tol) {
      sum.converged = true;
      break;
    }
    const std::vector<FactorGraphProblem::StateVar> saved_states = [&] {
      std::vector<FactorGraphProblem::StateVar> v;
      for (std::size_t i = 0; i < P.num_states(); ++i) v.push_back(P.state(static_cast<int>(i)));
      return v;
    }();
    std::vector<Point3> saved_points;
    for (std::size_t i = 0; i < P.num_points(); ++i) saved_points.push_back(P.point(static_cast<int>(i)).position);

    apply_step(P, L, dc, dp);
    const Cost next = compute_cost(P);
    if (!std::isfinite(next.total)) throw Error(ErrorCode::NumericalFailure, "cost became non-finite");
    if (next.total <= cost.total) {
      const double rel = (cost.total - next.total) / std::max(cost.total, 1e-300);
      cost = next;
      sum.cost_trace.push_back(cost.total);
      lambda = std::max(lambda / 3.0, 1e-12);
      if (rel < config.relative_decrease_tol || cost.total == 0.0) {
        sum.converged = true;
        break;
      }
      ne = build_normal_equations(P, L);
    } else {
      for (std::size_t i = 0; i < saved_states.size(); ++i) P.state(static_cast<int>(i)) = saved_states[i];
      for (std::size_t i = 0; i < saved_points.size(); ++i) P.point(static_cast<int>(i)).position = saved_points[i];
      lambda *= 10.0;
      if (lambda > 1e12) {
        sum.converged = true;
        break;
      }
    }
  }
  sum.final_cost = cost.total;
  sum.active_factors = cost.active;
  return sum;
}

}  // namespace legslam
