#pragma once

// Factor-graph problem over navigation states and map points, solved by
// Levenberg-Marquardt with a Schur complement over the points.

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "legslam/factors.hpp"

namespace legslam {

enum class FactorKind { Reproj, Imu, BiasWalk, GicpRel, DepthToMap, LeggedRel, Prior };

std::string_view to_string(FactorKind kind);

/// Default robust-kernel knees, in whitened units.
struct RobustDefaults {
  static constexpr double reproj = 1.345;             // px at sigma = 1 px
  static constexpr double point_to_plane_m = 0.1;     // meters
  static constexpr double relative_pose = 2.44744765; // sqrt(5.99)
};

class FactorGraphProblem {
 public:
  struct StateVar {
    NavState state;
    bool fix_pose = false;
    bool fix_velocity = false;
    bool fix_bias = false;
  };
  struct PointVar {
    Point3 position = Point3::Zero();
    bool fixed = false;
  };

  int add_state(const NavState& state, bool fix_pose = false);
  int add_point(const Point3& position, bool fixed = false);

  StateVar& state(int i) { return states_.at(static_cast<std::size_t>(i)); }
  const StateVar& state(int i) const { return states_.at(static_cast<std::size_t>(i)); }
  PointVar& point(int i) { return points_.at(static_cast<std::size_t>(i)); }
  const PointVar& point(int i) const { return points_.at(static_cast<std::size_t>(i)); }
  std::size_t num_states() const { return states_.size(); }
  std::size_t num_points() const { return points_.size(); }

  /// Pixel observation of a map point with isotropic sigma (pixels).
  void add_reprojection(int state, int point, const Pixel2& observed, const CameraIntrinsics& camera,
                        const Se3d& T_b_c, double sigma_px = 1.0, double huber = RobustDefaults::reproj);
  /// Pixel plus measured camera depth (RGB-D); a single robustified 3-row
  /// residual counted as a reprojection factor.
  void add_rgbd_observation(int state, int point, const Pixel2& observed, double depth, const CameraIntrinsics& camera,
                            const Se3d& T_b_c, double sigma_px, double sigma_depth,
                            double huber = RobustDefaults::reproj);
  /// Camera-frame plane point against a fitted world plane.
  void add_depth_to_map(int state, const Point3& p_c, const Vector3d& n_w, const Point3& q_w, const Se3d& T_b_c,
                        double sigma_m = 0.02, double huber_m = RobustDefaults::point_to_plane_m);
  /// Relative pose between the sensor frames T_i E and T_j E.
  void add_relative_pose(FactorKind kind, int i, int j, const Se3d& measured, const Matrix6d& information,
                         const Se3d& extrinsic = Se3d(), double huber = RobustDefaults::relative_pose);
  /// Preintegrated IMU factor; also adds the bias random walk between i and j.
  void add_imu(int i, int j, const ImuPreintegration& preint, const Vector3d& gravity);
  void add_bias_walk(int i, int j, const Matrix6d& covariance);
  /// Pose prior r = log(T T0^-1).
  void add_pose_prior(int state, const Se3d& T0, const Matrix6d& information);
  void add_velocity_prior(int state, const Vector3d& v0, const Matrix3d& information);
  void add_bias_prior(int state, const ImuBias& b0, const Matrix6d& information);

  /// Disables the robust kernel on every factor added afterwards.
  void set_robust(bool on) { robust_ = on; }

  std::size_t num_factors() const { return factors_.size(); }
  std::size_t count(FactorKind kind) const;

  // Factor payloads; public so the solver can evaluate them.
  struct ReprojF {
    int state, point;
    Pixel2 observed;
    CameraIntrinsics camera;
    Se3d T_b_c;
    double sigma;
    double depth = 0.0;
    double depth_sigma = 0.0;  // zero: pixel only
  };
  struct PlaneF {
    int state;
    Point3 p_c;
    Vector3d n_w;
    Point3 q_w;
    Se3d T_b_c;
    double sigma;
  };
  struct RelF {
    int i, j;
    Se3d measured;
    Eigen::Matrix<double, 6, 6> sqrt_info;  // S with info = S^T S
    Se3d extrinsic;
  };
  struct ImuF {
    int i, j;
    std::shared_ptr<const ImuPreintegration> preint;
    Vector3d gravity;
    Matrix9d sqrt_info;
  };
  struct BiasWalkF {
    int i, j;
    Matrix6d sqrt_info;
  };
  struct PosePriorF {
    int state;
    Se3d T0;
    Matrix6d sqrt_info;
  };
  struct VelPriorF {
    int state;
    Vector3d v0;
    Matrix3d sqrt_info;
  };
  struct BiasPriorF {
    int state;
    ImuBias b0;
    Matrix6d sqrt_info;
  };
  using Payload = std::variant<ReprojF, PlaneF, RelF, ImuF, BiasWalkF, PosePriorF, VelPriorF, BiasPriorF>;
  struct Factor {
    FactorKind kind;
    Payload payload;
    double huber = 0.0;  // whitened units; <= 0 disables
  };
  const std::vector<Factor>& factors() const { return factors_; }

 private:
  void push(FactorKind kind, Payload payload, double huber);

  std::vector<StateVar> states_;
  std::vector<PointVar> points_;
  std::vector<Factor> factors_;
  bool robust_ = true;
};

/// Square root S of a positive semi-definite information matrix (info = S^T S).
/// Throws InvalidArgument for indefinite, zero or non-finite input.
Eigen::MatrixXd information_sqrt(const Eigen::MatrixXd& information);

struct LmConfig {
  int max_iterations = 50;
  double initial_lambda = 1e-4;
  double relative_decrease_tol = 1e-8;
  double update_norm_tol = 1e-10;
  /// Eliminate points with a Schur complement; false solves the full system
  /// densely (reference mode).
  bool use_schur = true;
};

struct LmSummary {
  /// Cost before the first iteration and after every accepted step.
  std::vector<double> cost_trace;
  int iterations = 0;
  bool converged = false;
  int active_factors = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
};

/// Total robust cost sum rho(||r_whitened||) over active factors.
double evaluate_cost(const FactorGraphProblem& problem);

/// Optimizes the problem in place. Throws NumericalFailure on non-finite
/// cost or a singular reduced system and InvalidArgument when nothing is
/// active.
LmSummary lm_optimize(FactorGraphProblem& problem, const LmConfig& config = {});

}  // namespace legslam
