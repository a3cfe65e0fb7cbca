#pragma once

#include <string>
#include <vector>

#include "coupled/robot_model.hpp"
#include "coupled/spatial.hpp"

namespace coupled {

/// Rigid coupler held by all robots. `com` and `inertia` are expressed in the
/// common TCP frame; `attachments[i]` maps robot i's {t_i} frame to the TCP.
struct CouplerModel {
  double mass = 0.0;
  Vec3 com = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();
  std::vector<Pose> attachments;
};

/// n_R robots rigidly coupled at one TCP. Robot 0 is the calibrated reference
/// and must sit at the world origin.
struct CoupledSystem {
  std::vector<RobotModel> robots;
  std::vector<Pose> bases;  // nominal world pose of each robot base
  CouplerModel coupler;
  Vec3 gravity{0.0, 0.0, -9.81};

  int n_robots() const { return static_cast<int>(robots.size()); }
  int n_joints() const { return robots.empty() ? 0 : robots.front().n_joints(); }
  /// Length of x_a = [tau_m (all robots); lambda (all robots)].
  int algebraic_size() const { return n_robots() * n_joints() + 6 * n_robots(); }
  /// Length of x_d = [q_m (all robots); q_sp (all robots)].
  int differential_size() const { return 2 * n_robots() * n_joints(); }
  int input_size() const { return n_robots() * n_joints(); }

  int tau_offset(int robot) const { return robot * n_joints(); }
  int lambda_offset(int robot) const { return n_robots() * n_joints() + 6 * robot; }

  /// Throws ConfigError; rejects mismatched joint counts across robots.
  void validate() const;
};

/// Uncertain kinematic parameters p = [p_2, ..., p_nR], 12 entries per
/// follower robot: base error (rot xyz, trans xyz) then coupler error in the
/// coupler body frame (rot xyz, trans xyz).
struct KinematicParams {
  static constexpr int kPerRobot = 12;

  int n_followers = 0;
  VecX values;             // 12 * n_followers
  std::vector<bool> mask;  // which entries are estimated / nonzero

  static KinematicParams zeros(int n_robots);
  /// The five components that dominate in practice: base trans x, z; coupler
  /// rot x, z; coupler trans z.
  static std::vector<bool> default_mask(int n_robots);

  /// robot is the system index (1 .. n_R - 1).
  TwistError base_error(int robot) const;
  TwistError coupler_error(int robot) const;

  std::vector<int> estimated_indices() const;
  int n_estimated() const;
  VecX estimated() const;
  void set_estimated(const VecX& v);
  /// Zeroes every entry outside the mask.
  void apply_mask();

  static std::string label(int index);
};

/// Where kinematics and rigid-body dynamics of one robot are evaluated:
/// configuration q plus the velocity/acceleration fed to inverse dynamics.
struct RobotMotion {
  VecX q;
  VecX qd;
  VecX qdd;
};

struct TcpMotion {
  Pose pose;
  Vec6 velocity = Vec6::Zero();      // [angular; linear] of the TCP point, world axes
  Vec6 acceleration = Vec6::Zero();
};

struct AlgebraicState {
  std::vector<VecX> tau_m;
  std::vector<Vec6> lambda;

  VecX stacked() const;
  static AlgebraicState from_stacked(const VecX& x, int n_robots, int n_joints);
};

/// F x_a = b assembled at one instant, plus the pieces it was built from.
/// Wrench-like rows and lambda use constraint coordinates: the moment block is
/// expressed in the axes of robot 0's TCP frame, the force block in world axes.
/// This is the basis in which the rotational part of pose_diff is measured.
struct AlgebraicSystem {
  MatX F;
  VecX b;
  Mat3 constraint_rotation = Mat3::Identity();
  std::vector<Mat6X> jacobians;  // constraint-coordinate Jacobians J_i
  std::vector<VecX> tau_rbd;
  Vec6 coupler_wrench = Vec6::Zero();  // constraint coordinates
  Vec6 external_wrench = Vec6::Zero();
  std::vector<Vec6> gaps;  // entry i for robot i (entry 0 unused, zero)
};

struct LinearSolve {
  VecX x;
  double condition = 0.0;
};

struct CouplingOptions {
  /// 1: kinematics and RBD at q_m. 2: re-solve once at the link-side
  /// configuration q_m + K_J^-1 tau_m.
  int jacobian_passes = 1;
  double max_condition = 1e12;
};

struct AlgebraicSolution {
  AlgebraicSystem system;
  AlgebraicState state;
  VecX x_a;
  double condition = 0.0;
};

/// Nominal TCP pose of robot `robot` in the world at q (no parameter errors).
Pose nominal_tcp_pose(const CoupledSystem& sys, int robot, const VecX& q);

/// w_T_{t_i'}(q_mi, p_i) = w_T_bi * T(dp_bi) * T_kin_i(q_mi) * T(dp_cpi).
Pose tcp_pose_with_errors(const CoupledSystem& sys, int robot, const VecX& q, const KinematicParams& p);

/// diff(w_T_{t_i'}, w_T_{t_1}) for follower robot i >= 1.
TwistError gap_vector(const CoupledSystem& sys, const VecX& q_ref_robot, const VecX& q_robot, int robot,
                      const KinematicParams& p);

/// d gap_i / d p_i (6 x 12), closed form.
Eigen::Matrix<double, 6, 12> gap_parameter_jacobian(const CoupledSystem& sys, const VecX& q_ref_robot,
                                                    const VecX& q_robot, int robot, const KinematicParams& p);

/// Jacobian of robot i's TCP in world axes, [angular; linear].
Mat6X world_jacobian(const CoupledSystem& sys, int robot, const VecX& q);

/// TCP motion of the coupler as carried by robot 0.
TcpMotion tcp_motion(const CoupledSystem& sys, const RobotMotion& reference_robot);

/// Inertial-plus-gravity wrench of the coupler, [moment about TCP; force],
/// world axes: w_cp = [I a + w x I w + r x f ; m (a_com - g)].
Vec6 coupler_wrench(const CouplerModel& coupler, const TcpMotion& motion, const Vec3& gravity);

AlgebraicSystem assemble_algebraic(const CoupledSystem& sys, const std::vector<RobotMotion>& motions,
                                   const KinematicParams& p, const Vec6& w_ext_world);

/// Dense LU with partial pivoting. Throws SingularSystemError when the
/// condition estimate exceeds `max_condition`.
LinearSolve solve_algebraic(const MatX& F, const VecX& b, double max_condition = 1e12);

AlgebraicSolution solve_coupled(const CoupledSystem& sys, const std::vector<RobotMotion>& motions,
                                const KinematicParams& p, const Vec6& w_ext_world,
                                const CouplingOptions& options = {});

struct BlockResiduals {
  double robot_dynamics = 0.0;   // -tau_m + J^T lambda - tau_RBD
  double coupler_balance = 0.0;  // -sum lambda - (w_cp - w_ext)
  double loop_closure = 0.0;     // J_1 K^-1 tau_1 - J_i K^-1 tau_i - gap_i
  double max() const { return std::max({robot_dynamics, coupler_balance, loop_closure}); }
};

/// Evaluates each block equation separately from its ingredients (not via F).
BlockResiduals block_residuals(const CoupledSystem& sys, const AlgebraicSystem& a, const AlgebraicState& x);

}  // namespace coupled
