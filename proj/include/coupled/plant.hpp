#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "coupled/coupling.hpp"
#include "coupled/reference.hpp"

namespace coupled {

/// Built-in joint impedance controller plus the truth-only corruption knobs.
/// Gains are per joint and shared by all robots; K_J comes from the models.
struct PlantConfig {
  VecX K_P;  // N*m/rad
  VecX K_D;  // N*m/(rad/s)
  VecX K_C;  // s
  std::vector<VecX> tau_fri;     // per robot overlay, N*m
  VecX coulomb_friction;         // per joint, N*m, applied to the measurement only
  double torque_noise_std = 0.0;  // N*m
  KinematicParams true_params;
  Vec6 w_ext = Vec6::Zero();     // world axes, constant
  CouplingOptions coupling;
  double internal_step = 1e-3;   // s

  static constexpr double kMaxStep = 0.005;

  static PlantConfig defaults(int n_robots, int n_joints);
  /// Throws ConfigError.
  void validate(int n_robots, int n_joints) const;
};

/// Iiwa command-filter constants, joints 1..7, in seconds.
VecX default_command_filter();

struct PlantState {
  std::vector<VecX> q_m;
  std::vector<VecX> q_sp;
  double t = 0.0;

  VecX stacked() const;  // [q_m (all); q_sp (all)]
  static PlantState from_stacked(const VecX& x, int n_robots, int n_joints, double t);
};

struct SensorFrame {
  double t = 0.0;
  std::vector<VecX> q_m;
  std::vector<VecX> qd_m;
  std::vector<VecX> tau_m;   // as reported, after friction and noise
  std::vector<VecX> q_link;  // q_m + K_J^-1 tau_m, from the reported torque
  // Motion fed to inverse dynamics while this frame was produced.
  std::vector<VecX> rbd_qd;
  std::vector<VecX> rbd_qdd;

  /// Max |q_link - q_m - K_J^-1 tau_m| over all joints.
  double consistency_error(const CoupledSystem& sys) const;
};

/// q_cmd = q_sp - K_C qd_sp.
VecX command_filter(const VecX& q_sp, const VecX& qd_sp, const VecX& K_C);

/// xd_dot for given algebraic solution. `u` and the result are stacked.
VecX ode_rhs(const CoupledSystem& sys, const PlantConfig& cfg, const PlantState& x, const VecX& u,
             const AlgebraicState& x_a, const std::vector<Mat6X>& jacobians);

/// xd_dot = A xd + B u + E xa + c, with c the friction overlay term.
struct OdeMatrices {
  MatX A, B, E;
  VecX c;
};
OdeMatrices ode_matrices(const CoupledSystem& sys, const PlantConfig& cfg, const std::vector<Mat6X>& jacobians);

struct PlantStepStats {
  double max_block_residual = 0.0;  // over every stage since construction
  double max_condition = 0.0;
  long stages = 0;
};

class Plant {
 public:
  Plant(CoupledSystem sys, PlantConfig cfg, PlantState initial, std::uint64_t seed);

  const CoupledSystem& system() const { return sys_; }
  const PlantConfig& config() const { return cfg_; }
  const PlantState& state() const { return state_; }
  const PlantStepStats& stats() const { return stats_; }

  /// Single RK4 step of size dt holding u. Rejects dt outside (0, 0.005].
  void step(const VecX& u, double dt);

  /// Advances by `period` in internal steps. Velocity and acceleration for
  /// inverse dynamics come from the previous call's measurement and stay
  /// fixed over the interval.
  SensorFrame advance(const VecX& u, double period);

  /// Snapshot of the current state under input u (u affects qd_m only).
  SensorFrame measure(const VecX& u);

  /// Uncorrupted algebraic solution at the current state.
  AlgebraicSolution solve_now() const;

  void set_rbd_motion(std::vector<VecX> qd, std::vector<VecX> qdd);
  const std::vector<VecX>& rbd_qd() const { return rbd_qd_; }
  const std::vector<VecX>& rbd_qdd() const { return rbd_qdd_; }

 private:
  AlgebraicSolution solve_at(const PlantState& x);
  VecX derivative(const PlantState& x, const VecX& u);

  CoupledSystem sys_;
  PlantConfig cfg_;
  PlantState state_;
  std::vector<VecX> rbd_qd_, rbd_qdd_;
  std::vector<VecX> next_qd_, next_qdd_;  // applied by the next advance
  PlantStepStats stats_;
  std::mt19937_64 rng_;
};

/// Motion handed to inverse dynamics: configuration q (motor side, or link
/// side with two passes) with the externally supplied velocity/acceleration.
std::vector<RobotMotion> rbd_motions(const std::vector<VecX>& q, const std::vector<VecX>& qd,
                                     const std::vector<VecX>& qdd);

/// One control tick of a logged run.
struct TickRecord {
  double t = 0.0;
  PlantState state;
  SensorFrame frame;
  std::vector<VecX> tau_true;
  std::vector<Vec6> lambda;
  std::vector<VecX> q_link_true;
  Pose tcp;   // robot 0 link-side TCP
  Vec6 gap = Vec6::Zero();  // first follower, true params
  VecX u;     // input applied over the following tick
};

/// Fills the state-derived fields of a record.
TickRecord make_record(const Plant& plant, const SensorFrame& frame, const VecX& u);

struct OpenLoopResult {
  std::vector<TickRecord> ticks;
};

/// Feeds u_ref to every robot without coordination. The plant starts on the
/// reference's first motor/set-point sample.
OpenLoopResult run_open_loop(const CoupledSystem& sys, const PlantConfig& cfg, const ReferenceTrajectory& ref,
                             std::uint64_t seed);

/// Plant initialized on reference sample 0 with matching inverse-dynamics inputs.
Plant make_plant(const CoupledSystem& sys, const PlantConfig& cfg, const ReferenceTrajectory& ref,
                 std::uint64_t seed);

}  // namespace coupled
